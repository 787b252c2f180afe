#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "ridgealign/fine_refine.hpp"
#include "ridgealign/image.hpp"

namespace ridgealign {

class SingularSystemError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// N x 2 point list, (x, y) per row, pixels.
using PointList = Eigen::Matrix<double, Eigen::Dynamic, 2>;

/// Regularized thin-plate spline f: R^2 -> R^2,
/// f(x) = A [1, x, y] + sum_i w_i U(|x - x_i|) with U(r) = r^2 log r^2.
struct TpsModel {
  PointList control;
  Eigen::Matrix<double, Eigen::Dynamic, 2> kernel;  // w_i per axis
  Eigen::Matrix<double, 3, 2> affine;               // rows: 1, x, y
  double lambda = 0;

  Eigen::Vector2d operator()(const Eigen::Vector2d& x) const;
};

/// Dense backward displacement: target = source + (dx, dy).
template <typename Scalar>
struct DeformationFieldT {
  ImageT<Scalar> dx;
  ImageT<Scalar> dy;

  DeformationFieldT() = default;
  DeformationFieldT(Index height, Index width)
      : dx(ImageT<Scalar>::Zero(height, width)), dy(ImageT<Scalar>::Zero(height, width)) {}

  Index height() const { return dx.rows(); }
  Index width() const { return dx.cols(); }
};
using DeformationField = DeformationFieldT<double>;

/// Solves [[K + lambda I, P], [P^T, 0]] per axis. Throws SingularSystemError
/// for degenerate control points and DimensionError for length mismatch.
TpsModel tps_fit(const PointList& src, const PointList& dst, double lambda);

/// f(x) - x on every pixel of an H x W grid.
DeformationField tps_evaluate(const TpsModel& model, Index height, Index width);

/// Bilinear sample of both components at (x, y), coordinates clamped to the grid.
Eigen::Vector2d sample_field(const DeformationField& d, double x, double y);

/// D(x) = Dc(x + Df(x)) + Df(x).
DeformationField compose(const DeformationField& dc, const DeformationField& df);

/// out(x) = img(x + d(x)), bilinear; samples outside the image read 0.
Image warp_image(const Image& img, const DeformationField& d);
/// Nearest-neighbor variant for masks; samples outside read false.
Mask warp_mask(const Mask& mask, const DeformationField& d);

/// Pairs (p, p + D(p)) for stride-g grid points p at cell centers with p in
/// mA and p + D(p) inside warp_mask(mA, D) & mB.
CorrespondenceSet build_gt(const DeformationField& d, const Mask& mask_a, const Mask& mask_b, int stride);

/// Point pairs of a correspondence set as N x 2 lists.
PointList points_a(const CorrespondenceSet& set);
PointList points_b(const CorrespondenceSet& set);

/// "DFL1", u32 LE height and width, then row-major float32 (dx, dy).
void write_field(const std::filesystem::path& path, const DeformationField& d);
DeformationField read_field(const std::filesystem::path& path);

/// A training pair with its ground-truth correspondences (A pixels -> B pixels).
struct ImagePair {
  Image a, b;
  Mask mask_a, mask_b;
  CorrespondenceSet gt;
};

/// Rotates B about its center by `degrees`, then translates by (tx, ty).
ImagePair augment_rigid(const ImagePair& pair, double degrees, double tx, double ty);
/// Draws the angle from [-30, 30] degrees and the shift from [-32, 32] px.
ImagePair augment_rigid(const ImagePair& pair, std::uint64_t seed);
ImagePair augment_swap(const ImagePair& pair);

struct Rect {
  Index x0 = 0, y0 = 0, width = 0, height = 0;

  bool contains(double x, double y) const {
    return x >= static_cast<double>(x0) && x < static_cast<double>(x0 + width) && y >= static_cast<double>(y0) &&
           y < static_cast<double>(y0 + height);
  }
};

/// Zeroes 1 to 3 rectangles (each at most 20% of the area) in B and drops
/// pairs whose B endpoint falls inside one. Drawn rectangles go to `rects`.
ImagePair augment_occlude(const ImagePair& pair, std::uint64_t seed, std::vector<Rect>* rects = nullptr);

}  // namespace ridgealign
