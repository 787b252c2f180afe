#pragma once

#include <filesystem>
#include <stdexcept>

#include <Eigen/Dense>

#include "ridgealign/numkit.hpp"

namespace ridgealign {

/// Grayscale raster, rows = height, intensities in [0, 1].
template <typename Scalar>
using ImageT = Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using Image = ImageT<double>;

/// Binary foreground raster.
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Flattens an image into a (H*W) x 1 grid in raster order.
template <typename Scalar>
MatrixX<Scalar> image_to_grid(const ImageT<Scalar>& img) {
  MatrixX<Scalar> g(img.rows() * img.cols(), 1);
  for (Index r = 0; r < img.rows(); ++r)
    for (Index c = 0; c < img.cols(); ++c) g(r * img.cols() + c, 0) = img(r, c);
  return g;
}

inline Mask full_mask(Index height, Index width) { return Mask::Constant(height, width, true); }

/// Binary PGM (P5), 8- or 16-bit. Values are scaled to [0, 1].
Image read_pgm(const std::filesystem::path& path);
/// Writes an 8-bit binary PGM; values are clamped to [0, 1].
void write_pgm(const std::filesystem::path& path, const Image& img);

Mask read_mask_pgm(const std::filesystem::path& path);
void write_mask_pgm(const std::filesystem::path& path, const Mask& mask);

/// 8-bit RGB PNG; `rgb` channels in [0, 1].
void write_png(const std::filesystem::path& path, const Image& red, const Image& green, const Image& blue);

}  // namespace ridgealign
