#include "ridgealign/warpfield.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <random>

namespace ridgealign {

namespace {

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

/// Bilinear read with coordinates clamped to the raster.
double sample_clamped(const Image& img, double x, double y) {
  const Index h = img.rows(), w = img.cols();
  const double cx = std::clamp(x, 0.0, static_cast<double>(w - 1));
  const double cy = std::clamp(y, 0.0, static_cast<double>(h - 1));
  const Index x0 = static_cast<Index>(std::floor(cx)), y0 = static_cast<Index>(std::floor(cy));
  const Index x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
  const double tx = cx - static_cast<double>(x0), ty = cy - static_cast<double>(y0);
  return (1 - ty) * ((1 - tx) * img(y0, x0) + tx * img(y0, x1)) + ty * ((1 - tx) * img(y1, x0) + tx * img(y1, x1));
}

bool in_raster(double x, double y, Index height, Index width) {
  return x >= -0.5 && y >= -0.5 && x <= static_cast<double>(width) - 0.5 && y <= static_cast<double>(height) - 0.5;
}

void check_same_dims(const DeformationField& a, Index height, Index width, const char* what) {
  if (a.height() != height || a.width() != width) {
    throw DimensionError(std::string(what) + ": field is " + std::to_string(a.height()) + "x" +
                         std::to_string(a.width()) + ", expected " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
}

}  // namespace

Eigen::Vector2d TpsModel::operator()(const Eigen::Vector2d& x) const {
  Eigen::Vector2d out = affine.row(0).transpose() + affine.row(1).transpose() * x.x() + affine.row(2).transpose() * x.y();
  for (Index i = 0; i < control.rows(); ++i) {
    const double r2 = (x - control.row(i).transpose()).squaredNorm();
    out += kernel.row(i).transpose() * tps_kernel(r2);
  }
  return out;
}

TpsModel tps_fit(const PointList& src, const PointList& dst, double lambda) {
  if (src.rows() != dst.rows()) {
    throw DimensionError("tps_fit: " + std::to_string(src.rows()) + " source and " + std::to_string(dst.rows()) +
                         " target points");
  }
  if (lambda < 0) throw ConfigError("tps_fit: lambda must be >= 0");
  const Index n = src.rows();
  if (n < 3) throw SingularSystemError("tps_fit: at least 3 control points are required");

  // Solve in centered, unit-scale coordinates. With scale s the kernel gains
  // s^2 and an r^2 log s^2 term that the side conditions map onto the
  // constant affine term, so the pixel-unit spline is recovered exactly with
  // lambda' = s^2 lambda.
  const Eigen::RowVector2d centroid = src.colwise().mean();
  const PointList centered = src.rowwise() - centroid;
  const double extent = centered.cwiseAbs().maxCoeff();
  const double s = extent > 0.0 ? 1.0 / extent : 1.0;
  const PointList unit = centered * s;

  const Index m = n + 3;
  MatrixX<double> a = MatrixX<double>::Zero(m, m);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < n; ++j) a(i, j) = tps_kernel((unit.row(i) - unit.row(j)).squaredNorm());
    a(i, i) += s * s * lambda;
    a(i, n) = a(n, i) = 1.0;
    a(i, n + 1) = a(n + 1, i) = unit(i, 0);
    a(i, n + 2) = a(n + 2, i) = unit(i, 1);
  }
  MatrixX<double> rhs = MatrixX<double>::Zero(m, 2);
  rhs.topRows(n) = dst;

  Eigen::FullPivLU<MatrixX<double>> lu(a);
  if (!lu.isInvertible()) throw SingularSystemError("tps_fit: control points are collinear or repeated");
  MatrixX<double> sol = lu.solve(rhs);
  for (int iter = 0; iter < 2; ++iter) sol += lu.solve(rhs - a * sol);
  if (!sol.allFinite()) throw SingularSystemError("tps_fit: solve produced non-finite weights");

  // Back to pixel units: U(s r) = s^2 U(r) + s^2 log(s^2) r^2, and
  // sum_j w_j r_j^2 is affine in x under the side conditions.
  TpsModel model;
  model.control = src;
  model.lambda = lambda;
  model.kernel = sol.topRows(n) * (s * s);
  const double shift = s * s * std::log(s * s);
  // sum_j w_j |x - x_j|^2 = |x|^2 sum w + sum w_j |x_j|^2 - 2 x . sum w_j x_j
  const Eigen::Matrix<double, Eigen::Dynamic, 2> w = sol.topRows(n);
  Eigen::RowVector2d const_term = Eigen::RowVector2d::Zero();
  Eigen::Matrix2d lin_term = Eigen::Matrix2d::Zero();  // rows: x, y of centered coordinates (pixels)
  for (Index j = 0; j < n; ++j) {
    const double norm2 = centered.row(j).squaredNorm();
    const_term += shift * norm2 * w.row(j);
    lin_term.row(0) += -2.0 * shift * centered(j, 0) * w.row(j);
    lin_term.row(1) += -2.0 * shift * centered(j, 1) * w.row(j);
  }
  // Affine in centered pixels: b0 + b1 * (x - cx) * s + b2 * (y - cy) * s.
  const Eigen::RowVector2d b0 = sol.row(n) + const_term;
  const Eigen::RowVector2d bx = sol.row(n + 1) * s + lin_term.row(0);
  const Eigen::RowVector2d by = sol.row(n + 2) * s + lin_term.row(1);
  model.affine.row(0) = b0 - centroid(0) * bx - centroid(1) * by;
  model.affine.row(1) = bx;
  model.affine.row(2) = by;
  return model;
}

DeformationField tps_evaluate(const TpsModel& model, Index height, Index width) {
  DeformationField d(height, width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const Eigen::Vector2d p(static_cast<double>(x), static_cast<double>(y));
      const Eigen::Vector2d f = model(p) - p;
      d.dx(y, x) = f.x();
      d.dy(y, x) = f.y();
    }
  }
  return d;
}

Eigen::Vector2d sample_field(const DeformationField& d, double x, double y) {
  return {sample_clamped(d.dx, x, y), sample_clamped(d.dy, x, y)};
}

DeformationField compose(const DeformationField& dc, const DeformationField& df) {
  check_same_dims(dc, df.height(), df.width(), "compose");
  DeformationField out(df.height(), df.width());
  for (Index y = 0; y < df.height(); ++y) {
    for (Index x = 0; x < df.width(); ++x) {
      const double fx = df.dx(y, x), fy = df.dy(y, x);
      const Eigen::Vector2d c = sample_field(dc, static_cast<double>(x) + fx, static_cast<double>(y) + fy);
      out.dx(y, x) = c.x() + fx;
      out.dy(y, x) = c.y() + fy;
    }
  }
  return out;
}

Image warp_image(const Image& img, const DeformationField& d) {
  check_same_dims(d, img.rows(), img.cols(), "warp_image");
  Image out(img.rows(), img.cols());
  for (Index y = 0; y < img.rows(); ++y) {
    for (Index x = 0; x < img.cols(); ++x) {
      const double sx = static_cast<double>(x) + d.dx(y, x), sy = static_cast<double>(y) + d.dy(y, x);
      out(y, x) = in_raster(sx, sy, img.rows(), img.cols()) ? sample_clamped(img, sx, sy) : 0.0;
    }
  }
  return out;
}

Mask warp_mask(const Mask& mask, const DeformationField& d) {
  check_same_dims(d, mask.rows(), mask.cols(), "warp_mask");
  Mask out(mask.rows(), mask.cols());
  for (Index y = 0; y < mask.rows(); ++y) {
    for (Index x = 0; x < mask.cols(); ++x) {
      const Index sx = static_cast<Index>(std::lround(static_cast<double>(x) + d.dx(y, x)));
      const Index sy = static_cast<Index>(std::lround(static_cast<double>(y) + d.dy(y, x)));
      out(y, x) = sx >= 0 && sy >= 0 && sx < mask.cols() && sy < mask.rows() && mask(sy, sx);
    }
  }
  return out;
}

CorrespondenceSet build_gt(const DeformationField& d, const Mask& mask_a, const Mask& mask_b, int stride) {
  if (stride < 1) throw ConfigError("build_gt: stride must be >= 1");
  check_same_dims(d, mask_a.rows(), mask_a.cols(), "build_gt");
  check_same_dims(d, mask_b.rows(), mask_b.cols(), "build_gt");
  const Mask overlap = warp_mask(mask_a, d) && mask_b;
  CorrespondenceSet out;
  const Index rows = d.height() / stride, cols = d.width() / stride;
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) {
      const double px = cell_center(c, stride), py = cell_center(r, stride);
      const Index ax = static_cast<Index>(std::lround(px)), ay = static_cast<Index>(std::lround(py));
      if (!mask_a(std::min(ay, d.height() - 1), std::min(ax, d.width() - 1))) continue;
      const Eigen::Vector2d disp = sample_field(d, px, py);
      const double qx = px + disp.x(), qy = py + disp.y();
      const Index bx = static_cast<Index>(std::lround(qx)), by = static_cast<Index>(std::lround(qy));
      if (bx < 0 || by < 0 || bx >= d.width() || by >= d.height() || !overlap(by, bx)) continue;
      out.pairs.push_back({px, py, qx, qy, 1.0, std::nullopt});
    }
  }
  return out;
}

PointList points_a(const CorrespondenceSet& set) {
  PointList p(static_cast<Index>(set.size()), 2);
  for (std::size_t i = 0; i < set.size(); ++i) p.row(static_cast<Index>(i)) << set.pairs[i].xa, set.pairs[i].ya;
  return p;
}

PointList points_b(const CorrespondenceSet& set) {
  PointList p(static_cast<Index>(set.size()), 2);
  for (std::size_t i = 0; i < set.size(); ++i) p.row(static_cast<Index>(i)) << set.pairs[i].xb, set.pairs[i].yb;
  return p;
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw IoError("DFL1: truncated header");
  return static_cast<std::uint32_t>(b[0]) | static_cast<std::uint32_t>(b[1]) << 8 |
         static_cast<std::uint32_t>(b[2]) << 16 | static_cast<std::uint32_t>(b[3]) << 24;
}

void put_f32(std::ostream& out, double v) { put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v))); }

}  // namespace

void write_field(const std::filesystem::path& path, const DeformationField& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write("DFL1", 4);
  put_u32(out, static_cast<std::uint32_t>(d.height()));
  put_u32(out, static_cast<std::uint32_t>(d.width()));
  for (Index y = 0; y < d.height(); ++y)
    for (Index x = 0; x < d.width(); ++x) {
      put_f32(out, d.dx(y, x));
      put_f32(out, d.dy(y, x));
    }
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

DeformationField read_field(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "DFL1", 4) != 0) {
    throw IoError("'" + path.string() + "' is not a DFL1 field");
  }
  const std::uint32_t h = get_u32(in), w = get_u32(in);
  DeformationField d(h, w);
  for (Index y = 0; y < d.height(); ++y)
    for (Index x = 0; x < d.width(); ++x) {
      d.dx(y, x) = std::bit_cast<float>(get_u32(in));
      d.dy(y, x) = std::bit_cast<float>(get_u32(in));
    }
  return d;
}

ImagePair augment_rigid(const ImagePair& pair, double degrees, double tx, double ty) {
  const double theta = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(theta), s = std::sin(theta);
  const double cx = (static_cast<double>(pair.b.cols()) - 1) / 2.0, cy = (static_cast<double>(pair.b.rows()) - 1) / 2.0;
  // Backward map of the output frame onto the old B frame, in displacement
  // form so a zero draw is exact.
  DeformationField back(pair.b.rows(), pair.b.cols());
  for (Index y = 0; y < pair.b.rows(); ++y) {
    for (Index x = 0; x < pair.b.cols(); ++x) {
      const double ux = static_cast<double>(x) - cx - tx, uy = static_cast<double>(y) - cy - ty;
      back.dx(y, x) = (c - 1) * ux + s * uy - tx;
      back.dy(y, x) = -s * ux + (c - 1) * uy - ty;
    }
  }
  ImagePair out = pair;
  out.b = warp_image(pair.b, back);
  out.mask_b = warp_mask(pair.mask_b, back);
  for (Correspondence& p : out.gt.pairs) {
    const double ux = p.xb - cx, uy = p.yb - cy;
    p.xb += (c - 1) * ux - s * uy + tx;
    p.yb += s * ux + (c - 1) * uy + ty;
  }
  return out;
}

ImagePair augment_rigid(const ImagePair& pair, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> angle(-30.0, 30.0), shift(-32.0, 32.0);
  const double degrees = angle(rng);
  const double tx = shift(rng);
  const double ty = shift(rng);
  return augment_rigid(pair, degrees, tx, ty);
}

ImagePair augment_swap(const ImagePair& pair) {
  ImagePair out{pair.b, pair.a, pair.mask_b, pair.mask_a, pair.gt};
  for (Correspondence& p : out.gt.pairs) {
    std::swap(p.xa, p.xb);
    std::swap(p.ya, p.yb);
  }
  return out;
}

ImagePair augment_occlude(const ImagePair& pair, std::uint64_t seed, std::vector<Rect>* rects) {
  std::mt19937_64 rng(seed);
  const Index h = pair.b.rows(), w = pair.b.cols();
  const int count = std::uniform_int_distribution<int>(1, 3)(rng);
  std::vector<Rect> drawn;
  for (int k = 0; k < count; ++k) {
    // Side fractions whose product stays within 20% of the area.
    const double fx = std::uniform_real_distribution<double>(0.1, 0.45)(rng);
    const double fy = std::uniform_real_distribution<double>(0.1, 0.2 / fx)(rng);
    Rect r;
    r.width = std::max<Index>(1, static_cast<Index>(fx * static_cast<double>(w)));
    r.height = std::max<Index>(1, std::min(h, static_cast<Index>(std::min(fy, 1.0) * static_cast<double>(h))));
    r.x0 = std::uniform_int_distribution<Index>(0, w - r.width)(rng);
    r.y0 = std::uniform_int_distribution<Index>(0, h - r.height)(rng);
    drawn.push_back(r);
  }
  ImagePair out = pair;
  for (const Rect& r : drawn) out.b.block(r.y0, r.x0, r.height, r.width).setZero();
  out.gt.pairs.clear();
  for (const Correspondence& p : pair.gt.pairs) {
    const bool hidden = std::any_of(drawn.begin(), drawn.end(), [&](const Rect& r) { return r.contains(p.xb, p.yb); });
    if (!hidden) out.gt.pairs.push_back(p);
  }
  if (rects) *rects = std::move(drawn);
  return out;
}

}  // namespace ridgealign
