#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace ridgealign {

using Index = Eigen::Index;

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Raised when operand shapes do not agree.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a configuration value violates its documented constraint.
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Dense row-major tensor of arbitrary rank.
///
/// Storage is flat and contiguous; `product(shape) == data.size()` always
/// holds. A tensor of rank >= 1 can be viewed as a matrix whose column count
/// is the last dimension and whose row count is the product of the others.
template <typename Scalar>
struct Tensor {
  std::vector<Index> shape;
  VectorX<Scalar> data;

  Tensor() = default;
  explicit Tensor(std::vector<Index> dims) : shape(std::move(dims)) {
    data = VectorX<Scalar>::Zero(element_count(shape));
  }
  Tensor(std::vector<Index> dims, VectorX<Scalar> values) : shape(std::move(dims)), data(std::move(values)) {
    if (element_count(shape) != data.size()) {
      throw DimensionError("tensor data length does not match shape");
    }
  }

  static Index element_count(const std::vector<Index>& dims) {
    return std::accumulate(dims.begin(), dims.end(), Index{1}, std::multiplies<>());
  }

  Index size() const { return data.size(); }
  Index matrix_cols() const { return shape.empty() ? 1 : shape.back(); }
  Index matrix_rows() const { return matrix_cols() == 0 ? 0 : size() / matrix_cols(); }

  MatrixX<Scalar> as_matrix() const {
    return Eigen::Map<const RowMatrixX<Scalar>>(data.data(), matrix_rows(), matrix_cols());
  }

  template <typename Derived>
  void assign_matrix(const Eigen::MatrixBase<Derived>& m) {
    if (m.rows() != matrix_rows() || m.cols() != matrix_cols()) {
      throw DimensionError("matrix does not fit tensor shape");
    }
    Eigen::Map<RowMatrixX<Scalar>>(data.data(), matrix_rows(), matrix_cols()) = m;
  }

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape, data.template cast<Other>());
  }
};

/// Multi-channel spatial grid. `data` holds one row per cell in raster order
/// (row `r * width + c`) and one column per channel.
template <typename Scalar>
struct FeatureMap {
  Index height = 0;
  Index width = 0;
  int stride = 1;
  MatrixX<Scalar> data;

  Index channels() const { return data.cols(); }
  Index cells() const { return height * width; }
};

namespace numkit {

/// Matrix product with the summation over the inner dimension carried out in
/// ascending order for every output element.
template <typename DA, typename DB>
MatrixX<typename DA::Scalar> matmul(const Eigen::MatrixBase<DA>& a, const Eigen::MatrixBase<DB>& b) {
  using Scalar = typename DA::Scalar;
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                         std::to_string(b.rows()) + " differ");
  }
  const MatrixX<Scalar> lhs = a;
  const MatrixX<Scalar> rhs = b;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(lhs.rows(), rhs.cols());
  const Index m = lhs.rows();
  for (Index j = 0; j < rhs.cols(); ++j) {
    Scalar* dst = out.col(j).data();
    for (Index k = 0; k < lhs.cols(); ++k) {
      const Scalar bkj = rhs(k, j);
      const Scalar* src = lhs.col(k).data();
      for (Index i = 0; i < m; ++i) dst[i] += src[i] * bkj;
    }
  }
  return out;
}

template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar peak = x.row(i).maxCoeff();
    Scalar total = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      out(i, j) = std::exp(x(i, j) - peak);
      total += out(i, j);
    }
    for (Index j = 0; j < x.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

/// Row softmax restricted to the columns flagged in `valid`; masked columns
/// receive exactly zero. A row with no valid column is all zero.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& x,
                                               const std::vector<bool>& valid) {
  using Scalar = typename Derived::Scalar;
  if (static_cast<Index>(valid.size()) != x.cols()) throw DimensionError("softmax_rows: mask length");
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    Scalar peak = -std::numeric_limits<Scalar>::infinity();
    for (Index j = 0; j < x.cols(); ++j)
      if (valid[j]) peak = std::max(peak, x(i, j));
    if (!std::isfinite(peak)) continue;
    Scalar total = 0;
    for (Index j = 0; j < x.cols(); ++j) {
      if (!valid[j]) continue;
      out(i, j) = std::exp(x(i, j) - peak);
      total += out(i, j);
    }
    for (Index j = 0; j < x.cols(); ++j) out(i, j) /= total;
  }
  return out;
}

/// Row-wise log-softmax, numerically stable for large logits.
template <typename Derived>
MatrixX<typename Derived::Scalar> log_softmax_rows(const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  MatrixX<Scalar> out(x.rows(), x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar peak = x.row(i).maxCoeff();
    Scalar total = 0;
    for (Index j = 0; j < x.cols(); ++j) total += std::exp(x(i, j) - peak);
    const Scalar shift = peak + std::log(total);
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - shift;
  }
  return out;
}

/// Interpolation stencil of one bilinear lookup: four texel rows and weights.
template <typename Scalar>
struct BilinearTap {
  Index rows[4];
  Scalar weights[4];
  // Partial derivatives of the sampled value's weights w.r.t. x and y, zero
  // where the coordinate was clamped.
  Scalar dweights_dx[4];
  Scalar dweights_dy[4];
};

template <typename Scalar>
BilinearTap<Scalar> bilinear_tap(Index height, Index width, Scalar x, Scalar y) {
  const Scalar max_x = static_cast<Scalar>(width - 1);
  const Scalar max_y = static_cast<Scalar>(height - 1);
  const bool clamp_x = !(x > 0 && x < max_x);
  const bool clamp_y = !(y > 0 && y < max_y);
  const Scalar cx = std::clamp(x, Scalar(0), max_x);
  const Scalar cy = std::clamp(y, Scalar(0), max_y);
  const Index x0 = static_cast<Index>(std::floor(cx));
  const Index y0 = static_cast<Index>(std::floor(cy));
  const Index x1 = std::min(x0 + 1, width - 1);
  const Index y1 = std::min(y0 + 1, height - 1);
  const Scalar tx = cx - static_cast<Scalar>(x0);
  const Scalar ty = cy - static_cast<Scalar>(y0);
  BilinearTap<Scalar> tap;
  tap.rows[0] = y0 * width + x0;
  tap.rows[1] = y0 * width + x1;
  tap.rows[2] = y1 * width + x0;
  tap.rows[3] = y1 * width + x1;
  tap.weights[0] = (1 - tx) * (1 - ty);
  tap.weights[1] = tx * (1 - ty);
  tap.weights[2] = (1 - tx) * ty;
  tap.weights[3] = tx * ty;
  const Scalar gx = clamp_x ? Scalar(0) : Scalar(1);
  const Scalar gy = clamp_y ? Scalar(0) : Scalar(1);
  tap.dweights_dx[0] = -(1 - ty) * gx;
  tap.dweights_dx[1] = (1 - ty) * gx;
  tap.dweights_dx[2] = -ty * gx;
  tap.dweights_dx[3] = ty * gx;
  tap.dweights_dy[0] = -(1 - tx) * gy;
  tap.dweights_dy[1] = -tx * gy;
  tap.dweights_dy[2] = (1 - tx) * gy;
  tap.dweights_dy[3] = tx * gy;
  return tap;
}

/// Samples a (height*width) x C grid at real-valued (x, y) points given as an
/// N x 2 matrix. Coordinates outside the grid clamp to the border.
template <typename DS, typename DP>
MatrixX<typename DS::Scalar> bilinear_sample(const Eigen::MatrixBase<DS>& src, Index height, Index width,
                                             const Eigen::MatrixBase<DP>& pts) {
  using Scalar = typename DS::Scalar;
  if (src.rows() != height * width) throw DimensionError("bilinear_sample: grid size");
  if (pts.cols() != 2) throw DimensionError("bilinear_sample: points must be N x 2");
  MatrixX<Scalar> out(pts.rows(), src.cols());
  for (Index n = 0; n < pts.rows(); ++n) {
    const auto tap = bilinear_tap<Scalar>(height, width, pts(n, 0), pts(n, 1));
    for (Index c = 0; c < src.cols(); ++c) {
      out(n, c) = tap.weights[0] * src(tap.rows[0], c) + tap.weights[1] * src(tap.rows[1], c) +
                  tap.weights[2] * src(tap.rows[2], c) + tap.weights[3] * src(tap.rows[3], c);
    }
  }
  return out;
}

template <typename Scalar>
struct ConvGeometry {
  Index in_height, in_width, kernel, stride, pad;
  Index out_height() const { return (in_height + 2 * pad - kernel) / stride + 1; }
  Index out_width() const { return (in_width + 2 * pad - kernel) / stride + 1; }
};

/// Unfolds k x k patches into rows. Column order is (ky, kx, channel), which
/// matches a kernel stored as [k, k, C_in, C_out] flattened row-major.
template <typename Derived>
MatrixX<typename Derived::Scalar> im2col(const Eigen::MatrixBase<Derived>& x, Index height, Index width,
                                         Index kernel, Index stride, Index pad) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != height * width) throw DimensionError("im2col: grid size");
  const ConvGeometry<Scalar> g{height, width, kernel, stride, pad};
  const Index oh = g.out_height(), ow = g.out_width(), ch = x.cols();
  MatrixX<Scalar> cols = MatrixX<Scalar>::Zero(oh * ow, kernel * kernel * ch);
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      const Index row = oy * ow + ox;
      for (Index ky = 0; ky < kernel; ++ky) {
        const Index iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= height) continue;
        for (Index kx = 0; kx < kernel; ++kx) {
          const Index ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= width) continue;
          const Index base = (ky * kernel + kx) * ch;
          for (Index c = 0; c < ch; ++c) cols(row, base + c) = x(iy * width + ix, c);
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatters patch rows back onto the grid, summing overlaps.
template <typename Derived>
MatrixX<typename Derived::Scalar> col2im(const Eigen::MatrixBase<Derived>& cols, Index height, Index width,
                                         Index channels, Index kernel, Index stride, Index pad) {
  using Scalar = typename Derived::Scalar;
  const ConvGeometry<Scalar> g{height, width, kernel, stride, pad};
  const Index oh = g.out_height(), ow = g.out_width();
  if (cols.rows() != oh * ow || cols.cols() != kernel * kernel * channels) throw DimensionError("col2im: shape");
  MatrixX<Scalar> x = MatrixX<Scalar>::Zero(height * width, channels);
  for (Index oy = 0; oy < oh; ++oy) {
    for (Index ox = 0; ox < ow; ++ox) {
      const Index row = oy * ow + ox;
      for (Index ky = 0; ky < kernel; ++ky) {
        const Index iy = oy * stride + ky - pad;
        if (iy < 0 || iy >= height) continue;
        for (Index kx = 0; kx < kernel; ++kx) {
          const Index ix = ox * stride + kx - pad;
          if (ix < 0 || ix >= width) continue;
          const Index base = (ky * kernel + kx) * channels;
          for (Index c = 0; c < channels; ++c) x(iy * width + ix, c) += cols(row, base + c);
        }
      }
    }
  }
  return x;
}

/// 2-D convolution (cross-correlation) with zero padding. `kernel` is
/// (k*k*C_in) x C_out in im2col column order.
template <typename DX, typename DK>
MatrixX<typename DX::Scalar> conv2d(const Eigen::MatrixBase<DX>& x, Index height, Index width,
                                    const Eigen::MatrixBase<DK>& kernel, Index k, Index stride, Index pad) {
  if (kernel.rows() != k * k * x.cols()) {
    throw DimensionError("conv2d: kernel has " + std::to_string(kernel.rows()) + " rows, expected " +
                         std::to_string(k * k * x.cols()));
  }
  return matmul(im2col(x, height, width, k, stride, pad), kernel);
}

/// Non-overlapping k x k mean pooling; height and width must be multiples of k.
template <typename Derived>
MatrixX<typename Derived::Scalar> avgpool2d(const Eigen::MatrixBase<Derived>& x, Index height, Index width,
                                            Index k) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != height * width || height % k != 0 || width % k != 0) {
    throw DimensionError("avgpool2d: grid " + std::to_string(height) + "x" + std::to_string(width) +
                         " not divisible by " + std::to_string(k));
  }
  const Index oh = height / k, ow = width / k;
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(oh * ow, x.cols());
  const Scalar inv = Scalar(1) / static_cast<Scalar>(k * k);
  for (Index oy = 0; oy < oh; ++oy)
    for (Index ox = 0; ox < ow; ++ox)
      for (Index dy = 0; dy < k; ++dy)
        for (Index dx = 0; dx < k; ++dx)
          out.row(oy * ow + ox) += x.row((oy * k + dy) * width + ox * k + dx);
  return out * inv;
}

/// Linear interpolation weights for 2x upsampling along one axis with
/// half-pixel centers: output o samples input at (o + 0.5) / 2 - 0.5, clamped.
struct UpsampleTap {
  Index lo, hi;
  double t;
};

inline UpsampleTap upsample_tap(Index out_index, Index in_size) {
  const double s = std::clamp((static_cast<double>(out_index) + 0.5) / 2.0 - 0.5, 0.0,
                              static_cast<double>(in_size - 1));
  const Index lo = static_cast<Index>(std::floor(s));
  return {lo, std::min(lo + 1, in_size - 1), s - static_cast<double>(lo)};
}

template <typename Derived>
MatrixX<typename Derived::Scalar> upsample2x(const Eigen::MatrixBase<Derived>& x, Index height, Index width) {
  using Scalar = typename Derived::Scalar;
  if (x.rows() != height * width) throw DimensionError("upsample2x: grid size");
  const Index oh = 2 * height, ow = 2 * width;
  MatrixX<Scalar> out(oh * ow, x.cols());
  for (Index oy = 0; oy < oh; ++oy) {
    const auto ty = upsample_tap(oy, height);
    for (Index ox = 0; ox < ow; ++ox) {
      const auto tx = upsample_tap(ox, width);
      const Scalar w00 = Scalar((1 - tx.t) * (1 - ty.t)), w01 = Scalar(tx.t * (1 - ty.t));
      const Scalar w10 = Scalar((1 - tx.t) * ty.t), w11 = Scalar(tx.t * ty.t);
      out.row(oy * ow + ox) = w00 * x.row(ty.lo * width + tx.lo) + w01 * x.row(ty.lo * width + tx.hi) +
                              w10 * x.row(ty.hi * width + tx.lo) + w11 * x.row(ty.hi * width + tx.hi);
    }
  }
  return out;
}

inline constexpr double kLayerNormEpsilon = 1e-6;

/// Normalizes every row (cell) over its channels, then applies per-channel
/// gain and bias.
template <typename DX, typename DG, typename DB>
MatrixX<typename DX::Scalar> layer_norm(const Eigen::MatrixBase<DX>& x, const Eigen::MatrixBase<DG>& gain,
                                        const Eigen::MatrixBase<DB>& bias) {
  using Scalar = typename DX::Scalar;
  if (gain.size() != x.cols() || bias.size() != x.cols()) throw DimensionError("layer_norm: gain/bias size");
  MatrixX<Scalar> out(x.rows(), x.cols());
  const Scalar n = static_cast<Scalar>(x.cols());
  for (Index i = 0; i < x.rows(); ++i) {
    const Scalar mean = x.row(i).sum() / n;
    const Scalar var = (x.row(i).array() - mean).square().sum() / n;
    const Scalar inv = Scalar(1) / std::sqrt(var + Scalar(kLayerNormEpsilon));
    for (Index j = 0; j < x.cols(); ++j) out(i, j) = (x(i, j) - mean) * inv * gain(j) + bias(j);
  }
  return out;
}

}  // namespace numkit
}  // namespace ridgealign
