#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "ridgealign/image.hpp"

namespace ridgealign {

/// Raised when a score or metric is undefined for its input.
class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Normalized cross-correlation of `a` and `b` over `mask`. Returns 0 and
/// sets `degenerate` when either masked variance vanishes.
template <typename Scalar>
Scalar ncc(const ImageT<Scalar>& a, const ImageT<Scalar>& b, const Mask& mask, bool* degenerate = nullptr) {
  if (a.rows() != b.rows() || a.cols() != b.cols() || a.rows() != mask.rows() || a.cols() != mask.cols()) {
    throw DimensionError("ncc: image and mask sizes differ");
  }
  const Index n = mask.count();
  if (n < 2) throw MetricError("ncc: mask covers fewer than 2 pixels");
  Scalar sum_a = 0, sum_b = 0;
  for (Index c = 0; c < a.cols(); ++c)
    for (Index r = 0; r < a.rows(); ++r)
      if (mask(r, c)) {
        sum_a += a(r, c);
        sum_b += b(r, c);
      }
  const Scalar mean_a = sum_a / static_cast<Scalar>(n), mean_b = sum_b / static_cast<Scalar>(n);
  Scalar cross = 0, var_a = 0, var_b = 0;
  for (Index c = 0; c < a.cols(); ++c)
    for (Index r = 0; r < a.rows(); ++r)
      if (mask(r, c)) {
        const Scalar da = a(r, c) - mean_a, db = b(r, c) - mean_b;
        cross += da * db;
        var_a += da * da;
        var_b += db * db;
      }
  if (degenerate) *degenerate = var_a == 0 || var_b == 0;
  if (var_a == 0 || var_b == 0) return 0;
  return cross / std::sqrt(var_a * var_b);
}

struct ScoreSet {
  std::vector<double> genuine;
  std::vector<double> impostor;
};

struct OperatingPoint {
  double threshold;
  double fmr;
  double fnmr;
};

/// FMR(t) = share of impostors >= t, FNMR(t) = share of genuines < t, for t
/// over the distinct observed scores plus -inf and +inf, ascending.
std::vector<OperatingPoint> threshold_sweep(const ScoreSet& s);

/// Crossing of FMR and FNMR, linearly interpolated between sweep points.
double eer(const ScoreSet& s);
/// Smallest FNMR among thresholds with FMR = 0.
double zero_fmr(const ScoreSet& s);
/// (FMR, FNMR) pairs by ascending FMR.
std::vector<std::pair<double, double>> det_curve(const ScoreSet& s);

/// Share of queries whose genuine entry strictly beats every other entry of
/// its row.
double rank1(const MatrixX<double>& scores, const std::vector<Index>& genuine_column);

struct MetricReport {
  double eer = 0;
  double zero_fmr = 0;
  std::optional<double> rank1;
};

/// CSV `metric,value`.
void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report);
/// CSV `fmr,fnmr`.
void write_det_csv(const std::filesystem::path& path, const std::vector<std::pair<double, double>>& det);

}  // namespace ridgealign
