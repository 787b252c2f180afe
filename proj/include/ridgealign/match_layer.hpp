#pragma once

#include <vector>

#include "ridgealign/parameters.hpp"

namespace ridgealign {

struct CoarseMatch {
  Index i;  // flat cell index in A's coarse grid
  Index j;  // flat cell index in B's coarse grid
  double confidence;

  bool operator==(const CoarseMatch&) const = default;
};

/// One-to-one coarse matches together with both grids' dimensions.
struct MatchSet {
  std::vector<CoarseMatch> pairs;
  Index height_a = 0, width_a = 0;
  Index height_b = 0, width_b = 0;
};

struct MatchConfig {
  double tau = 1.0;
  double theta = 0.2;

  void validate() const;
};

/// C[i, j] = tau * <fa_i, fb_j> over flattened cells.
template <typename Scalar>
MatrixX<Scalar> correlation(const FeatureMap<Scalar>& fa, const FeatureMap<Scalar>& fb, Scalar tau) {
  if (fa.channels() != fb.channels()) {
    throw DimensionError("correlation: channel counts " + std::to_string(fa.channels()) + " and " +
                         std::to_string(fb.channels()) + " differ");
  }
  return numkit::matmul(fa.data, fb.data.transpose()) * tau;
}

/// Elementwise product of the row-wise and column-wise softmax of C.
template <typename Derived>
MatrixX<typename Derived::Scalar> dual_softmax(const Eigen::MatrixBase<Derived>& c) {
  using Scalar = typename Derived::Scalar;
  const MatrixX<Scalar> rows = numkit::softmax_rows(c);
  const MatrixX<Scalar> cols = numkit::softmax_rows(c.transpose()).transpose();
  return rows.cwiseProduct(cols);
}

/// Keeps (i, j) iff P[i, j] is the maximum of its row and of its column and
/// is at least theta. Ties resolve to the smallest index.
MatchSet mnn_filter(const MatrixX<double>& p, double theta);

/// Log of the dual-softmax probabilities, computed stably in the graph.
ag::Var log_dual_softmax(ag::Var correlation);

/// Correlation node: tau * fa fb^T with tau read from the archive.
ag::Var correlation(Parameters& p, const MapVar& fa, const MapVar& fb);

}  // namespace ridgealign
