#include "ridgealign/match_layer.hpp"

namespace ridgealign {

void MatchConfig::validate() const {
  if (!(tau > 0)) throw ConfigError("tau must be > 0");
  if (!(theta > 0 && theta < 1)) throw ConfigError("theta must lie in (0,1)");
}

MatchSet mnn_filter(const MatrixX<double>& p, double theta) {
  const Index n = p.rows(), m = p.cols();
  // First maximal index per row and per column (strict > keeps the smallest).
  std::vector<Index> row_best(static_cast<std::size_t>(n), -1), col_best(static_cast<std::size_t>(m), -1);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < m; ++j) {
      if (row_best[i] < 0 || p(i, j) > p(i, row_best[i])) row_best[i] = j;
      if (col_best[j] < 0 || p(i, j) > p(col_best[j], j)) col_best[j] = i;
    }
  }
  MatchSet out;
  for (Index i = 0; i < n; ++i) {
    const Index j = row_best[i];
    if (j >= 0 && col_best[j] == i && p(i, j) >= theta) out.pairs.push_back({i, j, p(i, j)});
  }
  return out;
}

ag::Var log_dual_softmax(ag::Var c) {
  return ag::add(ag::log_softmax_rows(c), ag::transpose(ag::log_softmax_rows(ag::transpose(c))));
}

ag::Var correlation(Parameters& p, const MapVar& fa, const MapVar& fb) {
  if (fa.channels() != fb.channels()) throw DimensionError("correlation: channel counts differ");
  return ag::mul_scalar(ag::matmul(fa.v, ag::transpose(fb.v)), p("match.tau"));
}

}  // namespace ridgealign
