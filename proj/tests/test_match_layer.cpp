#include <doctest.h>

#include <cmath>
#include <set>

#include "ridgealign/match_layer.hpp"

using namespace ridgealign;

TEST_CASE("correlation") {
  FeatureMap<double> fa{2, 1, 8, MatrixX<double>(2, 2)}, fb{2, 1, 8, MatrixX<double>(2, 2)};
  fa.data << 1, 0, 0, 1;
  fb.data << 1, 1, 0, 1;
  MatrixX<double> expected(2, 2);
  expected << 1, 0, 1, 1;
  CHECK(correlation(fa, fb, 1.0) == expected);
  CHECK(correlation(fa, fb, 2.0) == 2.0 * expected);
  CHECK(correlation(fa, fa, 1.0) == MatrixX<double>::Identity(2, 2));
}

TEST_CASE("dual softmax") {
  const MatrixX<double> uniform = dual_softmax(MatrixX<double>::Zero(4, 4));
  CHECK((uniform.array() - 1.0 / 16.0).abs().maxCoeff() < 1e-15);

  const MatrixX<double> sharp = dual_softmax(MatrixX<double>(MatrixX<double>::Identity(3, 3) * 1e3));
  CHECK((sharp - MatrixX<double>::Identity(3, 3)).cwiseAbs().maxCoeff() < 1e-12);

  std::srand(3);
  const MatrixX<double> c = MatrixX<double>::Random(3, 4) * 3.0;
  const MatrixX<double> p = dual_softmax(c);
  for (Index i = 0; i < 3; ++i)
    for (Index j = 0; j < 4; ++j) {
      double rs = 0, cs = 0;
      for (Index k = 0; k < 4; ++k) rs += std::exp(c(i, k));
      for (Index k = 0; k < 3; ++k) cs += std::exp(c(k, j));
      CHECK(std::abs(p(i, j) - std::exp(c(i, j)) / rs * std::exp(c(i, j)) / cs) < 1e-12);
    }
}

TEST_CASE("mutual nearest neighbors") {
  const MatchSet diag = mnn_filter(MatrixX<double>::Identity(4, 4) * 0.9, 0.2);
  REQUIRE(diag.pairs.size() == 4);
  for (const CoarseMatch& m : diag.pairs) CHECK(m.i == m.j);

  CHECK(mnn_filter(MatrixX<double>::Constant(3, 3, 1.0 / 9.0), 0.2).pairs.empty());

  std::srand(11);
  for (int trial = 0; trial < 20; ++trial) {
    const MatrixX<double> p = (MatrixX<double>::Random(7, 9).array() + 1.0) / 2.0;
    std::set<std::pair<Index, Index>> expected, actual;
    for (Index i = 0; i < 7; ++i)
      for (Index j = 0; j < 9; ++j) {
        bool keep = p(i, j) >= 0.2;
        for (Index k = 0; k < 9; ++k) keep = keep && p(i, k) <= p(i, j);
        for (Index k = 0; k < 7; ++k) keep = keep && p(k, j) <= p(i, j);
        if (keep) expected.emplace(i, j);
      }
    for (const CoarseMatch& m : mnn_filter(p, 0.2).pairs) actual.emplace(m.i, m.j);
    CHECK(actual == expected);
  }
}
