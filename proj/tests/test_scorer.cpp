#include <doctest.h>

#include "ridgealign/scorer.hpp"
#include "ridgealign/synthetic.hpp"

using namespace ridgealign;

TEST_CASE("normalized cross-correlation") {
  const Image a = ridge_image(16, 16, 1);
  const Mask full = full_mask(16, 16);
  CHECK(std::abs(ncc(a, a, full) - 1.0) < 1e-12);
  CHECK(std::abs(ncc(a, Image(1.0 - a), full) + 1.0) < 1e-12);

  Image x(2, 2), y(2, 2);
  x << 0, 1, 0, 1;
  y << 0, 1, 1, 0;
  CHECK(ncc(x, y, full_mask(2, 2)) == 0.0);

  bool degenerate = false;
  CHECK(ncc(Image(Image::Ones(4, 4)), a.block(0, 0, 4, 4).eval(), full_mask(4, 4), &degenerate) == 0.0);
  CHECK(degenerate);
  Mask one = Mask::Constant(4, 4, false);
  one(0, 0) = true;
  CHECK_THROWS_AS(ncc(x.replicate(2, 2).eval(), y.replicate(2, 2).eval(), one), MetricError);
}

TEST_CASE("error rates") {
  CHECK(eer({{0.9, 0.8, 0.7}, {0.3, 0.2, 0.1}}) == 0.0);
  CHECK(zero_fmr({{0.9, 0.8, 0.7}, {0.3, 0.2, 0.1}}) == 0.0);
  CHECK(eer({{0.2, 0.4, 0.6, 0.8}, {0.2, 0.4, 0.6, 0.8}}) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(zero_fmr({{0.9, 0.8, 0.3}, {0.7, 0.2, 0.1}}) == 1.0 / 3.0);
  CHECK_THROWS_AS(eer({{}, {0.1}}), MetricError);

  const auto det = det_curve({{0.9, 0.8, 0.3}, {0.7, 0.2, 0.1}});
  for (std::size_t k = 1; k < det.size(); ++k) {
    CHECK(det[k].first >= det[k - 1].first);
    if (det[k].first == det[k - 1].first) CHECK(det[k].second <= det[k - 1].second);
  }
}

TEST_CASE("rank-1 identification") {
  MatrixX<double> s(3, 3);
  s << 0.9, 0.1, 0.2, 0.3, 0.8, 0.1, 0.2, 0.1, 0.7;
  CHECK(rank1(s, {0, 1, 2}) == 1.0);
  CHECK(rank1(s, {1, 2, 1}) == 0.0);
  s(2, 1) = 0.95;
  CHECK(rank1(s, {0, 1, 2}) == 2.0 / 3.0);
}
