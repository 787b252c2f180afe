#include <doctest.h>

#include <cmath>

#include "ridgealign/losses.hpp"
#include "ridgealign/synthetic.hpp"

using namespace ridgealign;

TEST_CASE("ground-truth quantization") {
  CorrespondenceSet identity;
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 4; ++c) {
      const double x = cell_center(c, 8), y = cell_center(r, 8);
      identity.pairs.push_back({x, y, x, y, 1.0, std::nullopt});
    }
  const GtMatches gt = quantize_gt(identity, 4, 4, 4, 4);
  REQUIRE(gt.pairs.size() == 16);
  for (const GtPair& p : gt.pairs) CHECK(p.i == p.j);

  // Both A points land in B cell (1, 1); the one nearer that cell's center wins.
  CorrespondenceSet collide;
  collide.pairs.push_back({3.5, 3.5, 9.0, 9.0, 1.0, std::nullopt});
  collide.pairs.push_back({11.5, 3.5, 12.0, 13.0, 1.0, std::nullopt});
  const GtMatches one = quantize_gt(collide, 4, 4, 4, 4);
  REQUIRE(one.pairs.size() == 1);
  CHECK(one.pairs[0].i == 1);
  CHECK(one.pairs[0].j == 5);

  CHECK(quantize_gt(CorrespondenceSet{}, 4, 4, 4, 4).empty());
}

TEST_CASE("coarse loss") {
  GtMatches gt;
  gt.pairs = {{0, 0, {}}, {1, 1, {}}, {2, 2, {}}};
  CHECK(coarse_loss(MatrixX<double>::Identity(3, 3), gt).value == 0.0);
  CHECK(coarse_loss(MatrixX<double>::Identity(3, 3) * std::exp(-1.0), gt).value == doctest::Approx(1.0).epsilon(1e-14));
  GtMatches single;
  single.pairs = {{0, 1, {}}};
  MatrixX<double> p = MatrixX<double>::Zero(2, 2);
  p(0, 1) = 0.5;
  CHECK(coarse_loss(p, single).value == doctest::Approx(std::log(2.0)).epsilon(1e-14));
  CHECK(coarse_loss(p, GtMatches{}).warning);
}

TEST_CASE("fine loss") {
  const Eigen::Vector2d t(10, 10);
  CHECK(fine_loss({{t, t, 1.0}}, 25).value == 0.0);
  CHECK(fine_loss({{t + Eigen::Vector2d(3, 4), t, 1.0}}, 25).value == doctest::Approx(5.0));
  CHECK(fine_loss({{t + Eigen::Vector2d(3, 4), t, 4.0}}, 25).value == doctest::Approx(1.25));
  CHECK(fine_gated(t + Eigen::Vector2d(3, 0), t, 5));
  CHECK(!fine_gated(t + Eigen::Vector2d(2, 0), t, 5));
}

TEST_CASE("flow negative log-likelihood") {
  const Eigen::Vector2d u(1.5, -2.0);
  CHECK(std::abs(flow_nll(u, Eigen::Vector2d(1, 1), u) - 1.8378770664093453) < 1e-10);
  const double s = 0.3;
  CHECK(flow_nll(u, Eigen::Vector2d(s, s), u) == doctest::Approx(kLog2Pi + 2 * std::log(s)));
  const Eigen::Vector2d sigma(0.7, 2.5);
  CHECK(flow_nll(u, sigma, u + sigma) ==
        doctest::Approx(kLog2Pi + std::log(sigma.x()) + std::log(sigma.y()) + 1.0));
  CHECK(flow_nll(u, sigma, u + sigma) == doctest::Approx(flow_nll_density(u, sigma, u + sigma)).epsilon(1e-12));
}

TEST_CASE("total loss") {
  const LossReport r = total_loss({1.5, false}, {0.25, false}, {7.0, false}, 0.0);
  CHECK(r.total == 1.75);
  CHECK(total_loss({}, {}, {}, 0.25).total == 0.0);
}

TEST_CASE("training trace") {
  const TrainingExample ex = make_training_example(make_warped_pair(32, 32, 3, 3.0).pair);
  WeightArchive w1 = WeightArchive::initialize(ModelConfig::toy(), 1);
  const std::vector<TrainStep> frozen = train_toy(w1, ex, 3, 0.0);
  CHECK(frozen[0].loss.total == frozen[2].loss.total);

  WeightArchive w2 = WeightArchive::initialize(ModelConfig::toy(), 1), w3 = w2;
  const std::vector<TrainStep> t2 = train_toy(w2, ex, 5, 0.001), t3 = train_toy(w3, ex, 5, 0.001);
  for (std::size_t k = 0; k < t2.size(); ++k) CHECK(t2[k].loss.total == t3[k].loss.total);
  CHECK(t2.back().loss.total < t2.front().loss.total);
}
