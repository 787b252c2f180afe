#include <doctest.h>

#include <filesystem>

#include "ridgealign/fine_refine.hpp"
#include "ridgealign/match_layer.hpp"

using namespace ridgealign;

namespace {

// Toy weights whose attention rounds pass features through unchanged.
WeightArchive passthrough() {
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 1);
  w.at("fine0.self.o").data.setZero();
  w.at("fine0.cross.o").data.setZero();
  return w;
}

FeatureMap<double> blank(Index side) { return {side, side, 2, MatrixX<double>::Zero(side * side, 8)}; }

}  // namespace

TEST_CASE("lifting coarse cells to the fine grid") {
  MatchSet m;
  m.height_a = m.width_a = m.height_b = m.width_b = 8;
  m.pairs = {{0, 0, 1.0}, {2 * 8 + 3, 2 * 8 + 3, 0.5}};
  const std::vector<LiftedMatch> lifted = lift_to_fine(m);
  REQUIRE(lifted.size() == 2);
  CHECK(lifted[0].a == Eigen::Vector2d(1.5, 1.5));
  CHECK(lifted[1].a == Eigen::Vector2d(13.5, 9.5));
  CHECK(lifted[1].confidence == 0.5);
  CHECK(lift_to_fine(MatchSet{}).empty());
}

TEST_CASE("refinement of hand-built similarities") {
  const WeightArchive w = passthrough();
  const FineConfig cfg{3, 1};
  const std::vector<LiftedMatch> lifted{{Eigen::Vector2d(8, 8), Eigen::Vector2d(8, 8), 1.0}};

  FeatureMap<double> a = blank(16), b = blank(16);
  a.data.col(0).setConstant(100.0);
  b.data(8 * 16 + 8, 0) = 100.0;
  const RefinedMatch delta = refine(a, b, lifted, cfg, w).front();
  CHECK((delta.b - Eigen::Vector2d(8, 8)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK(delta.variance_xy.maxCoeff() < 1e-9);

  const RefinedMatch uniform = refine(blank(16), blank(16), lifted, cfg, w).front();
  CHECK((uniform.b - Eigen::Vector2d(8, 8)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(uniform.variance_xy.x() == doctest::Approx(2.0 / 3.0));
  CHECK(uniform.variance_xy.y() == doctest::Approx(2.0 / 3.0));

  FeatureMap<double> moved = blank(16);
  moved.data(8 * 16 + 9, 0) = 100.0;
  const RefinedMatch shifted = refine(a, moved, lifted, FineConfig{5, 1}, w).front();
  CHECK(std::abs(shifted.b.x() - 9.0) <= 0.1);
  CHECK(std::abs(shifted.b.y() - 8.0) <= 0.1);
}

TEST_CASE("window validation") {
  CHECK_THROWS_AS(FineConfig({4, 1}).validate(), ConfigError);
  CHECK_THROWS_AS(FineConfig({1, 1}).validate(), ConfigError);
  CHECK_NOTHROW(FineConfig({25, 1}).validate());
}

TEST_CASE("correspondence csv") {
  const std::filesystem::path path = std::filesystem::temp_directory_path() / "ridgealign-test-corr.csv";
  CorrespondenceSet set;
  set.pairs.push_back({1.25, 2.5, 3.125, 4.0625, 0.75, std::nullopt});
  set.pairs.push_back({100.1234567, 0, 0, 511.9999999, 1.0, std::nullopt});
  write_correspondences_csv(path, set);
  const CorrespondenceSet back = read_correspondences_csv(path);
  REQUIRE(back.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(std::abs(back.pairs[i].xa - set.pairs[i].xa) <= 1e-6);
    CHECK(std::abs(back.pairs[i].yb - set.pairs[i].yb) <= 1e-6);
    CHECK(std::abs(back.pairs[i].confidence - set.pairs[i].confidence) <= 1e-6);
  }
  std::filesystem::remove(path);
}
