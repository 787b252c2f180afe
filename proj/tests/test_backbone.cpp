#include <doctest.h>

#include "ridgealign/backbone.hpp"
#include "ridgealign/synthetic.hpp"

using namespace ridgealign;

namespace {

WeightArchive bias_free(const ModelConfig& cfg) {
  WeightArchive w = WeightArchive::initialize(cfg, 3);
  for (const auto& [name, t] : w.tensors()) {
    if (name.ends_with(".b")) w.at(name).data.setZero();
  }
  return w;
}

}  // namespace

TEST_CASE("padding to a multiple of 32") {
  const PaddedImage same = pad_to_multiple(Image::Ones(640, 480));
  CHECK(same.image.rows() == 640);
  CHECK(same.image.cols() == 480);
  CHECK(same.mask.all());

  const PaddedImage grown = pad_to_multiple(Image::Ones(650, 480));
  CHECK(grown.image.rows() == 672);
  CHECK(grown.image.cols() == 480);
  CHECK(grown.mask.topRows(650).all());
  CHECK(!grown.mask.bottomRows(22).any());
  CHECK(grown.image.bottomRows(22).isZero(0));

  const PaddedImage tiny = pad_to_multiple(Image::Ones(1, 1));
  CHECK(tiny.image.rows() == 32);
  CHECK(tiny.image.cols() == 32);
}

TEST_CASE("feature shapes") {
  const WeightArchive w = WeightArchive::initialize(ModelConfig{}, 1);
  const BackboneFeatures f = extract_features(ridge_image(64, 64, 1), w);
  CHECK(f.coarse.height == 8);
  CHECK(f.coarse.width == 8);
  CHECK(f.coarse.channels() == 64);
  CHECK(f.fine.height == 32);
  CHECK(f.fine.width == 32);
  CHECK(f.fine.channels() == w.config().c_fine);
}

TEST_CASE("zero image with zero biases gives zero features") {
  const BackboneFeatures f = extract_features(Image::Zero(64, 64), bias_free(ModelConfig::toy()));
  CHECK(f.coarse.data.isZero(0));
  CHECK(f.fine.data.isZero(0));
}

TEST_CASE("coarse features translate with the input") {
  const WeightArchive w = bias_free(ModelConfig::toy());
  Image base = Image::Zero(128, 128);
  base.block(40, 40, 40, 40) = ridge_image(40, 40, 5);
  Image shifted = Image::Zero(128, 128);
  shifted.block(40, 48, 40, 40) = base.block(40, 40, 40, 40);
  const BackboneFeatures fa = extract_features(base, w), fb = extract_features(shifted, w);
  double worst = 0;
  for (Index r = 0; r < 16; ++r)
    for (Index c = 0; c + 1 < 16; ++c)
      worst = std::max(worst, (fa.coarse.data.row(r * 16 + c) - fb.coarse.data.row(r * 16 + c + 1)).cwiseAbs().maxCoeff());
  CHECK(worst < 1e-9);
}

TEST_CASE("missing tensor is named") {
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 1);
  w.erase("fpn.out8.w");
  CHECK_THROWS_WITH_AS(extract_features(Image::Zero(32, 32), w), doctest::Contains("fpn.out8.w"), ArchiveError);
}
