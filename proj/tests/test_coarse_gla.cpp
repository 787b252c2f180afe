#include <doctest.h>

#include <cmath>

#include "ridgealign/coarse_gla.hpp"

using namespace ridgealign;

namespace {

FeatureMap<double> random_map(Index h, Index w, Index c, unsigned seed) {
  std::srand(seed);
  return {h, w, 8, MatrixX<double>::Random(h * w, c)};
}

void zero(WeightArchive& w, const std::string& name) { w.at(name).data.setZero(); }

double max_gap(const MatrixX<double>& a, const MatrixX<double>& b) { return (a - b).cwiseAbs().maxCoeff(); }

}  // namespace

TEST_CASE("positional encoding") {
  const MatrixX<double> pe = positional_encoding(3, 4, 8);
  for (Index ch = 0; ch < 8; ch += 2) {
    CHECK(pe(0, ch) == 0.0);
    CHECK(pe(0, ch + 1) == 1.0);
  }
  const MatrixX<double> big = positional_encoding(6, 9, 8);
  for (Index r = 0; r < 3; ++r)
    for (Index c = 0; c < 4; ++c) CHECK(pe.row(r * 4 + c) == big.row(r * 9 + c));
  CHECK(std::abs(pe(1, 0) - pe(0, 0)) > 0.5);
  CHECK(pe(1, 0) == doctest::Approx(std::sin(1.0)));
  CHECK_THROWS_AS(positional_encoding(2, 2, 7), ConfigError);
}

TEST_CASE("initializer with a zero output projection is the encoded input") {
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 2);
  zero(w, "init.o");
  const FeatureMap<double> fa = random_map(8, 8, 8, 1), fb = random_map(8, 8, 8, 2);
  const auto [oa, ob] = initializer(fa, fb, w);
  CHECK(max_gap(oa.data, positional_encode(fa).data) < 1e-12);
  CHECK(max_gap(ob.data, positional_encode(fb).data) < 1e-12);
}

TEST_CASE("flow head") {
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 2);
  const FeatureMap<double> f = random_map(4, 6, 8, 3);
  zero(w, "gla0.flow.w");
  zero(w, "gla0.flow.b");
  const FlowMap zero_flow = flow_head(f, w, 0);
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 6; ++c) {
      CHECK(zero_flow.mean(r * 6 + c, 0) == static_cast<double>(c));
      CHECK(zero_flow.mean(r * 6 + c, 1) == static_cast<double>(r));
    }
  CHECK((zero_flow.sigma.array() == 1.0).all());

  w.at("gla0.flow.b").data << 3, 0, 0, 0;
  const FlowMap shifted = flow_head(f, w, 0);
  CHECK(max_gap(shifted.mean.col(0) - zero_flow.mean.col(0), MatrixX<double>::Constant(24, 1, 3.0)) < 1e-12);
  CHECK(shifted.mean.col(1) == zero_flow.mean.col(1));

  const FlowMap any = flow_head(f, WeightArchive::initialize(ModelConfig::toy(), 9), 1);
  CHECK((any.sigma.array() > 0).all());
}

TEST_CASE("local attention limits") {
  GlaConfig cfg = GlaConfig::from(ModelConfig::toy());
  cfg.block_side = 1;
  const Index h = 8, w = 8, c = 8;
  const FeatureMap<double> q = random_map(h, w, c, 4), kv = random_map(h, w, c, 5);
  AttentionWeights att{MatrixX<double>::Random(c, c), MatrixX<double>::Random(c, c), MatrixX<double>::Random(c, c),
                       MatrixX<double>::Identity(c, c)};
  FlowMap flow{h, w, MatrixX<double>(h * w, 2), MatrixX<double>::Constant(h * w, 2, 1e-7)};
  for (Index r = 0; r < h; ++r)
    for (Index x = 0; x < w; ++x) flow.mean.row(r * w + x) << static_cast<double>(x), static_cast<double>(r);

  // A vanishing window samples only the corresponding cell.
  const MatrixX<double> delta = local_cross_attention(q, kv, flow, cfg, att);
  CHECK(max_gap(delta, kv.data * att.v) < 1e-5);

  // Equal keys give the same message whatever the queries.
  flow.sigma.setConstant(2.0);
  att.k.setZero();
  const MatrixX<double> m1 = local_cross_attention(q, kv, flow, cfg, att);
  const MatrixX<double> m2 = local_cross_attention(random_map(h, w, c, 6), kv, flow, cfg, att);
  CHECK(max_gap(m1, m2) < 1e-12);
}

TEST_CASE("GLA block") {
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 2);
  const FeatureMap<double> fa = random_map(8, 8, 8, 7), fb = random_map(8, 8, 8, 8);

  const GlaOutput ab = gla_block(fa, fb, w, 0), ba = gla_block(fb, fa, w, 0);
  CHECK(ab.fa.height == 8);
  CHECK(ab.fa.channels() == 8);
  CHECK(ab.flow_a.mean.rows() == 64);
  CHECK(max_gap(ab.fa.data, ba.fb.data) < 1e-12);
  CHECK(max_gap(ab.fb.data, ba.fa.data) < 1e-12);

  for (const char* name : {"gla0.global.o", "gla0.local16.o", "gla0.local8.o", "gla0.ffn.w2"}) zero(w, name);
  const GlaOutput id = gla_block(fa, fb, w, 0);
  CHECK(id.fa.data == fa.data);
  CHECK(id.fb.data == fb.data);
}

TEST_CASE("coarse interaction") {
  ModelConfig cfg = ModelConfig::toy();
  const FeatureMap<double> fa = random_map(8, 8, 8, 9), fb = random_map(8, 8, 8, 10);
  const CoarseOutput two = coarse_interact(fa, fb, WeightArchive::initialize(cfg, 4));
  CHECK(two.flows_a.size() == 2);
  CHECK(two.flows_b.size() == 2);
  const CoarseOutput again = coarse_interact(fa, fb, WeightArchive::initialize(cfg, 4));
  CHECK(two.fa.data == again.fa.data);

  cfg.coarse_blocks = 0;
  const WeightArchive w0 = WeightArchive::initialize(cfg, 4);
  const CoarseOutput none = coarse_interact(fa, fb, w0);
  CHECK(none.flows_a.empty());
  CHECK(none.fa.data == initializer(fa, fb, w0).first.data);
}
