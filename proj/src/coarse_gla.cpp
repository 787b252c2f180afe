#include "ridgealign/coarse_gla.hpp"

#include <cmath>

namespace ridgealign {

namespace {

constexpr double kLogSigmaLimit = 10.0;

MapVar constant_map(ag::Graph& g, const FeatureMap<double>& f) {
  return {g.constant(f.data), f.height, f.width, f.stride};
}

MapVar pool(const MapVar& m, Index k) {
  return {ag::avgpool2d(m.v, m.height, m.width, k), m.height / k, m.width / k, m.stride * static_cast<int>(k)};
}

/// Bilinear 2x upsampling applied `times` times.
ag::Var upsample(ag::Var v, Index height, Index width, int times) {
  for (int i = 0; i < times; ++i) {
    v = ag::upsample2x(v, height, width);
    height *= 2;
    width *= 2;
  }
  return v;
}

ag::Var cross_attention(const MapVar& x, const MapVar& y, const AttentionVars& w, int heads) {
  ag::Var m = multihead_attention(ag::matmul(x.v, w.q), ag::matmul(y.v, w.k), ag::matmul(y.v, w.v), heads);
  return ag::matmul(m, w.o);
}

/// Own (x, y) coordinate of every cell, cells x 2.
ag::Mat cell_coordinates(Index height, Index width) {
  ag::Mat xy(height * width, 2);
  for (Index r = 0; r < height; ++r)
    for (Index c = 0; c < width; ++c) {
      xy(r * width + c, 0) = static_cast<double>(c);
      xy(r * width + c, 1) = static_cast<double>(r);
    }
  return xy;
}

/// Sample-window offsets in units of the window extent, in [-0.5, 0.5].
ag::Mat window_offsets(int sample_side) {
  ag::Mat t(static_cast<Index>(sample_side) * sample_side, 2);
  for (int ky = 0; ky < sample_side; ++ky)
    for (int kx = 0; kx < sample_side; ++kx) {
      const Index k = ky * sample_side + kx;
      t(k, 0) = sample_side > 1 ? static_cast<double>(kx) / (sample_side - 1) - 0.5 : 0.0;
      t(k, 1) = sample_side > 1 ? static_cast<double>(ky) / (sample_side - 1) - 0.5 : 0.0;
    }
  return t;
}

/// Halves the resolution of a stride-8 flow: means and sigmas are averaged
/// over 2x2 cells and re-expressed in stride-16 cell units.
FlowVars downsample_flow(const FlowVars& f) {
  FlowVars out;
  out.height = f.height / 2;
  out.width = f.width / 2;
  ag::Var mean = ag::scale(ag::avgpool2d(f.mean, f.height, f.width, 2), 0.5);
  out.mean = ag::add_constant(mean, ag::Mat::Constant(out.height * out.width, 2, -0.25));
  out.sigma = ag::scale(ag::avgpool2d(f.sigma, f.height, f.width, 2), 0.5);
  out.log_sigma = ag::log(out.sigma);
  return out;
}

MapVar gla_direction(Parameters& p, const MapVar& x, const MapVar& y, const FlowVars& flow, int block) {
  const ModelConfig& cfg = p.config();
  const std::string prefix = "gla" + std::to_string(block);

  // Global branch at stride 32.
  ag::Var global = cross_attention(pool(x, 4), pool(y, 4), attention_vars(p, prefix + ".global"), cfg.heads);
  global = upsample(global, x.height / 4, x.width / 4, 2);

  // Flow-guided local branch at stride 16; its blocks cover the same pixels.
  const AttentionVars w16 = attention_vars(p, prefix + ".local16");
  ag::Var local16 = local_cross_attention(pool(x, 2), pool(y, 2), downsample_flow(flow),
                                          std::max(1, cfg.block_side / 2), cfg.sample_side, cfg.span_sigmas,
                                          cfg.heads, w16);
  local16 = upsample(ag::matmul(local16, w16.o), x.height / 2, x.width / 2, 1);

  const AttentionVars w8 = attention_vars(p, prefix + ".local8");
  ag::Var local8 = ag::matmul(
      local_cross_attention(x, y, flow, cfg.block_side, cfg.sample_side, cfg.span_sigmas, cfg.heads, w8), w8.o);

  ag::Var fused = ag::concat_cols({x.v, global, local16, local8});
  fused = ag::layer_norm(fused, p(prefix + ".ffn.ln.g"), p(prefix + ".ffn.ln.b"));
  fused = ag::matmul(ag::silu(ag::matmul(fused, p(prefix + ".ffn.w1"))), p(prefix + ".ffn.w2"));
  return {ag::add(x.v, fused), x.height, x.width, x.stride};
}

}  // namespace

GlaConfig GlaConfig::from(const ModelConfig& config) {
  return {config.coarse_blocks, config.block_side, config.sample_side, config.span_sigmas, config.heads};
}

void GlaConfig::validate() const {
  if (blocks < 0) throw ConfigError("GLA block count must be >= 0");
  if (block_side < 1) throw ConfigError("S1 must be >= 1");
  if (sample_side < 1) throw ConfigError("S2 must be >= 1");
  if (!(span_sigmas > 0)) throw ConfigError("r must be > 0");
  if (heads < 1) throw ConfigError("heads must be >= 1");
}

MatrixX<double> positional_encoding(Index height, Index width, Index channels) {
  if (channels % 2 != 0) {
    throw ConfigError("positional encoding needs an even channel count, got " + std::to_string(channels));
  }
  MatrixX<double> pe(height * width, channels);
  const double step = std::log(10000.0) * 4.0 / static_cast<double>(channels);
  for (Index r = 0; r < height; ++r) {
    for (Index c = 0; c < width; ++c) {
      for (Index pair = 0; pair < channels / 2; ++pair) {
        const double pos = pair % 2 == 0 ? static_cast<double>(c) : static_cast<double>(r);
        const double freq = std::exp(-static_cast<double>(pair / 2) * step);
        pe(r * width + c, 2 * pair) = std::sin(pos * freq);
        pe(r * width + c, 2 * pair + 1) = std::cos(pos * freq);
      }
    }
  }
  return pe;
}

FeatureMap<double> positional_encode(const FeatureMap<double>& f) {
  FeatureMap<double> out = f;
  out.data += positional_encoding(f.height, f.width, f.channels());
  return out;
}

AttentionVars attention_vars(Parameters& p, const std::string& prefix) {
  return {p(prefix + ".q"), p(prefix + ".k"), p(prefix + ".v"), p(prefix + ".o")};
}

ag::Var multihead_attention(ag::Var q, ag::Var k, ag::Var v, int heads) {
  const Index c = q.cols();
  if (c % heads != 0) throw ConfigError("heads must divide the channel count");
  const Index d = c / heads;
  if (heads == 1) return ag::matmul(ag::softmax_rows(ag::matmul(q, ag::transpose(k))), v);
  std::vector<ag::Var> parts;
  for (int h = 0; h < heads; ++h) {
    ag::Var qh = ag::slice_cols(q, h * d, d);
    ag::Var kh = ag::slice_cols(k, h * d, d);
    ag::Var vh = ag::slice_cols(v, h * d, d);
    parts.push_back(ag::matmul(ag::softmax_rows(ag::matmul(qh, ag::transpose(kh))), vh));
  }
  return ag::concat_cols(parts);
}

FlowVars flow_head(Parameters& p, const MapVar& f, int block) {
  const std::string prefix = "gla" + std::to_string(block);
  const Index in = 4 * static_cast<Index>(p.config().heads);
  ag::Var raw = ag::add_row(ag::matmul(ag::slice_cols(f.v, 0, in), p(prefix + ".flow.w")), p(prefix + ".flow.b"));
  const double limit = 4.0 * static_cast<double>(std::max(f.height, f.width));
  FlowVars out;
  out.height = f.height;
  out.width = f.width;
  out.mean = ag::clamp(ag::add_constant(ag::slice_cols(raw, 0, 2), cell_coordinates(f.height, f.width)), -limit,
                       limit);
  out.log_sigma = ag::clamp(ag::slice_cols(raw, 2, 2), -kLogSigmaLimit, kLogSigmaLimit);
  out.sigma = ag::exp(out.log_sigma);
  return out;
}

ag::Var local_cross_attention(const MapVar& q_map, const MapVar& kv_map, const FlowVars& flow, int block_side,
                              int sample_side, double span_sigmas, int heads, const AttentionVars& w) {
  if (q_map.height % block_side != 0 || q_map.width % block_side != 0) {
    throw DimensionError("local attention: block side " + std::to_string(block_side) + " does not divide " +
                         std::to_string(q_map.height) + "x" + std::to_string(q_map.width));
  }
  if (flow.height != q_map.height || flow.width != q_map.width) throw DimensionError("local attention: flow size");
  ag::Graph& g = *q_map.v.graph;
  ag::Var q = ag::matmul(q_map.v, w.q);
  ag::Var k = ag::matmul(kv_map.v, w.k);
  ag::Var v = ag::matmul(kv_map.v, w.v);
  ag::Var offsets = g.constant(window_offsets(sample_side));
  const Index samples = static_cast<Index>(sample_side) * sample_side;
  const Index per_block = static_cast<Index>(block_side) * block_side;
  const Index block_rows = q_map.height / block_side, block_cols = q_map.width / block_side;

  std::vector<ag::Var> messages;
  std::vector<Index> restore(static_cast<std::size_t>(q_map.cells()));
  for (Index br = 0; br < block_rows; ++br) {
    for (Index bc = 0; bc < block_cols; ++bc) {
      std::vector<Index> cells;
      for (Index i = 0; i < block_side; ++i)
        for (Index j = 0; j < block_side; ++j) {
          const Index cell = (br * block_side + i) * q_map.width + bc * block_side + j;
          restore[cell] = static_cast<Index>(messages.size()) * per_block + static_cast<Index>(cells.size());
          cells.push_back(cell);
        }
      ag::Var center = ag::mean_rows(ag::gather_rows(flow.mean, cells));
      ag::Var extent = ag::scale(ag::mean_rows(ag::gather_rows(flow.sigma, cells)), span_sigmas);
      ag::Var pts = ag::add(ag::broadcast_rows(center, samples), ag::cmul(ag::broadcast_rows(extent, samples), offsets));
      ag::Var ks = ag::bilinear_sample(k, kv_map.height, kv_map.width, pts);
      ag::Var vs = ag::bilinear_sample(v, kv_map.height, kv_map.width, pts);
      messages.push_back(multihead_attention(ag::gather_rows(q, cells), ks, vs, heads));
    }
  }
  return ag::gather_rows(ag::concat_rows(messages), restore);
}

std::pair<MapVar, MapVar> initializer(Parameters& p, const MapVar& fa, const MapVar& fb) {
  if (fa.channels() != fb.channels()) throw DimensionError("initializer: channel counts differ");
  const AttentionVars w = attention_vars(p, "init");
  const int heads = p.config().heads;
  MapVar pa{ag::add_constant(fa.v, positional_encoding(fa.height, fa.width, fa.channels())), fa.height, fa.width,
            fa.stride};
  MapVar pb{ag::add_constant(fb.v, positional_encoding(fb.height, fb.width, fb.channels())), fb.height, fb.width,
            fb.stride};
  const MapVar da = pool(pa, 4), db = pool(pb, 4);
  ag::Var ma = upsample(cross_attention(da, db, w, heads), da.height, da.width, 2);
  ag::Var mb = upsample(cross_attention(db, da, w, heads), db.height, db.width, 2);
  return {MapVar{ag::add(pa.v, ma), pa.height, pa.width, pa.stride},
          MapVar{ag::add(pb.v, mb), pb.height, pb.width, pb.stride}};
}

GlaVars gla_block(Parameters& p, const MapVar& fa, const MapVar& fb, int block) {
  GlaVars out;
  out.flow_a = flow_head(p, fa, block);
  out.flow_b = flow_head(p, fb, block);
  out.fa = gla_direction(p, fa, fb, out.flow_a, block);
  out.fb = gla_direction(p, fb, fa, out.flow_b, block);
  return out;
}

CoarseVars coarse_interact(Parameters& p, const MapVar& fa0, const MapVar& fb0) {
  CoarseVars out;
  std::tie(out.fa, out.fb) = initializer(p, fa0, fb0);
  for (int i = 0; i < p.config().coarse_blocks; ++i) {
    GlaVars layer = gla_block(p, out.fa, out.fb, i);
    out.fa = layer.fa;
    out.fb = layer.fb;
    out.flows_a.push_back(layer.flow_a);
    out.flows_b.push_back(layer.flow_b);
  }
  return out;
}

// Value-level wrappers.

std::pair<FeatureMap<double>, FeatureMap<double>> initializer(const FeatureMap<double>& fa,
                                                              const FeatureMap<double>& fb,
                                                              const WeightArchive& weights) {
  ag::Graph g;
  Parameters p(g, weights, false);
  const auto [a, b] = initializer(p, constant_map(g, fa), constant_map(g, fb));
  return {a.value(), b.value()};
}

FlowMap flow_head(const FeatureMap<double>& f, const WeightArchive& weights, int block) {
  ag::Graph g;
  Parameters p(g, weights, false);
  return flow_head(p, constant_map(g, f), block).value();
}

MatrixX<double> local_cross_attention(const FeatureMap<double>& q_map, const FeatureMap<double>& kv_map,
                                      const FlowMap& flow, const GlaConfig& cfg, const AttentionWeights& w) {
  cfg.validate();
  ag::Graph g;
  FlowVars fv;
  fv.height = flow.height;
  fv.width = flow.width;
  fv.mean = g.constant(flow.mean);
  fv.sigma = g.constant(flow.sigma);
  fv.log_sigma = ag::log(fv.sigma);
  const AttentionVars wv{g.constant(w.q), g.constant(w.k), g.constant(w.v), g.constant(w.o)};
  return local_cross_attention(constant_map(g, q_map), constant_map(g, kv_map), fv, cfg.block_side,
                               cfg.sample_side, cfg.span_sigmas, cfg.heads, wv)
      .value();
}

GlaOutput gla_block(const FeatureMap<double>& fa, const FeatureMap<double>& fb, const WeightArchive& weights,
                    int block) {
  ag::Graph g;
  Parameters p(g, weights, false);
  const GlaVars v = gla_block(p, constant_map(g, fa), constant_map(g, fb), block);
  return {v.fa.value(), v.fb.value(), v.flow_a.value(), v.flow_b.value()};
}

CoarseOutput coarse_interact(const FeatureMap<double>& fa0, const FeatureMap<double>& fb0,
                             const WeightArchive& weights) {
  ag::Graph g;
  Parameters p(g, weights, false);
  const CoarseVars v = coarse_interact(p, constant_map(g, fa0), constant_map(g, fb0));
  CoarseOutput out{v.fa.value(), v.fb.value(), {}, {}};
  for (const FlowVars& f : v.flows_a) out.flows_a.push_back(f.value());
  for (const FlowVars& f : v.flows_b) out.flows_b.push_back(f.value());
  return out;
}

}  // namespace ridgealign
