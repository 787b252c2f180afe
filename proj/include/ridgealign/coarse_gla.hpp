#pragma once

#include <string>
#include <vector>

#include "ridgealign/parameters.hpp"

namespace ridgealign {

/// Per-cell Gaussian flow at stride 8: `mean` holds the predicted (x, y)
/// position in the other image's cell coordinates, `sigma` the strictly
/// positive standard deviations. Both are cells x 2 in raster order.
struct FlowMap {
  Index height = 0;
  Index width = 0;
  MatrixX<double> mean;
  MatrixX<double> sigma;
};

struct GlaConfig {
  int blocks = 4;         // N_c
  int block_side = 4;     // S1
  int sample_side = 8;    // S2
  double span_sigmas = 3; // r
  int heads = 4;

  static GlaConfig from(const ModelConfig& config);
  void validate() const;
};

/// Projection matrices of one attention branch (C x C each).
struct AttentionWeights {
  MatrixX<double> q, k, v, o;
};

/// Fixed 2-D sinusoidal encoding in absolute cell units. Channel 2p holds
/// sin and 2p+1 cos of pair p; pairs alternate between the x and y axes and
/// step down in frequency from 1 rad/cell. Throws ConfigError for odd C.
MatrixX<double> positional_encoding(Index height, Index width, Index channels);
FeatureMap<double> positional_encode(const FeatureMap<double>& f);

std::pair<FeatureMap<double>, FeatureMap<double>> initializer(const FeatureMap<double>& fa,
                                                              const FeatureMap<double>& fb,
                                                              const WeightArchive& weights);

/// Linear flow head of GLA block `block` applied to the first 4*heads channels.
FlowMap flow_head(const FeatureMap<double>& f, const WeightArchive& weights, int block);

/// Flow-guided blocked cross-attention message (before the output
/// projection). `q_map` is split into block_side^2 query blocks; each block
/// attends to sample_side^2 bilinear samples of K and V drawn from a window
/// of width r*sigma_x and height r*sigma_y centered on the block-mean flow.
MatrixX<double> local_cross_attention(const FeatureMap<double>& q_map, const FeatureMap<double>& kv_map,
                                      const FlowMap& flow, const GlaConfig& cfg, const AttentionWeights& w);

struct GlaOutput {
  FeatureMap<double> fa, fb;
  FlowMap flow_a, flow_b;
};

GlaOutput gla_block(const FeatureMap<double>& fa, const FeatureMap<double>& fb, const WeightArchive& weights,
                    int block);

struct CoarseOutput {
  FeatureMap<double> fa, fb;
  std::vector<FlowMap> flows_a, flows_b;
};

/// Initializer followed by the configured number of GLA blocks.
CoarseOutput coarse_interact(const FeatureMap<double>& fa0, const FeatureMap<double>& fb0,
                             const WeightArchive& weights);

// Graph-level building blocks shared with training.

struct FlowVars {
  ag::Var mean;
  ag::Var log_sigma;
  ag::Var sigma;
  Index height = 0;
  Index width = 0;

  FlowMap value() const { return {height, width, mean.value(), sigma.value()}; }
};

struct AttentionVars {
  ag::Var q, k, v, o;
};

AttentionVars attention_vars(Parameters& p, const std::string& prefix);

/// softmax(Q K^T) V per head, heads concatenated along channels.
ag::Var multihead_attention(ag::Var q, ag::Var k, ag::Var v, int heads);

FlowVars flow_head(Parameters& p, const MapVar& f, int block);

ag::Var local_cross_attention(const MapVar& q_map, const MapVar& kv_map, const FlowVars& flow, int block_side,
                              int sample_side, double span_sigmas, int heads, const AttentionVars& w);

std::pair<MapVar, MapVar> initializer(Parameters& p, const MapVar& fa, const MapVar& fb);

struct GlaVars {
  MapVar fa, fb;
  FlowVars flow_a, flow_b;
};

GlaVars gla_block(Parameters& p, const MapVar& fa, const MapVar& fb, int block);

struct CoarseVars {
  MapVar fa, fb;
  std::vector<FlowVars> flows_a, flows_b;
};

CoarseVars coarse_interact(Parameters& p, const MapVar& fa0, const MapVar& fb0);

}  // namespace ridgealign
