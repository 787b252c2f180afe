#pragma once

#include <map>
#include <string>

#include "ridgealign/autograd.hpp"
#include "ridgealign/weights.hpp"

namespace ridgealign {

/// Binds archive tensors into a graph, once each, in matrix layout (last
/// dimension = columns). Trainable bindings become graph parameters whose
/// gradients can be read back after backward().
class Parameters {
 public:
  Parameters(ag::Graph& graph, const WeightArchive& archive, bool trainable)
      : graph_(graph), archive_(archive), trainable_(trainable) {}

  ag::Var operator()(const std::string& name) {
    auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    ag::Mat value = archive_.at(name).as_matrix();
    ag::Var v = trainable_ ? graph_.parameter(std::move(value)) : graph_.constant(std::move(value));
    bound_.emplace(name, v);
    return v;
  }

  ag::Graph& graph() { return graph_; }
  const ModelConfig& config() const { return archive_.config(); }
  const WeightArchive& archive() const { return archive_; }

  /// Gradients of every bound tensor, keyed by name, in matrix layout.
  std::map<std::string, ag::Mat> gradients() const {
    std::map<std::string, ag::Mat> out;
    for (const auto& [name, v] : bound_) out.emplace(name, graph_.grad(v));
    return out;
  }

 private:
  ag::Graph& graph_;
  const WeightArchive& archive_;
  bool trainable_;
  std::map<std::string, ag::Var> bound_;
};

/// A (height*width) x C graph node with its grid geometry.
struct MapVar {
  ag::Var v;
  Index height = 0;
  Index width = 0;
  int stride = 1;

  Index cells() const { return height * width; }
  Index channels() const { return v.cols(); }
  FeatureMap<double> value() const { return {height, width, stride, v.value()}; }
};

}  // namespace ridgealign
