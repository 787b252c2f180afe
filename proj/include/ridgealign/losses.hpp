#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ridgealign/coarse_gla.hpp"
#include "ridgealign/fine_refine.hpp"
#include "ridgealign/image.hpp"
#include "ridgealign/warpfield.hpp"

namespace ridgealign {

struct GtPair {
  Index i;  // A coarse cell
  Index j;  // B coarse cell
  /// Exact B point in pixels, shifted by the offset between the A point and
  /// its cell center so that it matches the refined A location.
  Eigen::Vector2d target_b;
};

/// Coarse supervision, fine targets and per-cell flow targets for one pair.
struct GtMatches {
  Index height_a = 0, width_a = 0;
  Index height_b = 0, width_b = 0;
  std::vector<GtPair> pairs;
  /// Target (x, y) in B cell units per A cell, and validity; likewise B -> A.
  MatrixX<double> flow_a, flow_b;
  std::vector<bool> valid_a, valid_b;

  bool empty() const { return pairs.empty(); }
};

/// Snaps pixel correspondences onto the stride-8 grids. Collisions on either
/// side keep the point nearest its cell center, ties to the smaller index.
GtMatches quantize_gt(const CorrespondenceSet& corr, Index height_a, Index width_a, Index height_b, Index width_b);

/// A loss value together with its degenerate-input flag.
struct LossValue {
  double value = 0;
  bool warning = false;
};

/// -mean log P(i, j) over GT pairs.
LossValue coarse_loss(const MatrixX<double>& p, const GtMatches& gt);

struct FinePrediction {
  Eigen::Vector2d predicted;  // fine-cell coordinates
  Eigen::Vector2d target;
  double variance = 1;
};

/// True when the target lies outside the w x w window centered on the prediction.
bool fine_gated(const Eigen::Vector2d& predicted, const Eigen::Vector2d& target, int window);

/// mean of |pred - target| / variance over pairs inside their window.
LossValue fine_loss(const std::vector<FinePrediction>& pred, int window);

inline const double kLog2Pi = std::log(2.0 * std::numbers::pi);

/// Expanded per-cell Gaussian negative log-likelihood.
double flow_nll(const Eigen::Vector2d& mean, const Eigen::Vector2d& sigma, const Eigen::Vector2d& target);
/// Same quantity through the bivariate normal density.
double flow_nll_density(const Eigen::Vector2d& mean, const Eigen::Vector2d& sigma, const Eigen::Vector2d& target);

/// Average over valid cells of one flow map.
LossValue flow_loss(const FlowMap& flow, const MatrixX<double>& target, const std::vector<bool>& valid);
/// Sum over layers and both directions.
LossValue flow_loss(const std::vector<FlowMap>& flows_a, const std::vector<FlowMap>& flows_b, const GtMatches& gt);

struct LossReport {
  double coarse = 0, fine = 0, flow = 0, total = 0;
  double alpha = 0.25;
  bool coarse_warning = false, fine_warning = false, flow_warning = false;
};

LossReport total_loss(const LossValue& coarse, const LossValue& fine, const LossValue& flow, double alpha);

/// Per-pair state of the fine term that is held fixed under differentiation.
struct FineFreeze {
  std::vector<double> weight;  // 1 / variance
  std::vector<bool> keep;      // inside the window
};

struct LossGraph {
  ag::Var total, coarse, fine, flow;
  LossReport report;
  FineFreeze freeze;
};

/// Lower bound applied to the variance in the fine weight.
inline constexpr double kVarianceFloor = 1e-2;

/// One training example: padded images plus quantized supervision.
struct TrainingExample {
  Image a, b;
  GtMatches gt;
};

TrainingExample make_training_example(const ImagePair& pair);

/// Builds the full forward graph and the weighted loss. When `frozen` is
/// given, its weights and gate decisions replace the computed ones.
LossGraph build_loss(Parameters& p, const TrainingExample& ex, const FineFreeze* frozen = nullptr);

/// Loss of the example under `weights`, without gradients.
LossReport evaluate_loss(const WeightArchive& weights, const TrainingExample& ex);

struct GradCheckOptions {
  double epsilon = 1e-5;
  int samples_per_tensor = 3;
  int min_samples = 200;
  /// Denominator floor of the relative error.
  double floor = 1e-3;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string tensor;
  Index index;
  double analytic, numeric, relative_error;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_relative_error = 0;
  std::string worst_tensor;
  std::size_t tensors_covered = 0;
};

/// Central differences of the total loss against the analytic gradient on a
/// random sample of parameters spanning every tensor.
GradCheckReport grad_check(const WeightArchive& weights, const TrainingExample& ex, const GradCheckOptions& opt = {});

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int step, const std::string& what) : std::runtime_error(what), step_(step) {}
  int step() const { return step_; }

 private:
  int step_;
};

struct TrainStep {
  int step;
  LossReport loss;
};

enum class StepRule {
  kPlain,
  /// Each tensor moves by lr * g / rms(g).
  kTensorNormalized,
};

struct TrainOptions {
  int steps = 200;
  double lr = 0.001;
  StepRule rule = StepRule::kPlain;
};

/// Plain gradient descent on `weights` (modified in place). The trace holds
/// the loss before each update. Throws DivergenceError on a non-finite loss.
std::vector<TrainStep> train_toy(WeightArchive& weights, const TrainingExample& ex, int steps, double lr,
                                 const std::function<void(const TrainStep&)>& on_step = {});
/// Visits `examples` in turn, one per step.
std::vector<TrainStep> train_toy(WeightArchive& weights, const std::vector<TrainingExample>& examples,
                                 const TrainOptions& opt, const std::function<void(const TrainStep&)>& on_step = {});

/// CSV `step,L_c,L_f,L_flow,L_total`.
void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<TrainStep>& trace);

}  // namespace ridgealign
