#include "ridgealign/losses.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>

#include "ridgealign/backbone.hpp"
#include "ridgealign/log.hpp"

namespace ridgealign {

namespace {

constexpr int kCoarseStride = 8;
constexpr int kFineStride = 2;

Index containing_cell(double pixel) { return static_cast<Index>(std::floor((pixel + 0.5) / kCoarseStride)); }

Eigen::Vector2d cell_center_xy(Index flat, Index width, int stride) {
  return {cell_center(flat % width, stride), cell_center(flat / width, stride)};
}

Eigen::Vector2d to_cells(const Eigen::Vector2d& px, int stride) {
  return {pixel_to_cell(px.x(), stride), pixel_to_cell(px.y(), stride)};
}

}  // namespace

GtMatches quantize_gt(const CorrespondenceSet& corr, Index height_a, Index width_a, Index height_b, Index width_b) {
  GtMatches gt;
  gt.height_a = height_a;
  gt.width_a = width_a;
  gt.height_b = height_b;
  gt.width_b = width_b;
  const Index na = height_a * width_a, nb = height_b * width_b;
  constexpr double kInf = std::numeric_limits<double>::infinity();

  struct Candidate {
    std::size_t k;
    double distance = kInf;
  };
  // A side: one point per A cell, nearest its center.
  std::vector<Candidate> best_a(static_cast<std::size_t>(na));
  std::vector<Index> cell_b(corr.size(), -1);
  for (std::size_t k = 0; k < corr.size(); ++k) {
    const Correspondence& c = corr.pairs[k];
    const Index ca = containing_cell(c.xa), ra = containing_cell(c.ya);
    const Index cb = containing_cell(c.xb), rb = containing_cell(c.yb);
    if (ca < 0 || ra < 0 || ca >= width_a || ra >= height_a) continue;
    if (cb < 0 || rb < 0 || cb >= width_b || rb >= height_b) continue;
    cell_b[k] = rb * width_b + cb;
    const Index i = ra * width_a + ca;
    const double d = (Eigen::Vector2d(c.xa, c.ya) - cell_center_xy(i, width_a, kCoarseStride)).norm();
    if (d < best_a[i].distance) best_a[i] = {k, d};
  }
  // B side: among surviving A cells, one per B cell.
  std::vector<Index> owner(static_cast<std::size_t>(nb), -1);
  std::vector<double> owner_distance(static_cast<std::size_t>(nb), kInf);
  for (Index i = 0; i < na; ++i) {
    if (best_a[i].distance == kInf) continue;
    const std::size_t k = best_a[i].k;
    const Index j = cell_b[k];
    const Correspondence& c = corr.pairs[k];
    const double d = (Eigen::Vector2d(c.xb, c.yb) - cell_center_xy(j, width_b, kCoarseStride)).norm();
    if (d < owner_distance[j]) {  // ascending i keeps the smaller index on ties
      owner[j] = i;
      owner_distance[j] = d;
    }
  }

  gt.flow_a = MatrixX<double>::Zero(na, 2);
  gt.flow_b = MatrixX<double>::Zero(nb, 2);
  gt.valid_a.assign(static_cast<std::size_t>(na), false);
  gt.valid_b.assign(static_cast<std::size_t>(nb), false);
  std::vector<Index> match_of(static_cast<std::size_t>(na), -1);
  for (Index j = 0; j < nb; ++j)
    if (owner[j] >= 0) match_of[owner[j]] = j;
  for (Index i = 0; i < na; ++i) {
    const Index j = match_of[i];
    if (j < 0) continue;
    const Correspondence& c = corr.pairs[best_a[i].k];
    const Eigen::Vector2d pa(c.xa, c.ya), pb(c.xb, c.yb);
    const Eigen::Vector2d target_b = pb + (cell_center_xy(i, width_a, kCoarseStride) - pa);
    const Eigen::Vector2d target_a = pa + (cell_center_xy(j, width_b, kCoarseStride) - pb);
    gt.pairs.push_back({i, j, target_b});
    gt.flow_a.row(i) = to_cells(target_b, kCoarseStride).transpose();
    gt.flow_b.row(j) = to_cells(target_a, kCoarseStride).transpose();
    gt.valid_a[i] = true;
    gt.valid_b[j] = true;
  }
  return gt;
}

LossValue coarse_loss(const MatrixX<double>& p, const GtMatches& gt) {
  if (gt.pairs.empty()) return {0.0, true};
  double total = 0.0;
  for (const GtPair& m : gt.pairs) total -= std::log(p(m.i, m.j));
  return {total / static_cast<double>(gt.pairs.size()), false};
}

bool fine_gated(const Eigen::Vector2d& predicted, const Eigen::Vector2d& target, int window) {
  return (target - predicted).cwiseAbs().maxCoeff() > window / 2.0;
}

LossValue fine_loss(const std::vector<FinePrediction>& pred, int window) {
  double total = 0.0;
  int kept = 0;
  for (const FinePrediction& f : pred) {
    if (fine_gated(f.predicted, f.target, window)) continue;
    total += (f.predicted - f.target).norm() / f.variance;
    ++kept;
  }
  if (kept == 0) return {0.0, true};
  return {total / kept, false};
}

double flow_nll(const Eigen::Vector2d& mean, const Eigen::Vector2d& sigma, const Eigen::Vector2d& target) {
  const Eigen::Vector2d z = (target - mean).cwiseQuotient(sigma);
  return kLog2Pi + std::log(sigma.x()) + std::log(sigma.y()) + 0.5 * z.squaredNorm();
}

double flow_nll_density(const Eigen::Vector2d& mean, const Eigen::Vector2d& sigma, const Eigen::Vector2d& target) {
  const Eigen::Vector2d z = (target - mean).cwiseQuotient(sigma);
  const double density = std::exp(-0.5 * z.squaredNorm()) / (2.0 * std::numbers::pi * sigma.x() * sigma.y());
  return -std::log(density);
}

LossValue flow_loss(const FlowMap& flow, const MatrixX<double>& target, const std::vector<bool>& valid) {
  double total = 0.0;
  int count = 0;
  for (Index c = 0; c < flow.mean.rows(); ++c) {
    if (!valid[c]) continue;
    total += flow_nll(flow.mean.row(c).transpose(), flow.sigma.row(c).transpose(), target.row(c).transpose());
    ++count;
  }
  if (count == 0) return {0.0, true};
  return {total / count, false};
}

LossValue flow_loss(const std::vector<FlowMap>& flows_a, const std::vector<FlowMap>& flows_b, const GtMatches& gt) {
  LossValue out;
  for (const FlowMap& f : flows_a) {
    const LossValue v = flow_loss(f, gt.flow_a, gt.valid_a);
    out.value += v.value;
    out.warning = out.warning || v.warning;
  }
  for (const FlowMap& f : flows_b) {
    const LossValue v = flow_loss(f, gt.flow_b, gt.valid_b);
    out.value += v.value;
    out.warning = out.warning || v.warning;
  }
  return out;
}

LossReport total_loss(const LossValue& coarse, const LossValue& fine, const LossValue& flow, double alpha) {
  LossReport r;
  r.coarse = coarse.value;
  r.fine = fine.value;
  r.flow = flow.value;
  r.alpha = alpha;
  r.total = coarse.value + fine.value + alpha * flow.value;
  r.coarse_warning = coarse.warning;
  r.fine_warning = fine.warning;
  r.flow_warning = flow.warning;
  return r;
}

TrainingExample make_training_example(const ImagePair& pair) {
  TrainingExample ex;
  ex.a = pad_to_multiple(pair.a).image;
  ex.b = pad_to_multiple(pair.b).image;
  ex.gt = quantize_gt(pair.gt, ex.a.rows() / kCoarseStride, ex.a.cols() / kCoarseStride, ex.b.rows() / kCoarseStride,
                      ex.b.cols() / kCoarseStride);
  return ex;
}

namespace {

ag::Var zero(ag::Graph& g) { return g.constant(ag::Mat::Zero(1, 1)); }

/// Flow term of one map; returns nullopt when no cell is valid.
std::optional<ag::Var> flow_term(ag::Graph& g, const FlowVars& f, const MatrixX<double>& target,
                                 const std::vector<bool>& valid) {
  const Index cells = f.mean.rows();
  Index count = 0;
  for (Index c = 0; c < cells; ++c) count += valid[c] ? 1 : 0;
  if (count == 0) return std::nullopt;
  ag::Mat weights = ag::Mat::Zero(cells, 2);
  for (Index c = 0; c < cells; ++c)
    if (valid[c]) weights.row(c).setConstant(1.0 / static_cast<double>(count));
  ag::Var z = ag::cmul(ag::sub(f.mean, g.constant(target)), ag::exp(ag::scale(f.log_sigma, -1.0)));
  ag::Var nll = ag::add(ag::weighted_sum(f.log_sigma, weights), ag::weighted_sum(ag::square(z), 0.5 * weights));
  return ag::add_constant(nll, ag::Mat::Constant(1, 1, kLog2Pi));
}

}  // namespace

LossGraph build_loss(Parameters& p, const TrainingExample& ex, const FineFreeze* frozen) {
  ag::Graph& g = p.graph();
  const ModelConfig& cfg = p.config();
  const GtMatches& gt = ex.gt;
  const BackboneVars fa = backbone_forward(p, ex.a);
  const BackboneVars fb = backbone_forward(p, ex.b);
  if (fa.coarse.height != gt.height_a || fa.coarse.width != gt.width_a || fb.coarse.height != gt.height_b ||
      fb.coarse.width != gt.width_b) {
    throw DimensionError("build_loss: ground truth grid does not match the feature maps");
  }
  const CoarseVars coarse = coarse_interact(p, fa.coarse, fb.coarse);

  LossGraph out;
  LossValue lc, lf, lflow;

  // Coarse term.
  if (gt.pairs.empty()) {
    out.coarse = zero(g);
    lc.warning = true;
  } else {
    std::vector<std::pair<Index, Index>> entries;
    for (const GtPair& m : gt.pairs) entries.emplace_back(m.i, m.j);
    ag::Var picked = ag::pick(log_dual_softmax(correlation(p, coarse.fa, coarse.fb)), entries);
    out.coarse = ag::weighted_sum(picked, ag::Mat::Constant(picked.rows(), 1, -1.0 / picked.rows()));
  }
  lc.value = out.coarse.scalar();

  // Fine term on the ground-truth coarse pairs.
  std::vector<LiftedMatch> lifted;
  std::vector<Eigen::Vector2d> targets;
  for (const GtPair& m : gt.pairs) {
    lifted.push_back({to_cells(cell_center_xy(m.i, gt.width_a, kCoarseStride), kFineStride),
                      to_cells(cell_center_xy(m.j, gt.width_b, kCoarseStride), kFineStride), 1.0});
    targets.push_back(to_cells(m.target_b, kFineStride));
  }
  const FineVars fine = refine(p, fa.fine, fb.fine, lifted, cfg.train_window, cfg.fine_rounds);
  if (frozen) {
    out.freeze = *frozen;
  } else {
    for (std::size_t k = 0; k < lifted.size(); ++k) {
      const Eigen::Vector2d pred = fine.expectation[k].value().row(0).transpose();
      out.freeze.weight.push_back(1.0 / std::max(fine.variance_xy[k].sum(), kVarianceFloor));
      out.freeze.keep.push_back(!fine_gated(pred, targets[k], cfg.train_window));
    }
  }
  std::vector<ag::Var> norms;
  std::vector<double> weights;
  for (std::size_t k = 0; k < lifted.size(); ++k) {
    if (!out.freeze.keep[k]) continue;
    norms.push_back(ag::row_norm(ag::add_constant(fine.expectation[k], -targets[k].transpose())));
    weights.push_back(out.freeze.weight[k]);
  }
  if (norms.empty()) {
    out.fine = zero(g);
    lf.warning = true;
  } else {
    ag::Mat w(static_cast<Index>(weights.size()), 1);
    for (std::size_t k = 0; k < weights.size(); ++k) w(static_cast<Index>(k), 0) = weights[k] / weights.size();
    out.fine = ag::weighted_sum(ag::concat_rows(norms), w);
  }
  lf.value = out.fine.scalar();

  // Flow term over every layer and both directions.
  std::vector<ag::Var> terms;
  auto add_terms = [&](const std::vector<FlowVars>& flows, const MatrixX<double>& target,
                       const std::vector<bool>& valid) {
    for (const FlowVars& f : flows) {
      if (auto t = flow_term(g, f, target, valid)) {
        terms.push_back(*t);
      } else {
        lflow.warning = true;
      }
    }
  };
  add_terms(coarse.flows_a, gt.flow_a, gt.valid_a);
  add_terms(coarse.flows_b, gt.flow_b, gt.valid_b);
  out.flow = zero(g);
  for (const ag::Var& t : terms) out.flow = ag::add(out.flow, t);
  lflow.value = out.flow.scalar();

  out.total = ag::add(ag::add(out.coarse, out.fine), ag::scale(out.flow, cfg.alpha));
  out.report = total_loss(lc, lf, lflow, cfg.alpha);
  out.report.total = out.total.scalar();
  if (lc.warning) logging::warn("loss: empty coarse ground truth");
  if (lf.warning) logging::debug("loss: every fine pair gated out");
  return out;
}

LossReport evaluate_loss(const WeightArchive& weights, const TrainingExample& ex) {
  ag::Graph g;
  Parameters p(g, weights, false);
  return build_loss(p, ex).report;
}

namespace {

double frozen_total(const WeightArchive& weights, const TrainingExample& ex, const FineFreeze& freeze) {
  ag::Graph g;
  Parameters p(g, weights, false);
  return build_loss(p, ex, &freeze).total.scalar();
}

}  // namespace

GradCheckReport grad_check(const WeightArchive& weights, const TrainingExample& ex, const GradCheckOptions& opt) {
  ag::Graph g;
  Parameters p(g, weights, true);
  const LossGraph base = build_loss(p, ex);
  g.backward(base.total);
  const std::map<std::string, ag::Mat> grads = p.gradients();

  // Sample indices: samples_per_tensor from each tensor, topped up round-robin.
  std::mt19937_64 rng(opt.seed);
  std::vector<std::pair<std::string, Index>> picks;
  std::vector<std::string> names;
  for (const auto& [name, tensor] : weights.tensors()) names.push_back(name);
  for (const std::string& name : names) {
    const Index n = weights.at(name).size();
    for (int s = 0; s < opt.samples_per_tensor; ++s)
      picks.emplace_back(name, std::uniform_int_distribution<Index>(0, n - 1)(rng));
  }
  for (std::size_t r = 0; static_cast<int>(picks.size()) < opt.min_samples; ++r) {
    const std::string& name = names[r % names.size()];
    picks.emplace_back(name, std::uniform_int_distribution<Index>(0, weights.at(name).size() - 1)(rng));
  }

  GradCheckReport report;
  report.tensors_covered = names.size();
  WeightArchive work = weights;
  for (const auto& [name, index] : picks) {
    auto it = grads.find(name);
    if (it == grads.end()) throw ArchiveError("grad_check: tensor '" + name + "' is not used by the loss");
    const Index cols = weights.at(name).matrix_cols();
    const double analytic = it->second(index / cols, index % cols);
    double& slot = work.at(name).data(index);
    const double original = slot;
    slot = original + opt.epsilon;
    const double plus = frozen_total(work, ex, base.freeze);
    slot = original - opt.epsilon;
    const double minus = frozen_total(work, ex, base.freeze);
    slot = original;
    const double numeric = (plus - minus) / (2.0 * opt.epsilon);
    const double rel = std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), opt.floor});
    report.entries.push_back({name, index, analytic, numeric, rel});
    if (report.worst_tensor.empty() || rel > report.max_relative_error) {
      report.max_relative_error = rel;
      report.worst_tensor = name;
    }
  }
  return report;
}

std::vector<TrainStep> train_toy(WeightArchive& weights, const TrainingExample& ex, int steps, double lr,
                                 const std::function<void(const TrainStep&)>& on_step) {
  return train_toy(weights, std::vector<TrainingExample>{ex}, TrainOptions{steps, lr, StepRule::kPlain}, on_step);
}

std::vector<TrainStep> train_toy(WeightArchive& weights, const std::vector<TrainingExample>& examples,
                                 const TrainOptions& opt, const std::function<void(const TrainStep&)>& on_step) {
  if (examples.empty()) throw ConfigError("train_toy: no training examples");
  std::vector<TrainStep> trace;
  for (int step = 0; step < opt.steps; ++step) {
    ag::Graph g;
    Parameters p(g, weights, true);
    const LossGraph loss = build_loss(p, examples[static_cast<std::size_t>(step) % examples.size()]);
    if (!std::isfinite(loss.report.total)) {
      throw DivergenceError(step, "training diverged at step " + std::to_string(step));
    }
    trace.push_back({step, loss.report});
    if (on_step) on_step(trace.back());
    g.backward(loss.total);
    for (const auto& [name, grad] : p.gradients()) {
      double step_size = opt.lr;
      if (opt.rule == StepRule::kTensorNormalized) {
        const double rms = std::sqrt(grad.squaredNorm() / static_cast<double>(grad.size()));
        if (rms == 0.0) continue;
        step_size /= rms;
      }
      Tensor<double>& t = weights.at(name);
      ag::Mat m = t.as_matrix();
      m -= step_size * grad;
      t.assign_matrix(m);
    }
  }
  return trace;
}

void write_loss_trace_csv(const std::filesystem::path& path, const std::vector<TrainStep>& trace) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "step,L_c,L_f,L_flow,L_total\n";
  char line[256];
  for (const TrainStep& s : trace) {
    std::snprintf(line, sizeof line, "%d,%.9g,%.9g,%.9g,%.9g\n", s.step, s.loss.coarse, s.loss.fine, s.loss.flow,
                  s.loss.total);
    out << line;
  }
}

}  // namespace ridgealign
