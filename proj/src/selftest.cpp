#include "ridgealign/selftest.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <numbers>
#include <random>
#include <set>

#include "ridgealign/cli.hpp"
#include "ridgealign/losses.hpp"
#include "ridgealign/match_layer.hpp"
#include "ridgealign/scorer.hpp"
#include "ridgealign/synthetic.hpp"
#include "ridgealign/warpfield.hpp"

namespace ridgealign {

namespace fs = std::filesystem;

namespace {

std::string fmt(const char* format, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, format, a, b, c);
  return buf;
}

PointList random_points(std::mt19937_64& rng, int n, double extent) {
  std::uniform_real_distribution<double> u(0.0, extent);
  PointList p(n, 2);
  for (int i = 0; i < n; ++i) {
    p(i, 0) = u(rng);
    p(i, 1) = u(rng);
  }
  return p;
}

double control_residual(const TpsModel& m, const PointList& src, const PointList& dst) {
  double worst = 0;
  for (Index i = 0; i < src.rows(); ++i) {
    const Eigen::Vector2d r = m(src.row(i).transpose()) - dst.row(i).transpose();
    worst = std::max(worst, r.cwiseAbs().maxCoeff());
  }
  return worst;
}

double squared_residual(const TpsModel& m, const PointList& src, const PointList& dst) {
  double sum = 0;
  for (Index i = 0; i < src.rows(); ++i) sum += (m(src.row(i).transpose()) - dst.row(i).transpose()).squaredNorm();
  return sum;
}

CheckResult tps_interpolation() {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> count(4, 50);
  std::uniform_real_distribution<double> disp(-40.0 / std::numbers::sqrt2, 40.0 / std::numbers::sqrt2);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const int n = count(rng);
    const PointList src = random_points(rng, n, 511.0);
    PointList dst = src;
    for (int i = 0; i < n; ++i) {
      dst(i, 0) += disp(rng);
      dst(i, 1) += disp(rng);
    }
    worst = std::max(worst, control_residual(tps_fit(src, dst, 0.0), src, dst));
  }
  return {1, "tps exact interpolation", worst <= 1e-9, fmt("max residual %.2e over 100 fits", worst)};
}

CheckResult tps_affine() {
  std::mt19937_64 rng(12);
  const double a = 10.0 * std::numbers::pi / 180.0;
  Eigen::Matrix2d rot;
  rot << std::cos(a), -std::sin(a), std::sin(a), std::cos(a);
  const Eigen::Vector2d shift(7.0, -3.0);
  const PointList src = random_points(rng, 20, 511.0);
  PointList dst(src.rows(), 2);
  for (Index i = 0; i < src.rows(); ++i) dst.row(i) = (rot * src.row(i).transpose() + shift).transpose();
  const PointList queries = random_points(rng, 1000, 511.0);
  double worst = 0;
  for (double lambda : {0.0, 0.2}) {
    const TpsModel m = tps_fit(src, dst, lambda);
    for (Index q = 0; q < queries.rows(); ++q) {
      const Eigen::Vector2d x = queries.row(q).transpose();
      worst = std::max(worst, ((m(x) - x) - (rot * x + shift - x)).cwiseAbs().maxCoeff());
    }
  }
  return {2, "tps affine reproduction", worst <= 1e-8, fmt("max field error %.2e", worst)};
}

CheckResult tps_regularization() {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> disp(-10.0, 10.0);
  const PointList src = random_points(rng, 15, 127.0);
  PointList dst = src;
  for (Index i = 0; i < src.rows(); ++i) {
    dst(i, 0) += disp(rng);
    dst(i, 1) += disp(rng);
  }
  const TpsModel exact = tps_fit(src, dst, 0.0), tiny = tps_fit(src, dst, 1e-10);
  const PointList queries = random_points(rng, 500, 127.0);
  double gap = 0;
  for (Index q = 0; q < queries.rows(); ++q) {
    const Eigen::Vector2d x = queries.row(q).transpose();
    gap = std::max(gap, (exact(x) - tiny(x)).cwiseAbs().maxCoeff());
  }
  bool monotone = true;
  double previous = -1;
  for (double lambda : {0.0, 0.05, 0.2, 1.0}) {
    const double r = squared_residual(tps_fit(src, dst, lambda), src, dst);
    monotone = monotone && r >= previous;
    previous = r;
  }
  return {3, "tps regularization limit", gap <= 1e-6 && monotone,
          fmt("max gap %.2e, residual monotone %g", gap, monotone ? 1.0 : 0.0)};
}

// Clamped bilinear sample, written out per pixel.
double oracle_sample(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.cols() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.rows() - 1));
  const Index x0 = static_cast<Index>(std::floor(x)), y0 = static_cast<Index>(std::floor(y));
  const Index x1 = std::min<Index>(x0 + 1, img.cols() - 1), y1 = std::min<Index>(y0 + 1, img.rows() - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x1)) + fy * ((1 - fx) * img(y1, x0) + fx * img(y1, x1));
}

CheckResult compose_fields() {
  DeformationField c(20, 24), f(20, 24);
  c.dx.setConstant(1.25);
  c.dy.setConstant(-2.5);
  f.dx.setConstant(-0.75);
  f.dy.setConstant(3.0);
  const DeformationField sum = compose(c, f);
  const bool constant_exact = (sum.dx == 0.5).all() && (sum.dy == 0.5).all();

  const DeformationField dc = random_tps_field(40, 36, 6, 5.0, 21), df = random_tps_field(40, 36, 6, 3.0, 22);
  const DeformationField d = compose(dc, df);
  double worst = 0;
  for (Index y = 0; y < d.height(); ++y)
    for (Index x = 0; x < d.width(); ++x) {
      const double sx = static_cast<double>(x) + df.dx(y, x), sy = static_cast<double>(y) + df.dy(y, x);
      const double ex = oracle_sample(dc.dx, sx, sy) + df.dx(y, x);
      const double ey = oracle_sample(dc.dy, sx, sy) + df.dy(y, x);
      worst = std::max({worst, std::abs(ex - d.dx(y, x)), std::abs(ey - d.dy(y, x))});
    }
  return {4, "field composition", constant_exact && worst <= 1e-10,
          fmt("constant case exact %g, max oracle gap %.2e", constant_exact ? 1.0 : 0.0, worst)};
}

CheckResult dual_softmax_mnn() {
  std::mt19937_64 rng(14);
  std::uniform_int_distribution<int> dim(1, 15);
  std::normal_distribution<double> value(0.0, 2.0);
  std::uniform_real_distribution<double> theta(0.01, 0.3);
  double worst = 0;
  int mismatched = 0;
  for (int k = 0; k < 1000; ++k) {
    const Index n = std::min(dim(rng), 12), m = dim(rng);
    MatrixX<double> c(n, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) c(i, j) = value(rng);
    const MatrixX<double> p = dual_softmax(c);
    const double th = theta(rng);

    MatrixX<double> q(n, m);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) {
        double row_max = -INFINITY, col_max = -INFINITY;
        for (Index jj = 0; jj < m; ++jj) row_max = std::max(row_max, c(i, jj));
        for (Index ii = 0; ii < n; ++ii) col_max = std::max(col_max, c(ii, j));
        double row_sum = 0, col_sum = 0;
        for (Index jj = 0; jj < m; ++jj) row_sum += std::exp(c(i, jj) - row_max);
        for (Index ii = 0; ii < n; ++ii) col_sum += std::exp(c(ii, j) - col_max);
        q(i, j) = std::exp(c(i, j) - row_max) / row_sum * std::exp(c(i, j) - col_max) / col_sum;
      }
    worst = std::max(worst, (p - q).cwiseAbs().maxCoeff());

    std::set<std::pair<Index, Index>> expected, actual;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < m; ++j) {
        bool best = p(i, j) >= th;
        for (Index jj = 0; jj < m && best; ++jj)
          if (p(i, jj) > p(i, j) || (p(i, jj) == p(i, j) && jj < j)) best = false;
        for (Index ii = 0; ii < n && best; ++ii)
          if (p(ii, j) > p(i, j) || (p(ii, j) == p(i, j) && ii < i)) best = false;
        if (best) expected.emplace(i, j);
      }
    for (const CoarseMatch& cm : mnn_filter(p, th).pairs) actual.emplace(cm.i, cm.j);
    if (actual != expected) ++mismatched;
  }
  return {5, "dual softmax and mutual nearest neighbors", worst <= 1e-12 && mismatched == 0,
          fmt("max probability gap %.2e, mismatched pair sets %g", worst, mismatched)};
}

CheckResult gradient_check() {
  const TrainingExample ex = make_training_example(make_warped_pair(32, 32, 3, 3.0).pair);
  const WeightArchive weights = WeightArchive::initialize(ModelConfig::toy(), 1);
  const GradCheckReport r = grad_check(weights, ex);
  const std::size_t tensors = required_tensors(weights.config()).size();
  const bool pass = r.max_relative_error <= 1e-5 && r.entries.size() >= 200 && r.tensors_covered == tensors;
  return {6, "loss gradient check", pass,
          fmt("max relative error %.2e over %g samples, %g tensors", r.max_relative_error,
              static_cast<double>(r.entries.size()), static_cast<double>(r.tensors_covered))};
}

CheckResult flow_closed_form() {
  const Eigen::Vector2d u(3.5, -1.25);
  const double at_gt = flow_nll(u, Eigen::Vector2d(1, 1), u);
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> mean(-5, 5), sigma(0.3, 3), z(-3, 3);
  double worst = 0;
  for (int k = 0; k < 1000; ++k) {
    const Eigen::Vector2d m(mean(rng), mean(rng)), s(sigma(rng), sigma(rng));
    const Eigen::Vector2d t = m + Eigen::Vector2d(z(rng) * s.x(), z(rng) * s.y());
    worst = std::max(worst, std::abs(flow_nll(m, s, t) - flow_nll_density(m, s, t)));
  }
  const double gap = std::abs(at_gt - 1.8378770664093453);
  return {7, "flow loss closed form", gap <= 1e-10 && worst <= 1e-12,
          fmt("log 2pi gap %.2e, density gap %.2e", gap, worst)};
}

CheckResult gt_reconstruction() {
  constexpr Index kSide = 128;
  const DeformationField d = random_tps_field(kSide, kSide, 6, 10.0 / std::numbers::sqrt2, 31);
  const Mask full = full_mask(kSide, kSide);
  const CorrespondenceSet gt = build_gt(d, full, full, 8);
  const DeformationField fit = tps_evaluate(tps_fit(points_a(gt), points_b(gt), 0.2), kSide, kSide);
  const Mask m = warp_mask(full, d);
  double sum = 0, worst = 0;
  Index n = 0;
  for (Index y = 0; y < kSide; ++y)
    for (Index x = 0; x < kSide; ++x) {
      if (!m(y, x)) continue;
      const double e = std::hypot(fit.dx(y, x) - d.dx(y, x), fit.dy(y, x) - d.dy(y, x));
      sum += e;
      worst = std::max(worst, e);
      ++n;
    }
  const double mean = n > 0 ? sum / static_cast<double>(n) : INFINITY;
  return {8, "ground truth reconstruction", mean <= 0.5 && worst <= 2.0,
          fmt("mean endpoint error %.3f px, max %.3f px", mean, worst)};
}

CheckResult toy_training() {
  const TrainingExample ex = make_training_example(make_warped_pair(32, 32, 3, 3.0).pair);
  WeightArchive weights = WeightArchive::initialize(ModelConfig::toy(), 1);
  const std::vector<TrainStep> trace = train_toy(weights, ex, 200, 0.001);
  const double first = trace.front().loss.total, last = trace.back().loss.total;
  // Within every 50-step window no loss may exceed the window's first value
  // by more than 10% of that value.
  double worst_rise = 0;
  for (std::size_t s = 0; s < trace.size(); ++s) {
    const double base = trace[s].loss.total;
    for (std::size_t j = s + 1; j < std::min(trace.size(), s + 51); ++j) {
      worst_rise = std::max(worst_rise, (trace[j].loss.total - base) / std::abs(base));
    }
  }
  const bool pass = last <= 0.5 * first && worst_rise <= 0.1;
  return {9, "toy trainability", pass,
          fmt("loss %.3f -> %.3f, worst windowed rise %.1f%%", first, last, 100 * worst_rise)};
}

CheckResult end_to_end() {
  const fs::path dir = fs::temp_directory_path() / "ridgealign-selftest-e2e";
  fs::remove_all(dir);
  RunConfig cfg;
  cfg.quiet = true;
  cfg.out = dir / "corpus";
  cmd_synth(20, 64, 4.0, cfg);

  cfg.out = dir / "train";
  TrainToyOptions train;
  train.steps = 800;
  train.lr = 0.003;
  train.pairs = 8;
  train.size = 64;
  train.max_displacement = 4.0;
  train.rule = StepRule::kTensorNormalized;
  cmd_train_toy(train, cfg);

  cfg.weights = dir / "train" / "weights.rwa";
  cfg.out = dir / "eval";
  EvalSummary summary;
  cmd_eval(dir / "corpus" / "manifest.csv", cfg, &summary);
  fs::remove_all(dir);
  const bool pass = summary.metrics.eer < 0.25 && summary.mean_genuine_after > summary.mean_genuine_before;
  return {10, "end-to-end synthetic registration", pass,
          fmt("eer %.3f, genuine ncc %.3f -> %.3f", summary.metrics.eer, summary.mean_genuine_before,
              summary.mean_genuine_after)};
}

CheckResult metric_units() {
  const double identical = eer({{0.1, 0.5, 0.9}, {0.1, 0.5, 0.9}});
  const double zf = zero_fmr({{0.9, 0.8, 0.3}, {0.7, 0.2, 0.1}});
  MatrixX<double> s(3, 3);
  s << 0.9, 0.1, 0.2,  //
      0.3, 0.8, 0.1,   //
      0.2, 0.7, 0.4;
  const double r1 = rank1(s, {0, 1, 2});
  const bool pass = identical == 0.5 && zf == 1.0 / 3.0 && r1 == 2.0 / 3.0;
  return {11, "metric unit checks", pass, fmt("eer %.6f, zerofmr %.6f, rank1 %.6f", identical, zf, r1)};
}

std::vector<char> slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

CheckResult format_round_trips() {
  const fs::path dir = fs::temp_directory_path() / "ridgealign-selftest-formats";
  fs::create_directories(dir);
  WeightArchive w = WeightArchive::initialize(ModelConfig::toy(), 5);
  w.write(dir / "a.rwa");
  WeightArchive::read(dir / "a.rwa").write(dir / "b.rwa");
  const bool rwa = slurp(dir / "a.rwa") == slurp(dir / "b.rwa");

  const DeformationField d = random_tps_field(33, 47, 5, 6.0, 41);
  write_field(dir / "a.dfl", d);
  write_field(dir / "b.dfl", read_field(dir / "a.dfl"));
  const bool dfl = slurp(dir / "a.dfl") == slurp(dir / "b.dfl");

  std::mt19937_64 rng(42);
  std::uniform_real_distribution<double> u(0, 500);
  CorrespondenceSet set;
  for (int i = 0; i < 50; ++i) set.pairs.push_back({u(rng), u(rng), u(rng), u(rng), u(rng) / 500.0, std::nullopt});
  write_correspondences_csv(dir / "c.csv", set);
  const CorrespondenceSet back = read_correspondences_csv(dir / "c.csv");
  double worst = back.size() == set.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(set.size(), back.size()); ++i) {
    const Correspondence &x = set.pairs[i], &y = back.pairs[i];
    worst = std::max({worst, std::abs(x.xa - y.xa), std::abs(x.ya - y.ya), std::abs(x.xb - y.xb),
                      std::abs(x.yb - y.yb), std::abs(x.confidence - y.confidence)});
  }
  fs::remove_all(dir);
  return {12, "format round trips", rwa && dfl && worst <= 1e-6,
          fmt("rwa identical %g, dfl identical %g, csv max error %.1e", rwa ? 1 : 0, dfl ? 1 : 0, worst)};
}

struct CheckEntry {
  CheckResult (*run)();
  double budget_seconds;  // 0: none
};

const CheckEntry kChecks[kCheckCount] = {
    {tps_interpolation, 5},  {tps_affine, 0},       {tps_regularization, 0}, {compose_fields, 0},
    {dual_softmax_mnn, 0},   {gradient_check, 60},  {flow_closed_form, 0},   {gt_reconstruction, 0},
    {toy_training, 300},     {end_to_end, 600},     {metric_units, 0},       {format_round_trips, 0},
};

}  // namespace

CheckResult run_check(int id) {
  if (id < 1 || id > kCheckCount) throw ConfigError("no check with id " + std::to_string(id));
  const CheckEntry& entry = kChecks[id - 1];
  const auto t0 = std::chrono::steady_clock::now();
  CheckResult r;
  try {
    r = entry.run();
  } catch (const std::exception& e) {
    r = {id, "check " + std::to_string(id), false, std::string("threw: ") + e.what()};
  }
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (entry.budget_seconds > 0 && r.seconds > entry.budget_seconds) {
    r.pass = false;
    r.detail += fmt("; over the %.0f s budget", entry.budget_seconds);
  }
  return r;
}

std::vector<CheckResult> run_checks(bool full, const std::function<void(const CheckResult&)>& on_result) {
  std::vector<CheckResult> out;
  for (int id = 1; id <= kCheckCount; ++id) {
    if (!full && (id == 9 || id == 10)) continue;
    out.push_back(run_check(id));
    if (on_result) on_result(out.back());
  }
  return out;
}

void print_result(std::ostream& out, const CheckResult& r, bool with_timing) {
  out << (r.pass ? "PASS " : "FAIL ") << r.id << " " << r.name << ": " << r.detail;
  if (with_timing) out << fmt(" (%.1f s)", r.seconds);
  out << "\n";
}

void print_report(std::ostream& out, const std::vector<CheckResult>& results, bool with_timing) {
  for (const CheckResult& r : results) print_result(out, r, with_timing);
}

}  // namespace ridgealign
