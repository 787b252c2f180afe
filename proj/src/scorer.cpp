#include "ridgealign/scorer.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <limits>

namespace ridgealign {

namespace {

void require_scores(const ScoreSet& s) {
  if (s.genuine.empty()) throw MetricError("no genuine scores");
  if (s.impostor.empty()) throw MetricError("no impostor scores");
}

}  // namespace

std::vector<OperatingPoint> threshold_sweep(const ScoreSet& s) {
  require_scores(s);
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> t{-kInf, kInf};
  t.insert(t.end(), s.genuine.begin(), s.genuine.end());
  t.insert(t.end(), s.impostor.begin(), s.impostor.end());
  std::sort(t.begin(), t.end());
  t.erase(std::unique(t.begin(), t.end()), t.end());

  std::vector<double> gen = s.genuine, imp = s.impostor;
  std::sort(gen.begin(), gen.end());
  std::sort(imp.begin(), imp.end());
  const double ng = static_cast<double>(gen.size()), ni = static_cast<double>(imp.size());
  std::vector<OperatingPoint> out;
  out.reserve(t.size());
  for (double th : t) {
    const auto imp_below = std::lower_bound(imp.begin(), imp.end(), th) - imp.begin();
    const auto gen_below = std::lower_bound(gen.begin(), gen.end(), th) - gen.begin();
    out.push_back({th, (ni - static_cast<double>(imp_below)) / ni, static_cast<double>(gen_below) / ng});
  }
  return out;
}

double eer(const ScoreSet& s) {
  const std::vector<OperatingPoint> sweep = threshold_sweep(s);
  for (std::size_t k = 0; k < sweep.size(); ++k) {
    const double d = sweep[k].fmr - sweep[k].fnmr;
    if (d == 0.0) return sweep[k].fmr;
    if (k + 1 < sweep.size()) {
      const double next = sweep[k + 1].fmr - sweep[k + 1].fnmr;
      if (d > 0.0 && next < 0.0) {
        const double a = d / (d - next);
        return sweep[k].fmr + a * (sweep[k + 1].fmr - sweep[k].fmr);
      }
    }
  }
  // The sweep starts at (1, 0) and ends at (0, 1), so a crossing exists.
  throw MetricError("eer: no crossing found");
}

double zero_fmr(const ScoreSet& s) {
  double best = 1.0;
  for (const OperatingPoint& p : threshold_sweep(s))
    if (p.fmr == 0.0) best = std::min(best, p.fnmr);
  return best;
}

std::vector<std::pair<double, double>> det_curve(const ScoreSet& s) {
  std::vector<std::pair<double, double>> out;
  for (const OperatingPoint& p : threshold_sweep(s)) out.emplace_back(p.fmr, p.fnmr);
  std::sort(out.begin(), out.end(), [](const auto& x, const auto& y) {
    return x.first != y.first ? x.first < y.first : x.second > y.second;
  });
  return out;
}

double rank1(const MatrixX<double>& scores, const std::vector<Index>& genuine_column) {
  if (static_cast<Index>(genuine_column.size()) != scores.rows()) {
    throw DimensionError("rank1: one genuine column per query is required");
  }
  if (scores.rows() == 0) throw MetricError("rank1: no queries");
  Index hits = 0;
  for (Index q = 0; q < scores.rows(); ++q) {
    const Index g = genuine_column[q];
    if (g < 0 || g >= scores.cols()) throw DimensionError("rank1: genuine column out of range");
    bool best = true;
    for (Index j = 0; j < scores.cols() && best; ++j)
      if (j != g && scores(q, j) >= scores(q, g)) best = false;
    hits += best ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

void write_metrics_csv(const std::filesystem::path& path, const MetricReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char line[128];
  out << "metric,value\n";
  std::snprintf(line, sizeof line, "eer,%.6f\nzerofmr,%.6f\n", report.eer, report.zero_fmr);
  out << line;
  if (report.rank1) {
    std::snprintf(line, sizeof line, "rank1,%.6f\n", *report.rank1);
    out << line;
  }
}

void write_det_csv(const std::filesystem::path& path, const std::vector<std::pair<double, double>>& det) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char line[128];
  out << "fmr,fnmr\n";
  for (const auto& [fmr, fnmr] : det) {
    std::snprintf(line, sizeof line, "%.6f,%.6f\n", fmr, fnmr);
    out << line;
  }
}

}  // namespace ridgealign
