#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ridgealign/losses.hpp"
#include "ridgealign/pipeline.hpp"
#include "ridgealign/scorer.hpp"

namespace ridgealign {

enum ExitCode : int {
  kExitOk = 0,
  kExitFailure = 1,
  kExitInsufficientMatches = 2,
  kExitIo = 3,
  kExitArchive = 4,
  kExitMetric = 5,
  kExitConfig = 6,
};

/// Shared command options. Unset overrides fall back to the archive manifest.
struct RunConfig {
  std::filesystem::path weights;
  std::optional<double> theta;
  std::optional<int> window;
  std::optional<double> lambda;
  int stride = 8;
  std::uint64_t seed = 0;
  int threads = 1;
  std::filesystem::path out = ".";
  /// Suppresses the one-line summaries on stdout.
  bool quiet = false;

  /// Applies the overrides to the manifest values and validates them.
  RegisterOptions register_options(const ModelConfig& manifest) const;
};

/// Runs `body`, mapping library exceptions onto exit codes with a message on
/// stderr.
int guarded(const std::function<int()>& body);

WeightArchive load_weights(const RunConfig& cfg);

struct RegisterSummary {
  std::size_t matches = 0;
  double ncc_before = 0;
  double ncc_after = 0;
};

/// Writes correspondences.csv, field.dfl, warped.pgm, overlay.png and
/// score.csv into cfg.out. Missing masks come from auto_segment.
int cmd_register(const std::filesystem::path& a, const std::filesystem::path& b,
                 const std::optional<std::filesystem::path>& mask_a, const std::optional<std::filesystem::path>& mask_b,
                 const RunConfig& cfg, RegisterSummary* summary = nullptr);

/// compose(coarse, fine) then build_gt; writes correspondences.csv.
int cmd_make_gt(const std::filesystem::path& coarse, const std::filesystem::path& fine,
                const std::filesystem::path& mask_a, const std::filesystem::path& mask_b, const RunConfig& cfg);

/// One manifest row: `a,b,label[,mask_a,mask_b]`, label genuine|impostor.
struct ManifestEntry {
  std::filesystem::path a, b;
  bool genuine = false;
  std::optional<std::filesystem::path> mask_a, mask_b;
};

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct PairScore {
  double ncc_before = -1;
  double ncc_after = -1;
  bool failed = false;
  std::string note;
};

struct EvalSummary {
  MetricReport metrics;
  std::vector<PairScore> scores;
  double mean_genuine_before = 0;
  double mean_genuine_after = 0;
};

/// Registers every manifest pair and writes metrics.csv, det.csv and
/// scores.csv. Rank-1 is reported when each query has exactly one genuine row.
int cmd_eval(const std::filesystem::path& manifest, const RunConfig& cfg, EvalSummary* summary = nullptr);

/// Metrics from a `label,score` CSV; writes metrics.csv and det.csv.
int cmd_score(const std::filesystem::path& scores, const RunConfig& cfg);

struct TrainToyOptions {
  int steps = 200;
  double lr = 0.001;
  int pairs = 1;
  int size = 32;
  double max_displacement = 3.0;
  StepRule rule = StepRule::kPlain;
};

/// Trains toy weights on synthetic warped pairs; writes weights.rwa and
/// loss_trace.csv.
int cmd_train_toy(const TrainToyOptions& opt, const RunConfig& cfg, std::vector<TrainStep>* trace = nullptr);

/// Writes `count` ridge images, a warped copy of each, and manifest.csv with
/// one genuine and one impostor row per image.
int cmd_synth(int count, int size, double max_displacement, const RunConfig& cfg);

/// Full command-line entry point.
int run_cli(int argc, char** argv);

}  // namespace ridgealign
