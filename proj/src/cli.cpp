#include "ridgealign/cli.hpp"

#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "ridgealign/log.hpp"
#include "ridgealign/selftest.hpp"
#include "ridgealign/synthetic.hpp"

namespace ridgealign {

namespace fs = std::filesystem;

RegisterOptions RunConfig::register_options(const ModelConfig& manifest) const {
  RegisterOptions opt = RegisterOptions::from(manifest);
  if (theta) opt.theta = *theta;
  if (window) opt.window = *window;
  if (lambda) opt.lambda = *lambda;
  opt.validate();
  return opt;
}

int guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const InsufficientMatchesError& e) {
    std::cerr << e.what() << "\n";
    return kExitInsufficientMatches;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const ArchiveError& e) {
    std::cerr << "archive error: " << e.what() << "\n";
    return kExitArchive;
  } catch (const MetricError& e) {
    std::cerr << "metric error: " << e.what() << "\n";
    return kExitMetric;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

WeightArchive load_weights(const RunConfig& cfg) {
  if (cfg.weights.empty()) throw ConfigError("--weights is required");
  WeightArchive w = WeightArchive::read(cfg.weights);
  w.validate();
  return w;
}

namespace {

Mask mask_or_segment(const std::optional<fs::path>& path, const Image& img) {
  if (!path) return auto_segment(img);
  Mask m = read_mask_pgm(*path);
  if (m.rows() != img.rows() || m.cols() != img.cols()) {
    throw DimensionError("mask '" + path->string() + "' does not match its image");
  }
  return m;
}

void write_score_csv(const fs::path& path, const RegisterSummary& s) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  char line[160];
  std::snprintf(line, sizeof line, "metric,value\nncc_before,%.6f\nncc_after,%.6f\nmatches,%zu\n", s.ncc_before,
                s.ncc_after, s.matches);
  out << line;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' ')) cell.pop_back();
    while (!cell.empty() && cell.front() == ' ') cell.erase(cell.begin());
    out.push_back(cell);
  }
  return out;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
}

}  // namespace

int cmd_register(const fs::path& a, const fs::path& b, const std::optional<fs::path>& mask_a,
                 const std::optional<fs::path>& mask_b, const RunConfig& cfg, RegisterSummary* summary) {
  const WeightArchive weights = load_weights(cfg);
  const RegisterOptions opt = cfg.register_options(weights.config());
  const Image ia = read_pgm(a), ib = read_pgm(b);
  const Mask ma = mask_or_segment(mask_a, ia), mb = mask_or_segment(mask_b, ib);
  const Registration reg = register_pair(ia, ib, ma, mb, weights, opt);

  ensure_dir(cfg.out);
  write_correspondences_csv(cfg.out / "correspondences.csv", reg.matches);
  write_field(cfg.out / "field.dfl", reg.field);
  write_pgm(cfg.out / "warped.pgm", reg.warped);
  const Overlay overlay = make_overlay(reg.warped, ib);
  write_png(cfg.out / "overlay.png", overlay.red, overlay.green, overlay.blue);
  const RegisterSummary s{reg.matches.size(), reg.ncc_before, reg.ncc_after};
  write_score_csv(cfg.out / "score.csv", s);
  if (!cfg.quiet) std::printf("matches=%zu ncc_before=%.6f ncc_after=%.6f\n", s.matches, s.ncc_before, s.ncc_after);
  if (summary) *summary = s;
  return kExitOk;
}

int cmd_make_gt(const fs::path& coarse, const fs::path& fine, const fs::path& mask_a, const fs::path& mask_b,
                const RunConfig& cfg) {
  const DeformationField dc = read_field(coarse), df = read_field(fine);
  const Mask ma = read_mask_pgm(mask_a), mb = read_mask_pgm(mask_b);
  const CorrespondenceSet gt = build_gt(compose(dc, df), ma, mb, cfg.stride);
  if (gt.empty()) logging::warn("make-gt: masks do not overlap, no correspondences written");
  ensure_dir(cfg.out);
  write_correspondences_csv(cfg.out / "correspondences.csv", gt);
  if (!cfg.quiet) std::printf("pairs=%zu\n", gt.size());
  return kExitOk;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path.string() + "'");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::string line;
  if (!std::getline(in, line) || split_csv(line).size() < 3 || split_csv(line)[0] != "a") {
    throw IoError("manifest '" + path.string() + "' lacks the a,b,label header");
  }
  std::vector<ManifestEntry> out;
  while (std::getline(in, line)) {
    const std::vector<std::string> cells = split_csv(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
    if (cells.size() < 3) throw IoError("manifest row '" + line + "' has fewer than 3 fields");
    ManifestEntry e;
    e.a = resolve(cells[0]);
    e.b = resolve(cells[1]);
    if (cells[2] == "genuine") {
      e.genuine = true;
    } else if (cells[2] != "impostor") {
      throw IoError("manifest label '" + cells[2] + "' is neither genuine nor impostor");
    }
    if (cells.size() >= 5 && !cells[3].empty()) e.mask_a = resolve(cells[3]);
    if (cells.size() >= 5 && !cells[4].empty()) e.mask_b = resolve(cells[4]);
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "a,b,label,mask_a,mask_b\n";
  for (const ManifestEntry& e : entries) {
    out << e.a.string() << "," << e.b.string() << "," << (e.genuine ? "genuine" : "impostor") << ","
        << (e.mask_a ? e.mask_a->string() : "") << "," << (e.mask_b ? e.mask_b->string() : "") << "\n";
  }
}

int cmd_eval(const fs::path& manifest, const RunConfig& cfg, EvalSummary* summary) {
  const std::vector<ManifestEntry> entries = read_manifest(manifest);
  if (entries.empty()) throw MetricError("manifest '" + manifest.string() + "' lists no pairs");
  const WeightArchive weights = load_weights(cfg);
  const RegisterOptions opt = cfg.register_options(weights.config());

  std::vector<PairScore> scores(entries.size());
  auto score_one = [&](std::size_t k) {
    const ManifestEntry& e = entries[k];
    PairScore& s = scores[k];
    try {
      const Image ia = read_pgm(e.a), ib = read_pgm(e.b);
      const Mask ma = mask_or_segment(e.mask_a, ia), mb = mask_or_segment(e.mask_b, ib);
      const Registration reg = register_pair(ia, ib, ma, mb, weights, opt);
      s.ncc_before = reg.ncc_before;
      s.ncc_after = reg.ncc_after;
    } catch (const std::exception& ex) {
      s.failed = true;
      s.ncc_before = s.ncc_after = -1.0;
      s.note = ex.what();
    }
  };
  const int threads = std::max(1, cfg.threads);
  if (threads == 1) {
    for (std::size_t k = 0; k < entries.size(); ++k) score_one(k);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (int t = 0; t < threads; ++t) {
      pool.emplace_back([&] {
        for (std::size_t k = next++; k < entries.size(); k = next++) score_one(k);
      });
    }
    for (std::thread& t : pool) t.join();
  }

  EvalSummary result;
  ScoreSet set;
  int genuine_ok = 0;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    if (scores[k].failed) logging::warn("pair " + std::to_string(k) + " failed: " + scores[k].note);
    (entries[k].genuine ? set.genuine : set.impostor).push_back(scores[k].ncc_after);
    if (entries[k].genuine && !scores[k].failed) {
      result.mean_genuine_before += scores[k].ncc_before;
      result.mean_genuine_after += scores[k].ncc_after;
      ++genuine_ok;
    }
  }
  if (genuine_ok > 0) {
    result.mean_genuine_before /= genuine_ok;
    result.mean_genuine_after /= genuine_ok;
  }
  result.metrics.eer = eer(set);
  result.metrics.zero_fmr = zero_fmr(set);

  // Rank-1 over queries (distinct A images) with exactly one genuine row.
  std::map<fs::path, Index> query_ids, gallery_ids;
  for (const ManifestEntry& e : entries) {
    query_ids.emplace(e.a, static_cast<Index>(query_ids.size()));
    gallery_ids.emplace(e.b, static_cast<Index>(gallery_ids.size()));
  }
  MatrixX<double> matrix =
      MatrixX<double>::Constant(static_cast<Index>(query_ids.size()), static_cast<Index>(gallery_ids.size()),
                                -std::numeric_limits<double>::infinity());
  std::vector<Index> genuine_col(query_ids.size(), -1);
  bool ranked = true;
  for (std::size_t k = 0; k < entries.size(); ++k) {
    const Index q = query_ids.at(entries[k].a), gidx = gallery_ids.at(entries[k].b);
    matrix(q, gidx) = scores[k].ncc_after;
    if (entries[k].genuine) {
      if (genuine_col[q] >= 0) ranked = false;
      genuine_col[q] = gidx;
    }
  }
  for (Index g : genuine_col) ranked = ranked && g >= 0;
  if (ranked) result.metrics.rank1 = rank1(matrix, genuine_col);

  ensure_dir(cfg.out);
  write_metrics_csv(cfg.out / "metrics.csv", result.metrics);
  write_det_csv(cfg.out / "det.csv", det_curve(set));
  {
    std::ofstream out(cfg.out / "scores.csv");
    if (!out) throw IoError("cannot write scores.csv");
    out << "a,b,label,ncc_before,ncc_after,status\n";
    char line[64];
    for (std::size_t k = 0; k < entries.size(); ++k) {
      std::snprintf(line, sizeof line, "%.6f,%.6f", scores[k].ncc_before, scores[k].ncc_after);
      out << entries[k].a.filename().string() << "," << entries[k].b.filename().string() << ","
          << (entries[k].genuine ? "genuine" : "impostor") << "," << line << ","
          << (scores[k].failed ? "failed" : "ok") << "\n";
    }
  }
  if (!cfg.quiet) std::printf("pairs=%zu eer=%.6f zerofmr=%.6f genuine_ncc_before=%.6f genuine_ncc_after=%.6f\n", entries.size(),
              result.metrics.eer, result.metrics.zero_fmr, result.mean_genuine_before, result.mean_genuine_after);
  result.scores = std::move(scores);
  if (summary) *summary = std::move(result);
  return kExitOk;
}

int cmd_score(const fs::path& scores, const RunConfig& cfg) {
  std::ifstream in(scores);
  if (!in) throw IoError("cannot open '" + scores.string() + "'");
  std::string line;
  if (!std::getline(in, line) || split_csv(line) != std::vector<std::string>{"label", "score"}) {
    throw IoError("'" + scores.string() + "' lacks the label,score header");
  }
  ScoreSet set;
  while (std::getline(in, line)) {
    const std::vector<std::string> cells = split_csv(line);
    if (cells.empty() || (cells.size() == 1 && cells[0].empty())) continue;
    if (cells.size() != 2) throw IoError("malformed score row '" + line + "'");
    const double v = std::stod(cells[1]);
    if (cells[0] == "genuine") {
      set.genuine.push_back(v);
    } else if (cells[0] == "impostor") {
      set.impostor.push_back(v);
    } else {
      throw IoError("unknown label '" + cells[0] + "'");
    }
  }
  MetricReport report{eer(set), zero_fmr(set), std::nullopt};
  ensure_dir(cfg.out);
  write_metrics_csv(cfg.out / "metrics.csv", report);
  write_det_csv(cfg.out / "det.csv", det_curve(set));
  if (!cfg.quiet) std::printf("eer=%.6f zerofmr=%.6f\n", report.eer, report.zero_fmr);
  return kExitOk;
}

int cmd_train_toy(const TrainToyOptions& opt, const RunConfig& cfg, std::vector<TrainStep>* trace) {
  if (opt.steps < 0 || opt.pairs < 1 || opt.size < 32) throw ConfigError("train-toy: invalid options");
  std::vector<TrainingExample> examples;
  for (int k = 0; k < opt.pairs; ++k) {
    const std::uint64_t pair_seed = 1000 + cfg.seed * 7919 + static_cast<std::uint64_t>(k);
    examples.push_back(make_training_example(make_warped_pair(opt.size, opt.size, pair_seed, opt.max_displacement).pair));
  }
  WeightArchive weights = WeightArchive::initialize(ModelConfig::toy(), cfg.seed + 1);
  const std::vector<TrainStep> t = train_toy(weights, examples, TrainOptions{opt.steps, opt.lr, opt.rule},
                                             [](const TrainStep& s) {
                                               if (s.step % 50 == 0) {
                                                 logging::info("step " + std::to_string(s.step) + " loss " +
                                                               std::to_string(s.loss.total));
                                               }
                                             });
  ensure_dir(cfg.out);
  weights.write(cfg.out / "weights.rwa");
  write_loss_trace_csv(cfg.out / "loss_trace.csv", t);
  if (!t.empty() && !cfg.quiet) std::printf("initial=%.6f final=%.6f\n", t.front().loss.total, t.back().loss.total);
  if (trace) *trace = t;
  return kExitOk;
}

int cmd_synth(int count, int size, double max_displacement, const RunConfig& cfg) {
  if (count < 2 || size < 32) throw ConfigError("synth: need at least 2 images of side >= 32");
  ensure_dir(cfg.out);
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    const std::uint64_t s = 100 + cfg.seed * 7919 + static_cast<std::uint64_t>(i);
    const WarpedPair wp = make_warped_pair(size, size, s, max_displacement);
    write_pgm(cfg.out / ("img" + std::to_string(i) + ".pgm"), wp.pair.a);
    write_pgm(cfg.out / ("img" + std::to_string(i) + "_warped.pgm"), wp.pair.b);
  }
  for (int i = 0; i < count; ++i) {
    const std::string a = "img" + std::to_string(i) + ".pgm";
    entries.push_back({a, "img" + std::to_string(i) + "_warped.pgm", true, std::nullopt, std::nullopt});
    entries.push_back({a, "img" + std::to_string((i + 1) % count) + "_warped.pgm", false, std::nullopt, std::nullopt});
  }
  write_manifest(cfg.out / "manifest.csv", entries);
  if (!cfg.quiet) std::printf("images=%d manifest=%s\n", count, (cfg.out / "manifest.csv").string().c_str());
  return kExitOk;
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Fingerprint registration by semi-dense matching"};
  app.require_subcommand(1);
  RunConfig cfg;
  std::string out = ".";
  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--weights", cfg.weights, "weight archive (RWA1)");
    cmd->add_option("--seed", cfg.seed, "random seed");
    cmd->add_option("--threads", cfg.threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", out, "output directory");
  };
  auto add_overrides = [&](CLI::App* cmd) {
    cmd->add_option_function<double>("--theta", [&](double v) { cfg.theta = v; }, "match threshold in (0,1)");
    cmd->add_option_function<int>("--window", [&](int v) { cfg.window = v; }, "odd fine window side");
    cmd->add_option_function<double>("--lambda", [&](double v) { cfg.lambda = v; }, "TPS regularization");
  };

  std::string img_a, img_b, mask_a, mask_b;
  CLI::App* reg = app.add_subcommand("register", "register image A onto image B");
  reg->add_option("a", img_a, "image A (PGM)")->required();
  reg->add_option("b", img_b, "image B (PGM)")->required();
  reg->add_option("--mask-a", mask_a, "mask of A (PGM)");
  reg->add_option("--mask-b", mask_b, "mask of B (PGM)");
  add_common(reg);
  add_overrides(reg);

  std::string coarse, fine;
  CLI::App* gt = app.add_subcommand("make-gt", "ground truth from two-stage deformation fields");
  gt->add_option("coarse", coarse, "coarse field (DFL1)")->required();
  gt->add_option("fine", fine, "fine field (DFL1)")->required();
  gt->add_option("mask_a", mask_a, "mask of A (PGM)")->required();
  gt->add_option("mask_b", mask_b, "mask of B (PGM)")->required();
  gt->add_option("--stride", cfg.stride, "grid stride in pixels")->check(CLI::PositiveNumber);
  add_common(gt);

  std::string manifest;
  CLI::App* ev = app.add_subcommand("eval", "register and score every manifest pair");
  ev->add_option("manifest", manifest, "CSV a,b,label[,mask_a,mask_b]")->required();
  add_common(ev);
  add_overrides(ev);

  std::string scores;
  CLI::App* sc = app.add_subcommand("score", "metrics from a label,score CSV");
  sc->add_option("scores", scores, "CSV label,score")->required();
  add_common(sc);

  bool full = false;
  CLI::App* st = app.add_subcommand("selftest", "run the property and oracle suite");
  st->add_flag("--full", full, "include the training and end-to-end checks");
  add_common(st);

  TrainToyOptions topt;
  std::string rule = "plain";
  CLI::App* tr = app.add_subcommand("train-toy", "train toy weights on synthetic pairs");
  tr->add_option("--steps", topt.steps, "gradient steps");
  tr->add_option("--lr", topt.lr, "learning rate");
  tr->add_option("--pairs", topt.pairs, "synthetic training pairs");
  tr->add_option("--size", topt.size, "image side in pixels");
  tr->add_option("--displacement", topt.max_displacement, "max warp displacement in pixels");
  tr->add_option("--rule", rule, "plain or normalized")->check(CLI::IsMember({"plain", "normalized"}));
  add_common(tr);

  int count = 20, size = 64;
  double displacement = 4.0;
  CLI::App* sy = app.add_subcommand("synth", "write a synthetic ridge corpus and manifest");
  sy->add_option("--count", count, "number of images");
  sy->add_option("--size", size, "image side in pixels");
  sy->add_option("--displacement", displacement, "max warp displacement in pixels");
  add_common(sy);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  cfg.out = out;

  return guarded([&]() -> int {
    auto opt_path = [](const std::string& s) { return s.empty() ? std::nullopt : std::optional<fs::path>(s); };
    if (reg->parsed()) return cmd_register(img_a, img_b, opt_path(mask_a), opt_path(mask_b), cfg);
    if (gt->parsed()) return cmd_make_gt(coarse, fine, mask_a, mask_b, cfg);
    if (ev->parsed()) return cmd_eval(manifest, cfg);
    if (sc->parsed()) return cmd_score(scores, cfg);
    if (st->parsed()) {
      if (!cfg.weights.empty()) load_weights(cfg);
      const std::vector<CheckResult> results = run_checks(full);
      print_report(std::cout, results);
      for (const CheckResult& r : results) {
        if (!r.pass) {
          std::cerr << "selftest failed: " << r.name << "\n";
          return kExitFailure;
        }
      }
      return kExitOk;
    }
    if (tr->parsed()) {
      topt.rule = rule == "normalized" ? StepRule::kTensorNormalized : StepRule::kPlain;
      return cmd_train_toy(topt, cfg);
    }
    if (sy->parsed()) return cmd_synth(count, size, displacement, cfg);
    return kExitFailure;
  });
}

}  // namespace ridgealign
