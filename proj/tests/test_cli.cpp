#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "ridgealign/cli.hpp"
#include "ridgealign/selftest.hpp"
#include "ridgealign/synthetic.hpp"

using namespace ridgealign;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("ridgealign-test-" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run(std::vector<std::string> args) {
  args.insert(args.begin(), "ridgealign");
  std::vector<char*> argv;
  for (std::string& a : args) argv.push_back(a.data());
  return run_cli(static_cast<int>(argv.size()), argv.data());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

double oracle_sample(const Image& img, double x, double y) {
  x = std::clamp(x, 0.0, static_cast<double>(img.cols() - 1));
  y = std::clamp(y, 0.0, static_cast<double>(img.rows() - 1));
  const Index x0 = static_cast<Index>(x), y0 = static_cast<Index>(y);
  const Index x1 = std::min<Index>(x0 + 1, img.cols() - 1), y1 = std::min<Index>(y0 + 1, img.rows() - 1);
  const double fx = x - static_cast<double>(x0), fy = y - static_cast<double>(y0);
  return (1 - fy) * ((1 - fx) * img(y0, x0) + fx * img(y0, x1)) + fy * ((1 - fx) * img(y1, x0) + fx * img(y1, x1));
}

const fs::path& trained_weights() {
  static TempDir dir("weights");
  static const fs::path path = [] {
    RunConfig cfg;
    cfg.quiet = true;
    cfg.out = dir.path;
    TrainToyOptions opt;
    opt.steps = 400;
    opt.lr = 0.003;
    opt.pairs = 8;
    opt.size = 64;
    opt.max_displacement = 4.0;
    opt.rule = StepRule::kTensorNormalized;
    cmd_train_toy(opt, cfg);
    return dir.path / "weights.rwa";
  }();
  return path;
}

}  // namespace

TEST_CASE("make-gt") {
  TempDir dir("make-gt");
  const fs::path p = dir.path;
  write_field(p / "zero.dfl", DeformationField(32, 32));
  write_mask_pgm(p / "full.pgm", full_mask(32, 32));
  CHECK(run({"make-gt", (p / "zero.dfl").string(), (p / "zero.dfl").string(), (p / "full.pgm").string(),
             (p / "full.pgm").string(), "--out", (p / "id").string()}) == kExitOk);
  const CorrespondenceSet id = read_correspondences_csv(p / "id" / "correspondences.csv");
  CHECK(id.size() == 16);
  for (const Correspondence& c : id.pairs) CHECK((c.xa == c.xb && c.ya == c.yb));

  Mask left = Mask::Constant(32, 32, false), right = Mask::Constant(32, 32, false);
  left.leftCols(16) = true;
  right.rightCols(16) = true;
  write_mask_pgm(p / "left.pgm", left);
  write_mask_pgm(p / "right.pgm", right);
  CHECK(run({"make-gt", (p / "zero.dfl").string(), (p / "zero.dfl").string(), (p / "left.pgm").string(),
             (p / "right.pgm").string(), "--out", (p / "none").string()}) == kExitOk);
  CHECK(read_correspondences_csv(p / "none" / "correspondences.csv").empty());

  write_field(p / "c.dfl", random_tps_field(48, 40, 5, 4.0, 2));
  write_field(p / "f.dfl", random_tps_field(48, 40, 5, 2.0, 3));
  write_mask_pgm(p / "full48.pgm", full_mask(48, 40));
  CHECK(run({"make-gt", (p / "c.dfl").string(), (p / "f.dfl").string(), (p / "full48.pgm").string(),
             (p / "full48.pgm").string(), "--out", (p / "k").string()}) == kExitOk);
  const DeformationField dc = read_field(p / "c.dfl"), df = read_field(p / "f.dfl");
  // Per-pixel composition, then the same bilinear read at each grid point.
  DeformationField composed(48, 40);
  for (Index y = 0; y < 48; ++y)
    for (Index x = 0; x < 40; ++x) {
      const double sx = static_cast<double>(x) + df.dx(y, x), sy = static_cast<double>(y) + df.dy(y, x);
      composed.dx(y, x) = oracle_sample(dc.dx, sx, sy) + df.dx(y, x);
      composed.dy(y, x) = oracle_sample(dc.dy, sx, sy) + df.dy(y, x);
    }
  const CorrespondenceSet known = read_correspondences_csv(p / "k" / "correspondences.csv");
  CHECK(!known.empty());
  for (const Correspondence& c : known.pairs) {
    CHECK(std::abs(c.xb - (c.xa + oracle_sample(composed.dx, c.xa, c.ya))) <= 1e-6);
    CHECK(std::abs(c.yb - (c.ya + oracle_sample(composed.dy, c.xa, c.ya))) <= 1e-6);
  }
}

TEST_CASE("error exits") {
  TempDir dir("errors");
  const fs::path p = dir.path;
  const fs::path weights = trained_weights();
  std::ofstream(p / "empty.csv") << "a,b,label\n";
  CHECK(run({"eval", (p / "empty.csv").string(), "--weights", weights.string(), "--out", p.string()}) == kExitMetric);

  write_pgm(p / "blank.pgm", Image::Constant(64, 64, 0.5));
  CHECK(run({"register", (p / "blank.pgm").string(), (p / "blank.pgm").string(), "--weights", weights.string(),
             "--out", (p / "r").string()}) == kExitInsufficientMatches);

  const std::string bytes = slurp(weights);
  std::ofstream(p / "bad.rwa", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK(run({"register", (p / "blank.pgm").string(), (p / "blank.pgm").string(), "--weights",
             (p / "bad.rwa").string()}) == kExitArchive);
  CHECK(run({"selftest", "--weights", (p / "bad.rwa").string()}) == kExitArchive);
  CHECK(run({"register", (p / "missing.pgm").string(), (p / "blank.pgm").string(), "--weights", weights.string()}) ==
        kExitIo);
  CHECK(run({"register", (p / "blank.pgm").string(), (p / "blank.pgm").string(), "--weights", weights.string(),
             "--window", "4"}) == kExitConfig);
}

TEST_CASE("register writes its artifacts") {
  TempDir dir("register");
  const fs::path p = dir.path;
  const WarpedPair wp = make_warped_pair(64, 64, 500, 4.0);
  write_pgm(p / "a.pgm", wp.pair.a);
  write_pgm(p / "b.pgm", wp.pair.b);
  RunConfig cfg;
  cfg.quiet = true;
  cfg.weights = trained_weights();
  cfg.out = p / "out";
  RegisterSummary s;
  REQUIRE(cmd_register(p / "a.pgm", p / "b.pgm", std::nullopt, std::nullopt, cfg, &s) == kExitOk);
  for (const char* f : {"correspondences.csv", "field.dfl", "warped.pgm", "overlay.png", "score.csv"})
    CHECK(fs::exists(p / "out" / f));
  CHECK(s.matches >= 3);
  CHECK(s.ncc_after > s.ncc_before);
}

TEST_CASE("identical images register onto themselves") {
  TempDir dir("identical");
  const fs::path p = dir.path;
  write_pgm(p / "a.pgm", ridge_image(64, 64, 501));
  RunConfig cfg;
  cfg.quiet = true;
  cfg.weights = trained_weights();
  cfg.out = p / "out";
  RegisterSummary s;
  REQUIRE(cmd_register(p / "a.pgm", p / "a.pgm", std::nullopt, std::nullopt, cfg, &s) == kExitOk);
  // Coarse matching is exact here; refinement leaves sub-pixel offsets.
  CHECK(s.matches == 64);
  CHECK(s.ncc_before == doctest::Approx(1.0));
  CHECK(s.ncc_after > 0.9);
}

TEST_CASE("evaluation separates genuine from impostor pairs") {
  TempDir dir("eval");
  RunConfig cfg;
  cfg.quiet = true;
  cfg.seed = 3;
  cfg.out = dir.path / "corpus";
  REQUIRE(cmd_synth(6, 64, 4.0, cfg) == kExitOk);
  cfg.weights = trained_weights();
  cfg.out = dir.path / "e1";
  EvalSummary summary;
  REQUIRE(cmd_eval(dir.path / "corpus" / "manifest.csv", cfg, &summary) == kExitOk);
  CHECK(summary.metrics.eer < 0.5);
  CHECK(summary.metrics.rank1.has_value());

  cfg.out = dir.path / "e2";
  cfg.threads = 3;
  REQUIRE(cmd_eval(dir.path / "corpus" / "manifest.csv", cfg) == kExitOk);
  for (const char* f : {"metrics.csv", "det.csv", "scores.csv"})
    CHECK(slurp(dir.path / "e1" / f) == slurp(dir.path / "e2" / f));
}

TEST_CASE("score command") {
  TempDir dir("score");
  std::ofstream(dir.path / "s.csv") << "label,score\ngenuine,0.9\ngenuine,0.8\ngenuine,0.3\n"
                                       "impostor,0.7\nimpostor,0.2\nimpostor,0.1\n";
  CHECK(run({"score", (dir.path / "s.csv").string(), "--out", dir.path.string()}) == kExitOk);
  CHECK(slurp(dir.path / "metrics.csv").find("zerofmr,0.333333") != std::string::npos);
}

TEST_CASE("selftest report is repeatable") {
  std::ostringstream first, second;
  print_report(first, run_checks(false));
  print_report(second, run_checks(false));
  CHECK(first.str() == second.str());
  CHECK(first.str().find("FAIL") == std::string::npos);
}

TEST_CASE("auto segmentation") {
  CHECK(!auto_segment(Image::Constant(64, 64, 0.5)).any());
  Image img = Image::Constant(64, 64, 0.5);
  img.block(0, 0, 32, 64) = ridge_image(32, 64, 7);
  const Mask m = auto_segment(img);
  CHECK(m.topRows(16).all());
  CHECK(!m.bottomRows(16).any());
}
