#include "ridgealign/fine_refine.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ridgealign/coarse_gla.hpp"
#include "ridgealign/image.hpp"

namespace ridgealign {

namespace {

ag::Mat window_grid(int window) {
  const int half = window / 2;
  ag::Mat o(static_cast<Index>(window) * window, 2);
  for (int dy = -half; dy <= half; ++dy)
    for (int dx = -half; dx <= half; ++dx) {
      const Index k = (dy + half) * window + (dx + half);
      o(k, 0) = dx;
      o(k, 1) = dy;
    }
  return o;
}

std::vector<bool> inside(const ag::Mat& pts, Index height, Index width) {
  std::vector<bool> valid(static_cast<std::size_t>(pts.rows()));
  for (Index k = 0; k < pts.rows(); ++k) {
    valid[k] = pts(k, 0) >= 0.0 && pts(k, 0) <= static_cast<double>(width - 1) && pts(k, 1) >= 0.0 &&
               pts(k, 1) <= static_cast<double>(height - 1);
  }
  return valid;
}

/// Residual single-head attention of `x` over `source` with masked keys.
ag::Var attend(Parameters& p, const std::string& prefix, ag::Var x, ag::Var source,
               const std::vector<bool>& source_valid) {
  ag::Var gain = p(prefix + ".ln.g"), bias = p(prefix + ".ln.b");
  ag::Var nx = ag::layer_norm(x, gain, bias);
  ag::Var ns = ag::layer_norm(source, gain, bias);
  ag::Var q = ag::matmul(nx, p(prefix + ".q"));
  ag::Var k = ag::matmul(ns, p(prefix + ".k"));
  ag::Var v = ag::matmul(ns, p(prefix + ".v"));
  const double scale = 1.0 / std::sqrt(static_cast<double>(x.cols()));
  ag::Var weights = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), scale), source_valid);
  return ag::add(x, ag::matmul(ag::matmul(weights, v), p(prefix + ".o")));
}

}  // namespace

void FineConfig::validate() const {
  if (window < 3 || window % 2 == 0) throw ConfigError("fine window must be odd and >= 3");
  if (rounds < 0) throw ConfigError("fine rounds must be >= 0");
}

std::vector<LiftedMatch> lift_to_fine(const MatchSet& matches) {
  std::vector<LiftedMatch> out;
  out.reserve(matches.pairs.size());
  auto lift = [](Index flat, Index width) {
    const Index r = flat / width, c = flat % width;
    return Eigen::Vector2d(pixel_to_cell(cell_center(c, 8), 2), pixel_to_cell(cell_center(r, 8), 2));
  };
  for (const CoarseMatch& m : matches.pairs) {
    out.push_back({lift(m.i, matches.width_a), lift(m.j, matches.width_b), m.confidence});
  }
  return out;
}

FineVars refine(Parameters& p, const MapVar& fine_a, const MapVar& fine_b, const std::vector<LiftedMatch>& lifted,
                int window, int rounds) {
  FineConfig{window, rounds}.validate();
  if (fine_a.channels() != fine_b.channels()) throw DimensionError("refine: channel counts differ");
  ag::Graph& g = p.graph();
  const ag::Mat offsets = window_grid(window);
  ag::Var offsets_var = g.constant(offsets);
  const Index center = offsets.rows() / 2;
  const double scale = 1.0 / std::sqrt(static_cast<double>(fine_a.channels()));

  FineVars out;
  for (const LiftedMatch& m : lifted) {
    ag::Mat pos_a = offsets, pos_b = offsets;
    pos_a.rowwise() += m.a.transpose();
    pos_b.rowwise() += m.b.transpose();
    const std::vector<bool> valid_a = inside(pos_a, fine_a.height, fine_a.width);
    const std::vector<bool> valid_b = inside(pos_b, fine_b.height, fine_b.width);
    ag::Var patch_a = ag::bilinear_sample(fine_a.v, fine_a.height, fine_a.width, g.constant(pos_a));
    ag::Var patch_b = ag::bilinear_sample(fine_b.v, fine_b.height, fine_b.width, g.constant(pos_b));

    for (int r = 0; r < rounds; ++r) {
      const std::string prefix = "fine" + std::to_string(r);
      patch_a = attend(p, prefix + ".self", patch_a, patch_a, valid_a);
      patch_b = attend(p, prefix + ".self", patch_b, patch_b, valid_b);
      ag::Var next_a = attend(p, prefix + ".cross", patch_a, patch_b, valid_b);
      ag::Var next_b = attend(p, prefix + ".cross", patch_b, patch_a, valid_a);
      patch_a = next_a;
      patch_b = next_b;
    }

    ag::Var query = ag::gather_rows(patch_a, {center});
    ag::Var sim = ag::scale(ag::matmul(query, ag::transpose(patch_b)), scale);
    ag::Var prob = ag::softmax_rows(sim, valid_b);
    ag::Var shift = ag::matmul(prob, offsets_var);
    out.expectation.push_back(ag::add_constant(shift, m.b.transpose()));

    const ag::Mat& pv = prob.value();
    const Eigen::Vector2d mean = shift.value().row(0).transpose();
    Eigen::Vector2d var = Eigen::Vector2d::Zero();
    for (Index k = 0; k < pv.cols(); ++k) {
      var(0) += pv(0, k) * (offsets(k, 0) - mean(0)) * (offsets(k, 0) - mean(0));
      var(1) += pv(0, k) * (offsets(k, 1) - mean(1)) * (offsets(k, 1) - mean(1));
    }
    out.variance_xy.push_back(var);
  }
  return out;
}

std::vector<RefinedMatch> refine(const FeatureMap<double>& fine_a, const FeatureMap<double>& fine_b,
                                 const std::vector<LiftedMatch>& lifted, const FineConfig& cfg,
                                 const WeightArchive& weights) {
  cfg.validate();
  ag::Graph g;
  Parameters p(g, weights, false);
  const MapVar a{g.constant(fine_a.data), fine_a.height, fine_a.width, fine_a.stride};
  const MapVar b{g.constant(fine_b.data), fine_b.height, fine_b.width, fine_b.stride};
  const FineVars v = refine(p, a, b, lifted, cfg.window, cfg.rounds);
  std::vector<RefinedMatch> out;
  for (std::size_t i = 0; i < lifted.size(); ++i) {
    out.push_back({lifted[i].a, v.expectation[i].value().row(0).transpose(), v.variance_xy[i], lifted[i].confidence});
  }
  return out;
}

CorrespondenceSet to_correspondences(const std::vector<RefinedMatch>& refined) {
  CorrespondenceSet out;
  for (const RefinedMatch& m : refined) {
    out.pairs.push_back({cell_to_pixel(m.a.x(), 2), cell_to_pixel(m.a.y(), 2), cell_to_pixel(m.b.x(), 2),
                         cell_to_pixel(m.b.y(), 2), m.confidence, m.variance()});
  }
  return out;
}

void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceSet& set) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << "xA,yA,xB,yB,conf\n";
  char line[256];
  for (const Correspondence& c : set.pairs) {
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f,%.6f,%.6f\n", c.xa, c.ya, c.xb, c.yb, c.confidence);
    out << line;
  }
}

CorrespondenceSet read_correspondences_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  std::string line;
  if (!std::getline(in, line) || line.rfind("xA,yA,xB,yB,conf", 0) != 0) {
    throw IoError("'" + path.string() + "' lacks the xA,yA,xB,yB,conf header");
  }
  CorrespondenceSet set;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    Correspondence c;
    char comma;
    if (!(ss >> c.xa >> comma >> c.ya >> comma >> c.xb >> comma >> c.yb >> comma >> c.confidence)) {
      throw IoError("malformed correspondence row '" + line + "'");
    }
    set.pairs.push_back(c);
  }
  return set;
}

}  // namespace ridgealign
