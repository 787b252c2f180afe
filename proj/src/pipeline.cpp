#include "ridgealign/pipeline.hpp"

#include <algorithm>
#include <cmath>

#include "ridgealign/backbone.hpp"
#include "ridgealign/coarse_gla.hpp"
#include "ridgealign/log.hpp"
#include "ridgealign/match_layer.hpp"
#include "ridgealign/scorer.hpp"

namespace ridgealign {

namespace {

constexpr Index kSegmentBlock = 16;
constexpr double kFlatVariance = 1e-12;

using BlockMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

BlockMask dilate(const BlockMask& m) {
  BlockMask out = BlockMask::Constant(m.rows(), m.cols(), false);
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index rr = r + dr, cc = c + dc;
          if (rr >= 0 && cc >= 0 && rr < m.rows() && cc < m.cols() && m(rr, cc)) out(r, c) = true;
        }
  return out;
}

BlockMask erode(const BlockMask& m) {
  BlockMask out = BlockMask::Constant(m.rows(), m.cols(), true);
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c)
      for (Index dr = -1; dr <= 1; ++dr)
        for (Index dc = -1; dc <= 1; ++dc) {
          const Index rr = r + dr, cc = c + dc;
          // Outside the raster counts as foreground so borders do not erode.
          if (rr >= 0 && cc >= 0 && rr < m.rows() && cc < m.cols() && !m(rr, cc)) out(r, c) = false;
        }
  return out;
}

bool inside_mask(const Mask& m, double x, double y) {
  const Index c = static_cast<Index>(std::lround(x)), r = static_cast<Index>(std::lround(y));
  return c >= 0 && r >= 0 && c < m.cols() && r < m.rows() && m(r, c);
}

}  // namespace

Mask auto_segment(const Image& img) {
  const Index h = img.rows(), w = img.cols();
  if (h == 0 || w == 0) return Mask(h, w);
  const double mean = img.mean();
  const double global = (img - mean).square().mean();
  // Rounding noise on a constant image is not structure.
  if (global <= kFlatVariance) return Mask::Constant(h, w, false);
  const Index br = (h + kSegmentBlock - 1) / kSegmentBlock, bc = (w + kSegmentBlock - 1) / kSegmentBlock;
  BlockMask blocks(br, bc);
  for (Index r = 0; r < br; ++r)
    for (Index c = 0; c < bc; ++c) {
      const Index y0 = r * kSegmentBlock, x0 = c * kSegmentBlock;
      const auto blk = img.block(y0, x0, std::min(kSegmentBlock, h - y0), std::min(kSegmentBlock, w - x0));
      const double m = blk.mean();
      blocks(r, c) = (blk - m).square().mean() > 0.1 * global;
    }
  blocks = erode(dilate(blocks));
  Mask out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) out(y, x) = blocks(y / kSegmentBlock, x / kSegmentBlock);
  return out;
}

void RegisterOptions::validate() const {
  if (!(theta > 0 && theta < 1)) throw ConfigError("theta must lie in (0,1)");
  FineConfig{window, 1}.validate();
  if (!(lambda >= 0)) throw ConfigError("lambda must be >= 0");
}

CorrespondenceSet match_pair(const Image& a, const Image& b, const Mask& mask_a, const Mask& mask_b,
                             const WeightArchive& weights, const RegisterOptions& opt) {
  opt.validate();
  const PaddedImage pa = pad_to_multiple(a), pb = pad_to_multiple(b);
  const BackboneFeatures fa = extract_features(pa.image, weights);
  const BackboneFeatures fb = extract_features(pb.image, weights);
  const CoarseOutput coarse = coarse_interact(fa.coarse, fb.coarse, weights);
  const double tau = weights.at("match.tau").data(0);
  const MatrixX<double> p = dual_softmax(correlation(coarse.fa, coarse.fb, tau));
  MatchSet matches = mnn_filter(p, opt.theta);
  matches.height_a = coarse.fa.height;
  matches.width_a = coarse.fa.width;
  matches.height_b = coarse.fb.height;
  matches.width_b = coarse.fb.width;
  logging::debug("coarse matches: " + std::to_string(matches.pairs.size()));

  const FineConfig fine{opt.window, weights.config().fine_rounds};
  const CorrespondenceSet refined =
      to_correspondences(refine(fa.fine, fb.fine, lift_to_fine(matches), fine, weights));
  CorrespondenceSet out;
  for (const Correspondence& c : refined.pairs) {
    if (inside_mask(mask_a, c.xa, c.ya) && inside_mask(mask_b, c.xb, c.yb)) out.pairs.push_back(c);
  }
  logging::debug("matches inside masks: " + std::to_string(out.size()));
  return out;
}

Registration register_pair(const Image& a, const Image& b, const Mask& mask_a, const Mask& mask_b,
                           const WeightArchive& weights, const RegisterOptions& opt) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("register: images must share dimensions");
  if (mask_a.rows() != a.rows() || mask_a.cols() != a.cols() || mask_b.rows() != b.rows() ||
      mask_b.cols() != b.cols()) {
    throw DimensionError("register: mask dimensions differ from the image");
  }
  Registration reg;
  reg.matches = match_pair(a, b, mask_a, mask_b, weights, opt);
  if (reg.matches.size() < 3) {
    throw InsufficientMatchesError("registration failed: insufficient matches (" +
                                   std::to_string(reg.matches.size()) + ")");
  }
  TpsModel model;
  try {
    model = tps_fit(points_b(reg.matches), points_a(reg.matches), opt.lambda);
  } catch (const SingularSystemError&) {
    throw InsufficientMatchesError("registration failed: insufficient matches (degenerate layout)");
  }
  reg.field = tps_evaluate(model, b.rows(), b.cols());
  reg.warped = warp_image(a, reg.field);
  reg.warped_mask = warp_mask(mask_a, reg.field);

  const Mask before = mask_a && mask_b;
  const Mask after = reg.warped_mask && mask_b;
  reg.ncc_before = before.count() >= 2 ? ncc(a, b, before) : 0.0;
  reg.ncc_after = after.count() >= 2 ? ncc(reg.warped, b, after) : 0.0;
  return reg;
}

Mask binarize_ridges(const Image& img, int radius) {
  const Index h = img.rows(), w = img.cols();
  // Summed-area table for box means.
  Eigen::ArrayXXd sat = Eigen::ArrayXXd::Zero(h + 1, w + 1);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) sat(y + 1, x + 1) = img(y, x) + sat(y, x + 1) + sat(y + 1, x) - sat(y, x);
  Mask out(h, w);
  for (Index y = 0; y < h; ++y)
    for (Index x = 0; x < w; ++x) {
      const Index y0 = std::max<Index>(0, y - radius), y1 = std::min(h, y + radius + 1);
      const Index x0 = std::max<Index>(0, x - radius), x1 = std::min(w, x + radius + 1);
      const double sum = sat(y1, x1) - sat(y0, x1) - sat(y1, x0) + sat(y0, x0);
      out(y, x) = img(y, x) < sum / static_cast<double>((y1 - y0) * (x1 - x0));
    }
  return out;
}

Overlay make_overlay(const Image& a, const Image& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("overlay: image sizes differ");
  const Mask ra = binarize_ridges(a), rb = binarize_ridges(b);
  Overlay o{Image::Ones(a.rows(), a.cols()), Image::Ones(a.rows(), a.cols()), Image::Ones(a.rows(), a.cols())};
  for (Index y = 0; y < a.rows(); ++y)
    for (Index x = 0; x < a.cols(); ++x) {
      if (ra(y, x) && rb(y, x)) {
        o.red(y, x) = 0.0;
        o.green(y, x) = 0.7;
        o.blue(y, x) = 0.0;
      } else if (ra(y, x)) {
        o.red(y, x) = o.green(y, x) = o.blue(y, x) = 0.55;
      } else if (rb(y, x)) {
        o.red(y, x) = 0.9;
        o.green(y, x) = 0.0;
        o.blue(y, x) = 0.0;
      }
    }
  return o;
}

}  // namespace ridgealign
