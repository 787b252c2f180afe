#include "ridgealign/backbone.hpp"

namespace ridgealign {

namespace {

struct Block {
  ag::Var v;
  Index height, width;
};

Block conv(Parameters& p, const Block& x, const std::string& name, Index k, Index stride) {
  const Index pad = k / 2;
  const numkit::ConvGeometry<double> geom{x.height, x.width, k, stride, pad};
  return {ag::conv2d(x.v, x.height, x.width, p(name), k, stride, pad), geom.out_height(), geom.out_width()};
}

ag::Var norm(Parameters& p, ag::Var x, const std::string& prefix) {
  return ag::layer_norm(x, p(prefix + ".g"), p(prefix + ".b"));
}

Block residual_stage(Parameters& p, const Block& x, const std::string& prefix, Index stride, bool project) {
  Block y = conv(p, x, prefix + ".conv1.w", 3, stride);
  y.v = ag::silu(norm(p, y.v, prefix + ".ln1"));
  y = conv(p, y, prefix + ".conv2.w", 3, 1);
  y.v = norm(p, y.v, prefix + ".ln2");
  ag::Var shortcut = project ? conv(p, x, prefix + ".proj.w", 1, stride).v : x.v;
  return {ag::silu(ag::add(y.v, shortcut)), y.height, y.width};
}

}  // namespace

PaddedImage pad_to_multiple(const Image& img, int multiple) {
  if (img.size() == 0) throw DimensionError("pad_to_multiple: empty image");
  const Index h = (img.rows() + multiple - 1) / multiple * multiple;
  const Index w = (img.cols() + multiple - 1) / multiple * multiple;
  PaddedImage out{Image::Zero(h, w), Mask::Constant(h, w, false)};
  out.image.topLeftCorner(img.rows(), img.cols()) = img;
  out.mask.topLeftCorner(img.rows(), img.cols()).setConstant(true);
  return out;
}

BackboneVars backbone_forward(Parameters& p, const Image& padded) {
  if (padded.rows() % kPadMultiple != 0 || padded.cols() % kPadMultiple != 0) {
    throw DimensionError("backbone: image " + std::to_string(padded.rows()) + "x" + std::to_string(padded.cols()) +
                         " is not padded to a multiple of 32");
  }
  ag::Graph& g = p.graph();
  Block x{g.constant(image_to_grid(padded)), padded.rows(), padded.cols()};

  Block stem = conv(p, x, "backbone.stem.w", 3, 2);
  stem.v = ag::silu(norm(p, stem.v, "backbone.stem.ln"));
  const Block c2 = residual_stage(p, stem, "backbone.s1", 1, false);
  const Block c4 = residual_stage(p, c2, "backbone.s2", 2, true);
  const Block c8 = residual_stage(p, c4, "backbone.s3", 2, true);

  ag::Var coarse = ag::add_row(conv(p, c8, "fpn.out8.w", 1, 1).v, p("fpn.out8.b"));

  // Top-down merge back to stride 2.
  ag::Var t4 = ag::add(conv(p, c4, "fpn.lat4.w", 1, 1).v, ag::upsample2x(coarse, c8.height, c8.width));
  Block p4{ag::silu(norm(p, t4, "fpn.ln4")), c4.height, c4.width};
  p4 = conv(p, p4, "fpn.smooth4.w", 3, 1);
  ag::Var t2 = ag::add(conv(p, c2, "fpn.lat2.w", 1, 1).v, ag::upsample2x(p4.v, p4.height, p4.width));
  Block p2{ag::silu(norm(p, t2, "fpn.ln2")), c2.height, c2.width};
  p2 = conv(p, p2, "fpn.smooth2.w", 3, 1);
  ag::Var fine = ag::add_row(p2.v, p("fpn.smooth2.b"));

  return {MapVar{coarse, c8.height, c8.width, 8}, MapVar{fine, c2.height, c2.width, 2}};
}

BackboneFeatures extract_features(const Image& padded, const WeightArchive& weights) {
  ag::Graph g;
  Parameters p(g, weights, false);
  const BackboneVars out = backbone_forward(p, padded);
  return {out.coarse.value(), out.fine.value()};
}

}  // namespace ridgealign
