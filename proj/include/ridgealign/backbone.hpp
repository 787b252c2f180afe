#pragma once

#include "ridgealign/image.hpp"
#include "ridgealign/parameters.hpp"

namespace ridgealign {

inline constexpr int kPadMultiple = 32;

struct PaddedImage {
  Image image;
  /// True over the original extent.
  Mask mask;
};

/// Pads bottom/right with background (0) up to the next multiple of
/// `multiple` in each dimension.
PaddedImage pad_to_multiple(const Image& img, int multiple = kPadMultiple);

/// Coarse (stride 8) and fine (stride 2) feature maps of one image.
struct BackboneFeatures {
  FeatureMap<double> coarse;
  FeatureMap<double> fine;
};

/// Convolutional feature pyramid. The image must already be padded to a
/// multiple of 32; throws ArchiveError naming any missing tensor.
BackboneFeatures extract_features(const Image& padded, const WeightArchive& weights);

struct BackboneVars {
  MapVar coarse;
  MapVar fine;
};

BackboneVars backbone_forward(Parameters& params, const Image& padded);

}  // namespace ridgealign
