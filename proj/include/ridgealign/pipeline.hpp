#pragma once

#include <optional>
#include <stdexcept>

#include "ridgealign/fine_refine.hpp"
#include "ridgealign/warpfield.hpp"

namespace ridgealign {

class InsufficientMatchesError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Foreground where the 16x16 block variance exceeds 10% of the global
/// variance, followed by a block-level closing.
Mask auto_segment(const Image& img);

struct RegisterOptions {
  double theta = 0.2;
  int window = 25;
  double lambda = 0.2;

  static RegisterOptions from(const ModelConfig& config) { return {config.theta, config.window, config.lambda}; }
  void validate() const;
};

struct Registration {
  CorrespondenceSet matches;
  /// Backward field on B's grid pointing into A.
  DeformationField field;
  /// A resampled into B's frame, and its mask.
  Image warped;
  Mask warped_mask;
  double ncc_before = 0;
  double ncc_after = 0;
};

/// Matches A against B and warps A onto B through a TPS fitted to the
/// matches. Both images must share dimensions. Throws
/// InsufficientMatchesError when fewer than 3 usable matches remain.
Registration register_pair(const Image& a, const Image& b, const Mask& mask_a, const Mask& mask_b,
                           const WeightArchive& weights, const RegisterOptions& opt);

/// Matching only: coarse match, refinement, and mask filtering.
CorrespondenceSet match_pair(const Image& a, const Image& b, const Mask& mask_a, const Mask& mask_b,
                             const WeightArchive& weights, const RegisterOptions& opt);

/// Ridge pixels: darker than the mean of their (2 * radius + 1)^2 neighborhood.
Mask binarize_ridges(const Image& img, int radius = 4);

struct Overlay {
  Image red, green, blue;
};

/// Green where both ridge maps agree, gray for ridges of A only, red for
/// ridges of B only, white elsewhere.
Overlay make_overlay(const Image& a, const Image& b);

}  // namespace ridgealign
