#pragma once

#include <cstdint>

#include "ridgealign/warpfield.hpp"

namespace ridgealign {

/// Ridge-like test pattern 0.5 + 0.5 cos(2 pi phi) with a curved phase field
/// around a random core; ridge period 7 to 10 px.
Image ridge_image(Index height, Index width, std::uint64_t seed);

/// Random smooth field from a lambda = 0 spline through `control` points
/// displaced by at most `max_displacement` px per axis.
DeformationField random_tps_field(Index height, Index width, int control, double max_displacement,
                                  std::uint64_t seed);

/// Backward field u with u(x) = -d(x + u(x)), by fixed-point iteration.
DeformationField invert_field(const DeformationField& d, int iterations = 30);

struct WarpedPair {
  ImagePair pair;
  /// Forward A -> B displacement on A's grid.
  DeformationField forward;
};

/// A is a ridge image, B is A pushed through a random forward field; GT pairs
/// come from build_gt at stride 8 with full masks.
WarpedPair make_warped_pair(Index height, Index width, std::uint64_t seed, double max_displacement = 4.0,
                            int control = 6);

}  // namespace ridgealign
