#pragma once

#include <filesystem>
#include <optional>
#include <vector>

#include "ridgealign/match_layer.hpp"

namespace ridgealign {

/// Pixel coordinate of the center of cell `index` at `stride`.
inline double cell_center(Index index, int stride) {
  return static_cast<double>(stride) * static_cast<double>(index) + stride / 2.0 - 0.5;
}
/// Inverse of cell_center for a real-valued cell coordinate.
inline double pixel_to_cell(double pixel, int stride) { return (pixel + 0.5 - stride / 2.0) / stride; }
inline double cell_to_pixel(double cell, int stride) { return stride * cell + stride / 2.0 - 0.5; }

struct Correspondence {
  double xa = 0, ya = 0, xb = 0, yb = 0;
  double confidence = 1.0;
  /// Positional variance of the refined B point, fine-cell units squared.
  std::optional<double> variance;
};

/// Sub-pixel point pairs in original image pixels.
struct CorrespondenceSet {
  std::vector<Correspondence> pairs;

  std::size_t size() const { return pairs.size(); }
  bool empty() const { return pairs.empty(); }
};

struct FineConfig {
  int window = 25;  // w
  int rounds = 1;   // N_f

  void validate() const;
};

/// A coarse match expressed in stride-2 cell coordinates (x, y).
struct LiftedMatch {
  Eigen::Vector2d a;
  Eigen::Vector2d b;
  double confidence = 1.0;
};

/// Maps coarse cell centers onto the fine grid (stride 8 -> stride 2).
std::vector<LiftedMatch> lift_to_fine(const MatchSet& matches);

struct RefinedMatch {
  Eigen::Vector2d a;          // fine-cell coordinates of the A point
  Eigen::Vector2d b;          // refined expectation, fine-cell coordinates
  Eigen::Vector2d variance_xy;
  double confidence = 1.0;

  /// Total positional variance var_x + var_y.
  double variance() const { return variance_xy.sum(); }
};

/// Windowed self/cross attention followed by the similarity expectation over
/// B's window. Output count equals input count.
std::vector<RefinedMatch> refine(const FeatureMap<double>& fine_a, const FeatureMap<double>& fine_b,
                                 const std::vector<LiftedMatch>& lifted, const FineConfig& cfg,
                                 const WeightArchive& weights);

/// Converts refined fine-grid matches to original-image pixels.
CorrespondenceSet to_correspondences(const std::vector<RefinedMatch>& refined);

struct FineVars {
  /// 1 x 2 expectation per match, fine-cell coordinates.
  std::vector<ag::Var> expectation;
  std::vector<Eigen::Vector2d> variance_xy;
};

FineVars refine(Parameters& p, const MapVar& fine_a, const MapVar& fine_b, const std::vector<LiftedMatch>& lifted,
                int window, int rounds);

/// UTF-8 CSV `xA,yA,xB,yB,conf`, six decimals.
void write_correspondences_csv(const std::filesystem::path& path, const CorrespondenceSet& set);
CorrespondenceSet read_correspondences_csv(const std::filesystem::path& path);

}  // namespace ridgealign
