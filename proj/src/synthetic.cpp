#include "ridgealign/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

namespace ridgealign {

Image ridge_image(Index height, Index width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double w = static_cast<double>(width), h = static_cast<double>(height);
  const double cx = w * (0.25 + 0.5 * unit(rng)), cy = h * (0.25 + 0.5 * unit(rng));
  const double period = 7.0 + 3.0 * unit(rng);
  const double squash = 0.6 + 0.8 * unit(rng);  // elliptical loops
  const double swirl = (unit(rng) - 0.5) * 0.6;
  const double bend_amp = 2.0 + 4.0 * unit(rng), bend_freq = 0.02 + 0.04 * unit(rng);
  const double bend_phase = 2.0 * std::numbers::pi * unit(rng);
  Image img(height, width);
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double dx = static_cast<double>(x) - cx, dy = (static_cast<double>(y) - cy) * squash;
      const double r = std::hypot(dx, dy);
      const double angle = std::atan2(dy, dx);
      const double radius = r + swirl * r * std::sin(angle) + bend_amp * std::sin(bend_freq * dx + bend_phase);
      img(y, x) = 0.5 + 0.5 * std::cos(2.0 * std::numbers::pi * radius / period);
    }
  }
  return img;
}

DeformationField random_tps_field(Index height, Index width, int control, double max_displacement,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> px(0.0, static_cast<double>(width - 1)), py(0.0, static_cast<double>(height - 1));
  std::uniform_real_distribution<double> disp(-max_displacement, max_displacement);
  PointList src(control, 2), dst(control, 2);
  for (int i = 0; i < control; ++i) {
    src(i, 0) = px(rng);
    src(i, 1) = py(rng);
    dst(i, 0) = src(i, 0) + disp(rng);
    dst(i, 1) = src(i, 1) + disp(rng);
  }
  DeformationField d = tps_evaluate(tps_fit(src, dst, 0.0), height, width);
  // Interpolating splines can overshoot far from the controls.
  d.dx = d.dx.cwiseMax(-max_displacement).cwiseMin(max_displacement);
  d.dy = d.dy.cwiseMax(-max_displacement).cwiseMin(max_displacement);
  return d;
}

DeformationField invert_field(const DeformationField& d, int iterations) {
  DeformationField u(d.height(), d.width());
  for (int it = 0; it < iterations; ++it) {
    DeformationField next(d.height(), d.width());
    for (Index y = 0; y < d.height(); ++y) {
      for (Index x = 0; x < d.width(); ++x) {
        const Eigen::Vector2d v =
            sample_field(d, static_cast<double>(x) + u.dx(y, x), static_cast<double>(y) + u.dy(y, x));
        next.dx(y, x) = -v.x();
        next.dy(y, x) = -v.y();
      }
    }
    u = std::move(next);
  }
  return u;
}

WarpedPair make_warped_pair(Index height, Index width, std::uint64_t seed, double max_displacement, int control) {
  WarpedPair out;
  out.forward = random_tps_field(height, width, control, max_displacement, seed * 2 + 1);
  ImagePair& p = out.pair;
  p.a = ridge_image(height, width, seed);
  p.b = warp_image(p.a, invert_field(out.forward));
  p.mask_a = full_mask(height, width);
  p.mask_b = full_mask(height, width);
  p.gt = build_gt(out.forward, p.mask_a, p.mask_b, 8);
  return out;
}

}  // namespace ridgealign
