#include <doctest.h>

#include <random>

#include "ridgealign/synthetic.hpp"
#include "ridgealign/warpfield.hpp"

using namespace ridgealign;

namespace {

PointList grid_points() {
  PointList p(9, 2);
  for (int k = 0; k < 9; ++k) p.row(k) << 10.0 + 20.0 * (k % 3), 5.0 + 25.0 * (k / 3);
  return p;
}

ImagePair sample_pair() {
  ImagePair p = make_warped_pair(64, 64, 4, 3.0).pair;
  p.mask_b.block(0, 0, 10, 64) = false;
  return p;
}

bool same_pair(const ImagePair& x, const ImagePair& y) {
  if (!(x.a == y.a).all() || !(x.b == y.b).all() || !(x.mask_a == y.mask_a).all() || !(x.mask_b == y.mask_b).all())
    return false;
  if (x.gt.size() != y.gt.size()) return false;
  for (std::size_t i = 0; i < x.gt.size(); ++i) {
    const Correspondence &p = x.gt.pairs[i], &q = y.gt.pairs[i];
    if (p.xa != q.xa || p.ya != q.ya || p.xb != q.xb || p.yb != q.yb) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("thin-plate spline fit") {
  const PointList src = grid_points();
  const TpsModel id = tps_fit(src, src, 0.2);
  CHECK(id.kernel.cwiseAbs().maxCoeff() < 1e-9);
  CHECK((id.affine - (Eigen::Matrix<double, 3, 2>() << 0, 0, 1, 0, 0, 1).finished()).cwiseAbs().maxCoeff() < 1e-9);
  const DeformationField zero = tps_evaluate(id, 20, 30);
  CHECK(zero.dx.abs().maxCoeff() < 1e-9);
  CHECK(zero.dy.abs().maxCoeff() < 1e-9);

  PointList dst = src;
  dst.col(0).array() += 5.0;
  dst.col(1).array() -= 2.0;
  const TpsModel shift = tps_fit(src, dst, 0.0);
  CHECK(shift.kernel.cwiseAbs().maxCoeff() < 1e-9);
  const DeformationField constant = tps_evaluate(shift, 20, 30);
  CHECK((constant.dx - 5.0).abs().maxCoeff() < 1e-9);
  CHECK((constant.dy + 2.0).abs().maxCoeff() < 1e-9);

  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0, 63), d(-4, 4);
  PointList s(8, 2), t(8, 2);
  for (int i = 0; i < 8; ++i) {
    s.row(i) << std::round(u(rng)), std::round(u(rng));
    t.row(i) << s(i, 0) + d(rng), s(i, 1) + d(rng);
  }
  const TpsModel interp = tps_fit(s, t, 0.0);
  const DeformationField f = tps_evaluate(interp, 64, 64);
  for (int i = 0; i < 8; ++i) {
    CHECK((interp(s.row(i).transpose()) - t.row(i).transpose()).cwiseAbs().maxCoeff() < 1e-9);
    const Index x = static_cast<Index>(s(i, 0)), y = static_cast<Index>(s(i, 1));
    CHECK(std::abs(f.dx(y, x) - (t(i, 0) - s(i, 0))) < 1e-9);
    CHECK(std::abs(f.dy(y, x) - (t(i, 1) - s(i, 1))) < 1e-9);
  }

  PointList collinear(4, 2);
  collinear << 0, 0, 1, 1, 2, 2, 3, 3;
  CHECK_THROWS_AS(tps_fit(collinear, collinear, 0.0), SingularSystemError);
  CHECK_THROWS_AS(tps_fit(src, collinear, 0.0), DimensionError);
}

TEST_CASE("field composition") {
  const DeformationField dc = random_tps_field(30, 40, 5, 4.0, 1), zero(30, 40);
  const DeformationField a = compose(dc, zero), b = compose(zero, dc);
  CHECK((a.dx == dc.dx).all());
  CHECK((a.dy == dc.dy).all());
  CHECK((b.dx == dc.dx).all());
  CHECK((b.dy == dc.dy).all());
}

TEST_CASE("warping") {
  const Image img = ridge_image(32, 32, 2);
  CHECK((warp_image(img, DeformationField(32, 32)) == img).all());

  Image edge = Image::Zero(8, 8);
  edge.rightCols(4) = 1.0;
  DeformationField one(8, 8);
  one.dx.setConstant(1.0);
  const Image moved = warp_image(edge, one);
  CHECK((moved.col(2) == 0.0).all());
  CHECK((moved.col(3) == 1.0).all());
  CHECK((moved.col(7) == 0.0).all());

  Mask m = Mask::Constant(8, 8, false);
  m.block(2, 2, 3, 3) = true;
  const Mask wm = warp_mask(m, one);
  CHECK(wm.count() == 9);
  CHECK(wm(2, 1));
}

TEST_CASE("ground truth from a field") {
  const Mask full = full_mask(32, 32);
  const CorrespondenceSet id = build_gt(DeformationField(32, 32), full, full, 8);
  REQUIRE(id.size() == 16);
  for (const Correspondence& c : id.pairs) {
    CHECK(c.xa == c.xb);
    CHECK(c.ya == c.yb);
    CHECK(std::fmod(c.xa - 3.5, 8.0) == 0.0);
  }
  Mask left = Mask::Constant(32, 32, false), right = Mask::Constant(32, 32, false);
  left.leftCols(16) = true;
  right.rightCols(16) = true;
  CHECK(build_gt(DeformationField(32, 32), left, right, 8).empty());
}

TEST_CASE("augmentations") {
  const ImagePair p = sample_pair();
  CHECK(same_pair(augment_swap(augment_swap(p)), p));
  CHECK(same_pair(augment_rigid(p, 0.0, 0.0, 0.0), p));

  std::vector<Rect> rects;
  const ImagePair occluded = augment_occlude(p, 17, &rects);
  REQUIRE(!rects.empty());
  std::size_t kept = 0;
  for (const Correspondence& c : p.gt.pairs) {
    bool hidden = false;
    for (const Rect& r : rects) hidden = hidden || r.contains(c.xb, c.yb);
    if (!hidden) ++kept;
  }
  CHECK(occluded.gt.size() == kept);
  for (const Correspondence& c : occluded.gt.pairs)
    for (const Rect& r : rects) CHECK(!r.contains(c.xb, c.yb));
}

TEST_CASE("field file") {
  const auto path = std::filesystem::temp_directory_path() / "ridgealign-test.dfl";
  const DeformationField d = random_tps_field(9, 13, 4, 2.0, 3);
  write_field(path, d);
  const DeformationField back = read_field(path);
  CHECK(back.height() == 9);
  CHECK(back.width() == 13);
  CHECK((back.dx - d.dx).abs().maxCoeff() < 1e-6);
  std::filesystem::remove(path);
}
