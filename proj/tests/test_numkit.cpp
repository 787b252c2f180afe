#include <doctest.h>

#include <cmath>

#include "ridgealign/numkit.hpp"

using namespace ridgealign;

TEST_CASE("matmul") {
  MatrixX<double> a(2, 2), x(2, 1);
  a << 1, 2, 3, 4;
  x << 0, 1;
  const MatrixX<double> y = numkit::matmul(a, x);
  CHECK(y(0, 0) == 2);
  CHECK(y(1, 0) == 4);

  const MatrixX<double> m = MatrixX<double>::Random(3, 4);
  CHECK(numkit::matmul(MatrixX<double>::Identity(3, 3), m) == m);
  CHECK(numkit::matmul(MatrixX<double>::Zero(2, 3), MatrixX<double>::Random(3, 5)).isZero(0));
  CHECK_THROWS_AS(numkit::matmul(a, MatrixX<double>::Zero(3, 1)), DimensionError);
}

TEST_CASE("softmax rows") {
  MatrixX<double> x(3, 3);
  x << 0, 0, 0,  //
      1000, 0, 0, //
      std::log(1.0), std::log(2.0), std::log(3.0);
  const MatrixX<double> s = numkit::softmax_rows(x);
  for (int j = 0; j < 3; ++j) CHECK(s(0, j) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(std::isfinite(s(1, 0)));
  CHECK(s(1, 0) == doctest::Approx(1.0));
  CHECK(s(1, 1) == doctest::Approx(0.0));
  CHECK(std::abs(s(2, 0) - 1.0 / 6.0) < 1e-15);
  CHECK(std::abs(s(2, 1) - 2.0 / 6.0) < 1e-15);
  CHECK(std::abs(s(2, 2) - 3.0 / 6.0) < 1e-15);
}

TEST_CASE("bilinear sample") {
  const Index h = 7, w = 6;
  MatrixX<double> src(h * w, 2);
  for (Index k = 0; k < h * w; ++k) {
    src(k, 0) = static_cast<double>(k);
    src(k, 1) = std::sin(static_cast<double>(k));
  }
  MatrixX<double> pts(3, 2);
  pts << 3.0, 5.0, -10.0, -10.0, 2.5, 1.0;
  const MatrixX<double> s = numkit::bilinear_sample(src, h, w, pts);
  CHECK(s.row(0) == src.row(5 * w + 3));
  CHECK(s.row(1) == src.row(0));
  CHECK(s(2, 0) == doctest::Approx(0.5 * (src(w + 2, 0) + src(w + 3, 0))));

  MatrixX<double> edge(2, 1);
  edge << 0, 1;
  MatrixX<double> mid(1, 2);
  mid << 0.5, 0.0;
  CHECK(numkit::bilinear_sample(edge, 1, 2, mid)(0, 0) == 0.5);
}

TEST_CASE("conv, pooling and layer norm") {
  const MatrixX<double> x = MatrixX<double>::Random(5 * 4, 3);
  const MatrixX<double> id = MatrixX<double>::Identity(3, 3);
  CHECK(numkit::conv2d(x, 5, 4, id, 1, 1, 0) == x);

  MatrixX<double> p(4, 1);
  p << 1, 3, 5, 7;
  CHECK(numkit::avgpool2d(p, 2, 2, 2)(0, 0) == 4.0);

  MatrixX<double> c = MatrixX<double>::Constant(2, 4, 3.5);
  Eigen::VectorXd g = Eigen::VectorXd::Random(4), b = Eigen::VectorXd::Random(4);
  const MatrixX<double> n = numkit::layer_norm(c, g, b);
  for (Index i = 0; i < 2; ++i)
    for (Index j = 0; j < 4; ++j) CHECK(n(i, j) == b(j));
}
