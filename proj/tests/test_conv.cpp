#include <cmath>
#include <vector>

#include "doctest.h"
#include "qvae/error.hpp"
#include "qvae/ops.hpp"
#include "qvae/rng.hpp"
#include "qvae/tensor.hpp"
#include "support/oracles.hpp"

using namespace qvae;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, bool requires_grad = true) {
  Tensor t = Tensor::zeros(std::move(shape), requires_grad);
  for (float& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

oracle::Vec to_double(const Tensor& t) {
  oracle::Vec out(t.size());
  const auto d = t.data();
  for (size_t i = 0; i < out.size(); ++i) out[i] = d[i];
  return out;
}

void expect_grad_matches(const Tensor& param, const oracle::Vec& fd, double tol) {
  const auto g = param.grad();
  REQUIRE(g.size() == fd.size());
  for (size_t i = 0; i < fd.size(); ++i) {
    CAPTURE(i);
    CHECK(std::abs(g[i] - fd[i]) <= tol * std::max(1.0, std::abs(fd[i])));
  }
}

double weighted_sum(const oracle::Vec& v, const oracle::Vec& w) {
  double s = 0.0;
  for (size_t i = 0; i < v.size(); ++i) s += v[i] * w[i];
  return s;
}

}  // namespace

TEST_CASE("conv2d all-ones 3x3 kernel sums the window") {
  Tensor x = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor w = Tensor::full({1, 1, 3, 3}, 1.0f);
  Tensor y = conv2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(9.0));
}

TEST_CASE("conv2d delta kernel with padding 1 is the identity") {
  Rng rng(21);
  Tensor x = random_tensor({1, 1, 4, 4}, rng, false);
  Tensor w = Tensor::zeros({1, 1, 3, 3});
  w.data()[4] = 1.0f;  // center tap
  Tensor y = conv2d(x, w, 1, 1);
  REQUIRE(y.shape() == x.shape());
  for (size_t i = 0; i < 16; ++i) CHECK(y.data()[i] == doctest::Approx(x.data()[i]));
}

TEST_CASE("conv2d matches the direct-loop oracle forward and backward") {
  Rng rng(23);
  const int B = 1, C = 2, H = 5, W = 5, O = 3, K = 3, S = 2, P = 1;
  Tensor x = random_tensor({B, C, H, W}, rng);
  Tensor w = random_tensor({O, C, K, K}, rng);
  Tensor y = conv2d(x, w, S, P);
  const oracle::Vec ref =
      oracle::conv2d(to_double(x), to_double(w), B, C, H, W, O, K, S, P);
  REQUIRE(static_cast<size_t>(y.size()) == ref.size());
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));

  backward(sum(y));
  const oracle::Vec wd = to_double(w);
  expect_grad_matches(
      x,
      oracle::central_diff(
          [&](const oracle::Vec& xv) {
            const oracle::Vec o = oracle::conv2d(xv, wd, B, C, H, W, O, K, S, P);
            double s = 0.0;
            for (double v : o) s += v;
            return s;
          },
          to_double(x)),
      1e-4);
  const oracle::Vec xd = to_double(x);
  expect_grad_matches(
      w,
      oracle::central_diff(
          [&](const oracle::Vec& wv) {
            const oracle::Vec o = oracle::conv2d(xd, wv, B, C, H, W, O, K, S, P);
            double s = 0.0;
            for (double v : o) s += v;
            return s;
          },
          to_double(w)),
      1e-4);
}

TEST_CASE("conv2d rejects mismatched channel counts") {
  Tensor x = Tensor::zeros({1, 2, 4, 4});
  Tensor w = Tensor::zeros({1, 3, 3, 3});
  CHECK_THROWS_AS(conv2d(x, w, 1, 1), ShapeError);
}

TEST_CASE("conv_transpose2d doubles spatial extent with k4 s2 p1") {
  Tensor x = Tensor::zeros({1, 3, 4, 4});
  Tensor w = Tensor::zeros({3, 2, 4, 4});
  Tensor y = conv_transpose2d(x, w, 2, 1);
  CHECK(y.shape() == Shape{1, 2, 8, 8});
}

TEST_CASE("conv_transpose2d broadcasts a single input pixel through the kernel") {
  const float v = 2.75f;
  Tensor x = Tensor::full({1, 1, 1, 1}, v);
  Tensor w = Tensor::full({1, 1, 2, 2}, 1.0f);
  Tensor y = conv_transpose2d(x, w, 1, 0);
  REQUIRE(y.shape() == Shape{1, 1, 2, 2});
  for (float o : y.data()) CHECK(o == doctest::Approx(v));
}

TEST_CASE("conv_transpose2d matches the direct-scatter oracle forward and backward") {
  Rng rng(29);
  const int B = 2, C = 2, H = 3, W = 3, O = 3, K = 4, S = 2, P = 1;
  Tensor x = random_tensor({B, C, H, W}, rng);
  Tensor w = random_tensor({C, O, K, K}, rng);
  Tensor y = conv_transpose2d(x, w, S, P);
  const oracle::Vec ref =
      oracle::conv_transpose2d(to_double(x), to_double(w), B, C, H, W, O, K, S, P);
  REQUIRE(static_cast<size_t>(y.size()) == ref.size());
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-5));

  backward(sum(y));
  const oracle::Vec wd = to_double(w);
  expect_grad_matches(
      x,
      oracle::central_diff(
          [&](const oracle::Vec& xv) {
            const oracle::Vec o =
                oracle::conv_transpose2d(xv, wd, B, C, H, W, O, K, S, P);
            double s = 0.0;
            for (double u : o) s += u;
            return s;
          },
          to_double(x)),
      1e-4);
  const oracle::Vec xd = to_double(x);
  expect_grad_matches(
      w,
      oracle::central_diff(
          [&](const oracle::Vec& wv) {
            const oracle::Vec o =
                oracle::conv_transpose2d(xd, wv, B, C, H, W, O, K, S, P);
            double s = 0.0;
            for (double u : o) s += u;
            return s;
          },
          to_double(w)),
      1e-4);
}

TEST_CASE("conv_transpose2d is the exact adjoint of conv2d") {
  // <conv(x, W), y> == <x, convT(y, W)> for every geometry where the
  // transpose lands back on the original extent. The same weight tensor is
  // used on both sides: [O,C,k,k] read as [Cin,Cout,k,k] is the same memory.
  struct Geom {
    int b, c, o, h, k, s, p;
  };
  const Geom geoms[] = {
      {1, 1, 1, 4, 3, 1, 1}, {2, 2, 3, 6, 4, 2, 1}, {1, 3, 2, 8, 4, 2, 1},
      {2, 1, 4, 5, 3, 1, 0}, {1, 2, 2, 7, 3, 2, 0},
  };
  Rng rng(31);
  for (const Geom& g : geoms) {
    CAPTURE(g.h);
    CAPTURE(g.k);
    CAPTURE(g.s);
    CAPTURE(g.p);
    REQUIRE((g.h + 2 * g.p - g.k) % g.s == 0);
    Tensor x = random_tensor({g.b, g.c, g.h, g.h}, rng, false);
    Tensor w = random_tensor({g.o, g.c, g.k, g.k}, rng, false);
    Tensor cx = conv2d(x, w, g.s, g.p);
    Tensor y = random_tensor(cx.shape(), rng, false);
    Tensor ty = conv_transpose2d(y, w, g.s, g.p);
    REQUIRE(ty.shape() == x.shape());
    const double lhs = weighted_sum(to_double(cx), to_double(y));
    const double rhs = weighted_sum(to_double(x), to_double(ty));
    CHECK(std::abs(lhs - rhs) <= 1e-5 * std::max(1.0, std::abs(lhs)));
  }
}

TEST_CASE("maxpool2d picks window maxima") {
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor y = maxpool2d(x);
  REQUIRE(y.shape() == Shape{1, 1, 1, 1});
  CHECK(y.item() == doctest::Approx(4.0));

  Rng rng(37);
  Tensor big = random_tensor({2, 3, 8, 8}, rng, false);
  Tensor pooled = maxpool2d(big);
  const oracle::Vec ref = oracle::maxpool2d(to_double(big), 2, 3, 8, 8, 2);
  REQUIRE(static_cast<size_t>(pooled.size()) == ref.size());
  for (size_t i = 0; i < ref.size(); ++i)
    CHECK(pooled.data()[i] == doctest::Approx(ref[i]));
}

TEST_CASE("maxpool2d routes gradient to the window argmax") {
  Tensor x = Tensor::from_vector({1, 1, 2, 2}, {1, 2, 3, 4}, true);
  backward(sum(maxpool2d(x)));
  CHECK(x.grad()[0] == 0.0f);
  CHECK(x.grad()[1] == 0.0f);
  CHECK(x.grad()[2] == 0.0f);
  CHECK(x.grad()[3] == 1.0f);

  // Constant window: ties break to the first element scanned.
  Tensor c = Tensor::full({1, 1, 2, 2}, 0.5f, true);
  backward(sum(maxpool2d(c)));
  CHECK(c.grad()[0] == 1.0f);
  CHECK(c.grad()[1] == 0.0f);
  CHECK(c.grad()[2] == 0.0f);
  CHECK(c.grad()[3] == 0.0f);
}

TEST_CASE("maxpool2d requires extents divisible by the window") {
  Tensor x = Tensor::zeros({1, 1, 5, 4});
  CHECK_THROWS_AS(maxpool2d(x), ShapeError);
}
