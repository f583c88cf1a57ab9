#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "ctpnet/autodiff.hpp"
#include "support.hpp"

using ctp::Mat;
using ctp::Var;
namespace ad = ctp::ad;
using ctptest::finite_diff_grads;
using ctptest::max_rel_error;
using ctptest::random_mat;

TEST_CASE("elementwise and matmul values") {
  Mat<double> a(2, 2), b(2, 2);
  a << 1, 2, 3, 4;
  b << 5, 6, 7, 8;
  auto va = Var<double>::constant(a), vb = Var<double>::constant(b);
  CHECK(ad::add(va, vb).value()(1, 1) == 12.0);
  CHECK(ad::mul(va, vb).value()(0, 1) == 12.0);
  CHECK(ad::matmul(va, vb).value()(0, 0) == 19.0);
  CHECK(ad::sum_all(va).item() == 10.0);
  CHECK(ad::mean_all(vb).item() == 6.5);
  CHECK(ad::relu(ad::scale(va, -1.0)).value().maxCoeff() == 0.0);
}

TEST_CASE("shape violations throw") {
  auto a = Var<double>::constant(Mat<double>::Zero(2, 3));
  auto b = Var<double>::constant(Mat<double>::Zero(3, 2));
  CHECK_THROWS_AS(ad::add(a, b), ctp::ShapeError);
  CHECK_THROWS_AS(ad::mul(a, b), ctp::ShapeError);
  CHECK_THROWS_AS(ad::matmul(a, a), ctp::ShapeError);
  CHECK_THROWS_AS(ad::slice_cols(a, 2, 2), ctp::ShapeError);
  CHECK_THROWS_AS(a.item(), ctp::ShapeError);
}

TEST_CASE("first-order gradients match finite differences on a small MLP") {
  std::mt19937_64 rng(7);
  auto w1 = Var<double>::leaf(random_mat<double>(3, 4, rng));
  auto b1 = Var<double>::leaf(random_mat<double>(1, 4, rng));
  auto w2 = Var<double>::leaf(random_mat<double>(4, 1, rng));
  auto b2 = Var<double>::leaf(random_mat<double>(1, 1, rng));
  Mat<double> x = random_mat<double>(5, 3, rng);
  Mat<double> y = random_mat<double>(5, 1, rng);

  auto forward = [&]() {
    auto h = ad::relu(ad::affine(Var<double>::constant(x), w1, b1));
    auto out = ad::affine(h, w2, b2);
    return ad::mse(out, Var<double>::constant(y));
  };

  std::vector<Var<double>> params{w1, b1, w2, b2};
  auto loss = forward();
  auto grads = ad::grad(loss, params);
  std::vector<Mat<double>> analytic;
  for (auto& g : grads) analytic.push_back(g.value());
  auto numeric = finite_diff_grads(params, [&]() { return forward().item(); });
  CHECK(max_rel_error(analytic, numeric) < 1e-6);
}

TEST_CASE("gradients flow through recurrent-style reuse of a parameter") {
  std::mt19937_64 rng(11);
  auto w = Var<double>::leaf(random_mat<double>(2, 2, rng, -0.5, 0.5));
  Mat<double> x0 = random_mat<double>(1, 2, rng);

  auto forward = [&]() {
    auto h = Var<double>::constant(x0);
    for (int t = 0; t < 6; ++t) h = ad::tanh_v(ad::matmul(h, w));
    return ad::sum_all(h);
  };

  std::vector<Var<double>> params{w};
  auto grads = ad::grad(forward(), params);
  auto numeric = finite_diff_grads(params, [&]() { return forward().item(); });
  CHECK(max_rel_error({grads[0].value()}, numeric) < 1e-6);
}

TEST_CASE("input gradient of a linear map is its weight") {
  Mat<double> w(3, 1);
  w << 0.5, -1.5, 2.0;
  auto vw = Var<double>::leaf(w);
  std::mt19937_64 rng(3);
  auto x = Var<double>::leaf(random_mat<double>(4, 3, rng));
  auto score = ad::matmul(x, vw);  // 4x1
  auto g = ad::grad_single(ad::sum_all(score), x);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) CHECK(g.value()(i, j) == Catch::Approx(w(j, 0)));
}

TEST_CASE("second-order: gradient of a norm-of-input-gradient penalty") {
  // D(x) = x.w, so the input gradient is w and the penalty (|w|-1)^2 has the
  // closed-form parameter gradient 2(|w|-1) w/|w|.
  Mat<double> w(3, 1);
  w << 1.0, 2.0, -2.0;  // |w| = 3
  auto vw = Var<double>::leaf(w);
  std::mt19937_64 rng(5);
  auto x = Var<double>::leaf(random_mat<double>(6, 3, rng));

  auto score_sum = ad::sum_all(ad::matmul(x, vw));
  auto g = ad::grad_single(score_sum, x);            // 6x3, each row == w
  auto norms = ad::row_norm(g);                      // 6x1, all == 3
  auto penalty = ad::mean_all(ad::square(ad::add_scalar(norms, -1.0)));
  CHECK(penalty.item() == Catch::Approx(4.0).margin(1e-9));

  auto dpen_dw = ad::grad_single(penalty, vw);
  Mat<double> expect = 2.0 * (3.0 - 1.0) * w / 3.0;
  for (int j = 0; j < 3; ++j) CHECK(dpen_dw.value()(j, 0) == Catch::Approx(expect(j, 0)).margin(1e-8));
}

TEST_CASE("second-order through a ReLU MLP matches finite differences") {
  std::mt19937_64 rng(23);
  auto w1 = Var<double>::leaf(random_mat<double>(3, 5, rng));
  auto b1 = Var<double>::leaf(random_mat<double>(1, 5, rng));
  auto w2 = Var<double>::leaf(random_mat<double>(5, 1, rng));
  auto b2 = Var<double>::leaf(random_mat<double>(1, 1, rng));
  Mat<double> xv = random_mat<double>(4, 3, rng);

  auto penalty = [&]() {
    auto x = Var<double>::leaf(xv);
    auto h = ad::relu(ad::affine(x, w1, b1));
    auto score = ad::affine(h, w2, b2);
    auto g = ad::grad_single(ad::sum_all(score), x);
    return ad::mean_all(ad::square(ad::add_scalar(ad::row_norm(g), -1.0)));
  };

  std::vector<Var<double>> params{w1, b1, w2, b2};
  auto grads = ad::grad(penalty(), params);
  std::vector<Mat<double>> analytic;
  for (auto& g : grads) analytic.push_back(g.value());
  auto numeric = finite_diff_grads(params, [&]() { return penalty().item(); }, 1e-6);
  CHECK(max_rel_error(analytic, numeric) < 1e-5);
}

TEST_CASE("concat and slice round-trip with gradients") {
  std::mt19937_64 rng(9);
  auto a = Var<double>::leaf(random_mat<double>(2, 3, rng));
  auto b = Var<double>::leaf(random_mat<double>(2, 2, rng));
  auto cat = ad::concat_cols<double>({a, b});
  REQUIRE(cat.cols() == 5);
  auto back = ad::slice_cols(cat, 3, 2);
  auto loss = ad::sum_all(ad::square(back));
  auto grads = ad::grad(loss, {a, b});
  CHECK(grads[0].value().isZero());
  CHECK(grads[1].value().isApprox(Mat<double>(2.0 * b.value())));

  auto rows = ad::concat_rows<double>({a, a});
  CHECK(rows.rows() == 4);
  auto g2 = ad::grad_single(ad::sum_all(rows), a);
  CHECK(g2.value().isApproxToConstant(2.0));
}

TEST_CASE("no-grad scope suppresses graph construction") {
  auto w = Var<double>::leaf(Mat<double>::Ones(2, 2));
  Var<double> out;
  {
    ad::NoGrad guard;
    out = ad::matmul(w, w);
  }
  CHECK_FALSE(out.requires_grad());
  auto g = ad::grad_single(ad::sum_all(out), w);
  CHECK(g.value().isZero());
}

TEST_CASE("disconnected inputs get zero gradients") {
  auto w = Var<double>::leaf(Mat<double>::Ones(2, 2));
  auto u = Var<double>::leaf(Mat<double>::Ones(3, 1));
  auto loss = ad::sum_all(ad::square(w));
  auto grads = ad::grad(loss, {w, u});
  CHECK(grads[0].value().isApproxToConstant(2.0));
  CHECK(grads[1].value().isZero());
  CHECK(grads[1].rows() == 3);
}

TEST_CASE("deep graphs tear down without stack exhaustion") {
  auto x = Var<double>::leaf(Mat<double>::Ones(1, 1));
  auto v = ad::add_scalar(x, 0.0);
  for (int i = 0; i < 200000; ++i) v = ad::add_scalar(v, 1e-6);
  CHECK(v.item() > 1.0);
  v = Var<double>();  // releasing the chain must not overflow the stack
  SUCCEED();
}
