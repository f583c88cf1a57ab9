#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>
#include <vector>

#include "ctpnet/nets.hpp"
#include "gradcheck.hpp"
#include "support.hpp"

using namespace ctp;
using ctptest::random_mat;
using ctptest::tiny_net_config;

namespace {

/// Independent scalar-loop recurrence for one sample: per-step displacement,
/// embedding affine, then the standard gate equations; no shared code with
/// the library path.
std::vector<double> reference_encode(const nets::Encoder<double>& enc,
                                     const std::vector<std::array<double, 2>>& obs) {
  const auto& ew = enc.embed.w.value();
  const auto& eb = enc.embed.b.value();
  const auto& wx = enc.cell.wx.value();
  const auto& wh = enc.cell.wh.value();
  const auto& b = enc.cell.b.value();
  int E = int(ew.cols()), H = enc.cell.hidden;
  std::vector<double> h(H, 0.0), c(H, 0.0);
  auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (std::size_t t = 0; t < obs.size(); ++t) {
    std::array<double, 2> step{0.0, 0.0};
    if (t > 0) step = {obs[t][0] - obs[t - 1][0], obs[t][1] - obs[t - 1][1]};
    std::vector<double> e(E, 0.0);
    for (int j = 0; j < E; ++j) e[j] = step[0] * ew(0, j) + step[1] * ew(1, j) + eb(0, j);

    std::vector<double> z(4 * H, 0.0);
    for (int j = 0; j < 4 * H; ++j) {
      double acc = b(0, j);
      for (int k = 0; k < E; ++k) acc += e[k] * wx(k, j);
      for (int k = 0; k < H; ++k) acc += h[k] * wh(k, j);
      z[j] = acc;
    }
    std::vector<double> h_next(H), c_next(H);
    for (int j = 0; j < H; ++j) {
      double gi = sigmoid(z[j]);
      double gf = sigmoid(z[H + j]);
      double gc = std::tanh(z[2 * H + j]);
      double go = sigmoid(z[3 * H + j]);
      c_next[j] = gf * c[j] + gi * gc;
      h_next[j] = go * std::tanh(c_next[j]);
    }
    h = h_next;
    c = c_next;
  }
  return h;
}

std::vector<Var<double>> as_steps(const std::vector<std::array<double, 2>>& obs) {
  std::vector<Var<double>> steps;
  for (const auto& p : obs) {
    Mat<double> m(1, 2);
    m << p[0], p[1];
    steps.push_back(Var<double>::constant(m));
  }
  return steps;
}

}  // namespace

TEST_CASE("encode with zero parameters yields a zero feature") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 1);
  for (auto& p : bundle.params_of("source_encoder"))
    p.assign(Mat<double>::Zero(p.rows(), p.cols()));
  std::mt19937_64 rng(2);
  auto feature = bundle.source_encoder.encode({Var<double>::constant(random_mat<double>(3, 2, rng)),
                                               Var<double>::constant(random_mat<double>(3, 2, rng))});
  CHECK(feature.value().isZero());
}

TEST_CASE("encode is deterministic and matches the reference recurrence") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 3);
  std::mt19937_64 rng(4);
  std::vector<std::array<double, 2>> obs(8);
  for (auto& p : obs) p = {rng() % 100 / 25.0 - 2.0, rng() % 100 / 25.0 - 2.0};

  auto f1 = bundle.source_encoder.encode(as_steps(obs));
  auto f2 = bundle.source_encoder.encode(as_steps(obs));
  CHECK(f1.value() == f2.value());

  auto ref = reference_encode(bundle.source_encoder, obs);
  REQUIRE(int(ref.size()) == f1.cols());
  for (int j = 0; j < f1.cols(); ++j) CHECK(f1.value()(0, j) == Catch::Approx(ref[j]).margin(1e-12));

  // perturbing the last step must change the feature
  auto perturbed = obs;
  perturbed.back()[0] += 0.01;
  auto f3 = bundle.source_encoder.encode(as_steps(perturbed));
  CHECK((f3.value() - f1.value()).cwiseAbs().maxCoeff() > 0.0);
  auto ref3 = reference_encode(bundle.source_encoder, perturbed);
  for (int j = 0; j < f3.cols(); ++j) CHECK(f3.value()(0, j) == Catch::Approx(ref3[j]).margin(1e-12));
}

TEST_CASE("encode output width is hidden_dim regardless of observation length") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 5);
  std::mt19937_64 rng(6);
  for (int lo : {2, 5, 11}) {
    std::vector<Var<double>> steps;
    for (int k = 0; k < lo; ++k) steps.push_back(Var<double>::constant(random_mat<double>(4, 2, rng)));
    auto f = bundle.source_encoder.encode(steps);
    CHECK(f.rows() == 4);
    CHECK(f.cols() == tiny_net_config().hidden_dim);
  }
}

TEST_CASE("encode rejects non-finite observations") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 7);
  Mat<double> bad(1, 2);
  bad << 1.0, std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(bundle.source_encoder.encode({Var<double>::constant(bad)}), NumericError);
}

TEST_CASE("decode emits the requested number of steps") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 8);
  std::mt19937_64 rng(9);
  Var<double> feature = Var<double>::constant(random_mat<double>(3, 4, rng));
  Var<double> seed = Var<double>::constant(random_mat<double>(3, 2, rng));
  auto one = bundle.source_decoder.decode(feature, seed, 1, nullptr);
  REQUIRE(one.size() == 1);
  CHECK(one[0].rows() == 3);
  CHECK(one[0].cols() == 2);
  auto many = bundle.source_decoder.decode(feature, seed, 7, nullptr);
  CHECK(many.size() == 7);
}

TEST_CASE("teacher forcing with the model's own outputs reproduces autoregressive decoding") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 10);
  std::mt19937_64 rng(11);
  Var<double> feature = Var<double>::constant(random_mat<double>(2, 4, rng));
  Var<double> seed = Var<double>::constant(random_mat<double>(2, 2, rng));
  auto self = bundle.source_decoder.decode(feature, seed, 5, nullptr);
  std::vector<Var<double>> teacher;
  for (const auto& o : self) teacher.push_back(o.detach());
  auto forced = bundle.source_decoder.decode(feature, seed, 5, &teacher);
  for (int k = 0; k < 5; ++k) CHECK(forced[k].value() == self[k].value());
}

TEST_CASE("decode rejects a teacher of the wrong length") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 12);
  std::mt19937_64 rng(13);
  Var<double> feature = Var<double>::constant(random_mat<double>(2, 4, rng));
  Var<double> seed = Var<double>::constant(random_mat<double>(2, 2, rng));
  std::vector<Var<double>> teacher{seed, seed};
  CHECK_THROWS_AS(bundle.source_decoder.decode(feature, seed, 3, &teacher), ShapeError);
}

TEST_CASE("zero readout final layer makes every prediction the bias") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 14);
  auto& last = bundle.source_decoder.readout.layers.back();
  last.w.assign(Mat<double>::Zero(last.w.rows(), last.w.cols()));
  Mat<double> bias(1, 2);
  bias << 0.3, -0.2;
  last.b.assign(bias);
  std::mt19937_64 rng(15);
  auto outs = bundle.source_decoder.decode(Var<double>::constant(random_mat<double>(4, 4, rng)),
                                           Var<double>::constant(random_mat<double>(4, 2, rng)), 6,
                                           nullptr);
  for (const auto& o : outs)
    for (int i = 0; i < o.rows(); ++i) {
      CHECK(o.value()(i, 0) == Catch::Approx(0.3));
      CHECK(o.value()(i, 1) == Catch::Approx(-0.2));
    }
}

TEST_CASE("critic with zero parameters scores zero") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 16);
  for (auto& p : bundle.params_of("feature_critic"))
    p.assign(Mat<double>::Zero(p.rows(), p.cols()));
  std::mt19937_64 rng(17);
  auto score = bundle.feature_critic.score(Var<double>::constant(random_mat<double>(6, 4, rng)));
  CHECK(score.value().isZero());
  CHECK(score.cols() == 1);
}

TEST_CASE("single-layer linear critic equals the dot-product oracle") {
  nets::Critic<double> critic;
  std::mt19937_64 rng(18);
  critic.mlp = nets::Mlp<double>::init({3, 1}, rng);
  Mat<double> x = random_mat<double>(5, 3, rng);
  auto scores = critic.score(Var<double>::constant(x));
  const auto& w = critic.mlp.layers[0].w.value();
  double b = critic.mlp.layers[0].b.value()(0, 0);
  for (int i = 0; i < 5; ++i) {
    double expect = b;
    for (int j = 0; j < 3; ++j) expect += x(i, j) * w(j, 0);
    CHECK(scores.value()(i, 0) == Catch::Approx(expect).margin(1e-12));
  }
}

TEST_CASE("critic scores move continuously with their input") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 19);
  std::mt19937_64 rng(20);
  Mat<double> x = random_mat<double>(1, 4, rng);
  double base = bundle.feature_critic.score(Var<double>::constant(x)).item();
  Mat<double> nudged = x;
  nudged(0, 2) += 1e-7;
  double moved = bundle.feature_critic.score(Var<double>::constant(nudged)).item();
  CHECK(std::abs(moved - base) < 1e-4);
  CHECK_THROWS_AS(bundle.feature_critic.score(Var<double>::constant(random_mat<double>(1, 5, rng))),
                  ShapeError);
}

TEST_CASE("identity-initialized adaptor returns its input") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 21);
  std::mt19937_64 rng(22);
  Mat<double> x = random_mat<double>(4, 8, rng);  // 4 steps = 2 chunks of ca_window 2
  auto out = bundle.offset_adaptor.adapt(Var<double>::constant(x));
  CHECK(out.value() == x);
  CHECK(out.rows() == 4);
  CHECK(out.cols() == 8);
}

TEST_CASE("adaptor chunks are independent and order-equivariant") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 23);
  std::mt19937_64 rng(24);
  auto params = bundle.params_of("offset_adaptor");
  for (auto& p : params) p.assign(random_mat<double>(p.rows(), p.cols(), rng, -0.5, 0.5));

  Mat<double> x = random_mat<double>(2, 8, rng);
  auto out = bundle.offset_adaptor.adapt(Var<double>::constant(x)).value();

  // altering chunk 2 leaves chunk 1's output untouched
  Mat<double> x2 = x;
  x2.block(0, 4, 2, 4) = random_mat<double>(2, 4, rng);
  auto out2 = bundle.offset_adaptor.adapt(Var<double>::constant(x2)).value();
  CHECK(out2.leftCols(4) == out.leftCols(4));
  CHECK(out2.rightCols(4) != out.rightCols(4));

  // swapping the chunks swaps the outputs
  Mat<double> swapped(2, 8);
  swapped.leftCols(4) = x.rightCols(4);
  swapped.rightCols(4) = x.leftCols(4);
  auto out_sw = bundle.offset_adaptor.adapt(Var<double>::constant(swapped)).value();
  CHECK(out_sw.leftCols(4).isApprox(out.rightCols(4)));
  CHECK(out_sw.rightCols(4).isApprox(out.leftCols(4)));
}

TEST_CASE("adaptor rejects horizons not divisible by the window") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 25);
  CHECK_THROWS_AS(bundle.offset_adaptor.adapt(Var<double>::constant(Mat<double>::Zero(1, 6))),
                  ConfigError);
}

TEST_CASE("net config validation catches bad shapes") {
  NetConfig cfg = tiny_net_config();
  CHECK_NOTHROW(cfg.validate(8, 12));
  cfg.ca_window = 13;
  CHECK_THROWS_AS(cfg.validate(8, 12), ConfigError);
  cfg = tiny_net_config();
  cfg.ca_window = 5;  // 12 % 5 != 0
  CHECK_THROWS_AS(cfg.validate(8, 12), ConfigError);
  cfg = tiny_net_config();
  cfg.hidden_dim = 0;
  CHECK_THROWS_AS(cfg.validate(8, 12), ConfigError);
}

TEST_CASE("copying the source encoder into the target encoder") {
  auto bundle = ModelBundle<double>::init(tiny_net_config(), 26);
  bundle.copy_source_encoder_to_target();
  std::mt19937_64 rng(27);
  std::vector<Var<double>> steps;
  for (int k = 0; k < 4; ++k) steps.push_back(Var<double>::constant(random_mat<double>(2, 2, rng)));
  CHECK(bundle.source_encoder.encode(steps).value() ==
        bundle.target_encoder.encode(steps).value());
}

TEST_CASE("analytic gradients match finite differences for all five networks") {
  auto enc = ctptest::gradcheck_encoder(31);
  CAPTURE(enc.n_params);
  CHECK(enc.n_params <= 1000);
  CHECK(enc.max_rel < 1e-3);

  auto dec = ctptest::gradcheck_decoder(32);
  CHECK(dec.n_params <= 1000);
  CHECK(dec.max_rel < 1e-3);

  auto fc = ctptest::gradcheck_feature_critic(33);
  CHECK(fc.n_params <= 1000);
  CHECK(fc.max_rel < 1e-3);

  auto oc = ctptest::gradcheck_offset_critic(34);
  CHECK(oc.n_params <= 1000);
  CHECK(oc.max_rel < 1e-3);

  auto ca = ctptest::gradcheck_adaptor(35);
  CHECK(ca.n_params <= 1000);
  CHECK(ca.max_rel < 1e-3);
}

TEST_CASE("single-precision gradients stay within the relaxed tolerance") {
  auto bundle = ModelBundle<float>::init(tiny_net_config(), 40);
  std::mt19937_64 rng(41);
  std::vector<Var<float>> steps;
  for (int k = 0; k < 3; ++k) steps.push_back(Var<float>::constant(random_mat<float>(2, 2, rng)));
  Mat<float> target = random_mat<float>(2, 4, rng);
  auto params = bundle.params_of("source_encoder");

  auto forward = [&]() {
    return ad::mse(bundle.source_encoder.encode(steps), Var<float>::constant(target));
  };
  auto grads = ad::grad(forward(), params);

  // central differences at float32; compare against the analytic result
  double worst = 0.0;
  float h = 1e-2f;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Mat<float> saved = params[pi].value();
    for (Eigen::Index i = 0; i < saved.rows(); ++i)
      for (Eigen::Index j = 0; j < saved.cols(); ++j) {
        Mat<float> bumped = saved;
        bumped(i, j) = saved(i, j) + h;
        params[pi].assign(bumped);
        float up = forward().item();
        bumped(i, j) = saved(i, j) - h;
        params[pi].assign(bumped);
        float down = forward().item();
        params[pi].assign(saved);
        double numeric = double(up - down) / (2.0 * h);
        double analytic = double(grads[pi].value()(i, j));
        worst = std::max(worst, std::abs(analytic - numeric) /
                                    std::max({std::abs(analytic), std::abs(numeric), 0.05}));
      }
  }
  CHECK(worst < 1e-2);
}
