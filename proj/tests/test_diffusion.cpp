#include <cmath>
#include <set>

#include "doctest.h"
#include "gradcheck.hpp"
#include "phydiff/diffusion.hpp"
#include "phydiff/errors.hpp"
#include "phydiff/npnn.hpp"
#include "phydiff/rng.hpp"

using namespace phydiff;
using phydiff::testing::random_tensor;

namespace {

// Returns the exact noise that produced x_t from a known x0.
class OracleModel final : public ConditionalNoiseModel {
 public:
  OracleModel(Tensor x0, const Schedule& s) : x0_(std::move(x0)), s_(s) {}
  [[nodiscard]] Shape condition_shape() const override { return {1}; }
  [[nodiscard]] Shape sample_shape() const override { return x0_.shape(); }
  [[nodiscard]] Tensor predict(const Tensor&, const Tensor& x_t, int t) const override {
    const double ab = alpha_bar_at(s_, t);
    Tensor eps(x_t.shape());
    for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - std::sqrt(ab) * x0_[i]) / std::sqrt(1.0 - ab);
    return eps;
  }

 private:
  Tensor x0_;
  const Schedule& s_;
};

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

NpnnSpec tiny_spec(int T) {
  NpnnSpec s;
  s.encoder.height = 4;
  s.encoder.width = 4;
  s.encoder.channels = 1;
  s.encoder.q1 = 4;
  s.encoder.q2 = 4;
  s.encoder.q_last = 4;
  s.time.dim = 4;
  s.unet.base_width = 4;
  s.sample_channels = 1;
  s.max_t = T;
  return s;
}

TrainBatchSource constant_source() {
  return TrainBatchSource({4, 4, 1}, {4, 4, 1},
                          [](std::uint64_t) { return TrainPair{Tensor({4, 4, 1}, 0.5), Tensor({4, 4, 1}, 0.7)}; });
}

}  // namespace

TEST_CASE("sigmoid schedule") {
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  CHECK(s.steps() == 500);
  CHECK(s.beta(250) == doctest::Approx(0.5 * (5e-4 + 1e-2)).epsilon(1e-15));
  const double expect1 = 5e-4 + (1e-2 - 5e-4) * sigmoid(6.0 * (2.0 / 500.0 - 1.0));
  CHECK(rel(s.beta(1), expect1) < 1e-14);
  CHECK(rel(s.beta(1), 5e-4 + 9.5e-3 * sigmoid(-5.976)) < 1e-14);
  for (int t = 1; t <= 500; ++t) {
    CHECK(s.beta(t) > 5e-4);
    CHECK(s.beta(t) < 1e-2);
    if (t > 1) CHECK(s.beta(t) >= s.beta(t - 1));
    if (t > 1) CHECK(s.alpha_bar_or_one(t) < s.alpha_bar_or_one(t - 1));
    CHECK(s.alpha_bar_or_one(t) == s.alpha_bar_or_one(t - 1) * s.alpha(t));
  }
  CHECK_THROWS_AS(make_sigmoid_schedule(10, 1e-2, 5e-4), ConfigError);
  CHECK_THROWS_AS(make_sigmoid_schedule(10, 0.0, 5e-4), ConfigError);
  CHECK_THROWS_AS(make_sigmoid_schedule(10, 5e-4, 1.0), ConfigError);
  CHECK_THROWS_AS(make_sigmoid_schedule(0, 5e-4, 1e-2), ConfigError);
}

TEST_CASE("alpha_bar_at") {
  const Schedule s({0.1, 0.2, 0.3});
  CHECK(alpha_bar_at(s, 1) == doctest::Approx(0.9).epsilon(1e-15));
  CHECK(alpha_bar_at(s, 2) == doctest::Approx(0.72).epsilon(1e-15));
  CHECK(alpha_bar_at(s, 3) == doctest::Approx(0.504).epsilon(1e-15));
  CHECK_THROWS_AS((void)alpha_bar_at(s, 0), ContractError);
  CHECK_THROWS_AS((void)alpha_bar_at(s, 4), ContractError);

  const Schedule zero(std::vector<double>(7, 0.0));
  for (int t = 1; t <= 7; ++t) CHECK(alpha_bar_at(zero, t) == 1.0);

  // brute-force product oracle
  const Schedule sig = make_sigmoid_schedule(500, 5e-4, 1e-2);
  for (int t : {1, 2, 17, 250, 499, 500}) {
    double prod = 1.0;
    for (int u = 1; u <= t; ++u) prod *= 1.0 - (5e-4 + 9.5e-3 * sigmoid(6.0 * (2.0 * u / 500.0 - 1.0)));
    CHECK(rel(alpha_bar_at(sig, t), prod) < 1e-12);
  }
  CHECK(alpha_bar_at(sig, 500) < alpha_bar_at(sig, 1));
}

TEST_CASE("forward_noise") {
  // one step with beta = 0.19 gives alpha_bar = 0.81
  const Schedule s({0.19});
  const Tensor out = forward_noise(Tensor({1}, 2.0), 1, Tensor({1}, -1.0), s);
  CHECK(out[0] == doctest::Approx(1.36411).epsilon(1e-5));
  CHECK(std::abs(out[0] - (1.8 - std::sqrt(0.19))) < 1e-15);

  const Schedule id({0.0});
  RngStream rng(1);
  const Tensor x0 = random_tensor({3, 2}, rng);
  CHECK(forward_noise(x0, 1, random_tensor({3, 2}, rng), id) == x0);

  const Tensor eps = random_tensor({4}, rng);
  const Tensor z = forward_noise(Tensor({4}, 0.0), 1, eps, s);
  for (std::size_t i = 0; i < 4; ++i) CHECK(z[i] == doctest::Approx(std::sqrt(0.19) * eps[i]));

  CHECK_THROWS_AS(forward_noise(Tensor({2}), 1, Tensor({3}), s), ShapeError);
}

TEST_CASE("ddpm_mean") {
  const Schedule s({0.19});
  const double direct = (1.0 - 0.19 * 0.5 / std::sqrt(0.19)) / 0.9;
  CHECK(std::abs(ddpm_mean(Tensor({1}, 1.0), Tensor({1}, 0.5), 1, s)[0] - direct) < 1e-15);
  CHECK(ddpm_mean(Tensor({1}, 1.0), Tensor({1}, 0.5), 1, s)[0] == doctest::Approx(0.86895).epsilon(1e-5));
  CHECK(ddpm_mean(Tensor({1}, 1.0), Tensor({1}, 0.0), 1, s)[0] == doctest::Approx(1.0 / 0.9));

  const Schedule zero({0.0, 0.0});
  RngStream rng(2);
  const Tensor xt = random_tensor({5}, rng);
  CHECK(ddpm_mean(xt, random_tensor({5}, rng), 2, zero) == xt);
  CHECK_THROWS_AS(ddpm_mean(xt, xt, 0, s), ContractError);
  CHECK_THROWS_AS(ddpm_mean(xt, xt, 2, s), ContractError);
}

TEST_CASE("ddim_step") {
  SUBCASE("worked example") {
    // alpha_bar 0.8 at t=1 and 0.5 at t=2
    const Schedule s({0.2, 0.375});
    const Tensor x0 = predict_x0(Tensor({1}, 1.0), Tensor({1}, 0.5), 2, s);
    CHECK(x0[0] == doctest::Approx(0.914214).epsilon(1e-6));
    const Tensor out = ddim_step(Tensor({1}, 1.0), Tensor({1}, 0.5), 2, 1, 0.0, Tensor({1}, 0.0), s);
    CHECK(out[0] == doctest::Approx(1.04131).epsilon(1e-5));
  }
  SUBCASE("deterministic with sigma = 0") {
    const Schedule s = make_sigmoid_schedule(50, 5e-4, 1e-2);
    RngStream rng(3);
    const Tensor xt = random_tensor({6}, rng), e = random_tensor({6}, rng), psi = random_tensor({6}, rng);
    CHECK(ddim_step(xt, e, 30, 12, 0.0, psi, s) == ddim_step(xt, e, 30, 12, 0.0, psi, s));
  }
  SUBCASE("perfect-oracle inversion to tau_prev = 0") {
    const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
    RngStream rng(4);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
      const int t = static_cast<int>(rng.uniform_int(1, 500));
      const Tensor x0 = random_tensor({8}, rng, 2.0), eps = random_tensor({8}, rng);
      const Tensor xt = forward_noise(x0, t, eps, s);
      const Tensor out = ddim_step(xt, eps, t, 0, 0.0, Tensor({8}, 0.0), s);
      for (std::size_t i = 0; i < 8; ++i) worst = std::max(worst, rel(out[i], x0[i]));
    }
    CHECK(worst <= 1e-9);
  }
  SUBCASE("contract violations") {
    const Schedule s({0.2, 0.375});
    CHECK_THROWS_AS(ddim_step(Tensor({1}), Tensor({1}), 1, 1, 0.0, Tensor({1}), s), ContractError);
    CHECK_THROWS_AS(ddim_step(Tensor({1}), Tensor({2}), 2, 1, 0.0, Tensor({1}), s), ShapeError);
  }
}

TEST_CASE("DDIM with eta = 1 on consecutive steps equals the DDPM mean") {
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  RngStream rng(5);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    const int t = static_cast<int>(rng.uniform_int(2, 500));
    const Tensor xt = random_tensor({4}, rng), e = random_tensor({4}, rng);
    const double sigma = sigma_for_step(t, t - 1, 1.0, s);
    // DDPM posterior variance
    const double ab = alpha_bar_at(s, t), abp = alpha_bar_at(s, t - 1);
    CHECK(rel(sigma * sigma, (1.0 - abp) / (1.0 - ab) * s.beta(t)) < 1e-10);
    const Tensor mean = ddim_step(xt, e, t, t - 1, sigma, Tensor({4}, 0.0), s);
    const Tensor mu = ddpm_mean(xt, e, t, s);
    for (std::size_t i = 0; i < 4; ++i) worst = std::max(worst, rel(mean[i], mu[i]));
  }
  MESSAGE("worst relative deviation " << worst);
  CHECK(worst <= 1e-10);
}

TEST_CASE("marginal closure of the chained forward process") {
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  RngStream rng(6);
  const double x0 = 1.5;
  const int trials = 100000;
  for (int t : {10, 100, 500}) {
    double sum = 0.0, sum2 = 0.0;
    for (int n = 0; n < trials; ++n) {
      double x = x0;
      for (int u = 1; u <= t; ++u) x = std::sqrt(1.0 - s.beta(u)) * x + std::sqrt(s.beta(u)) * rng.normal();
      sum += x;
      sum2 += x * x;
    }
    const double mean = sum / trials;
    const double var = sum2 / trials - mean * mean;
    const double ab = alpha_bar_at(s, t);
    INFO("t = " << t);
    CHECK(rel(mean, std::sqrt(ab) * x0) <= 0.01);
    CHECK(rel(var, 1.0 - ab) <= 0.02);
  }
}

TEST_CASE("make_tau") {
  CHECK(make_tau(1, 500).tau == std::vector<int>{500});
  const TauSet full = make_tau(20, 20);
  for (int i = 0; i < 20; ++i) CHECK(full.tau[i] == i + 1);
  const TauSet def = make_tau(15, 500);
  REQUIRE(def.tau.size() == 15);
  CHECK(def.tau.back() == 500);
  CHECK(def.eta == 1.0);
  int prev = 0;
  for (int v : def.tau) {
    CHECK((v - prev == 33 || v - prev == 34));
    prev = v;
  }
  CHECK_THROWS_AS(make_tau(501, 500), ConfigError);
  CHECK_THROWS_AS(make_tau(0, 500), ConfigError);
  CHECK_THROWS_AS(make_tau(5, 500, 1.5), ConfigError);

  // property: strictly increasing, ends at T, within [1, T]
  RngStream rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int T = static_cast<int>(rng.uniform_int(1, 10000));
    const int S = static_cast<int>(rng.uniform_int(1, T));
    const TauSet ts = make_tau(S, T);
    REQUIRE(ts.tau.size() == static_cast<std::size_t>(S));
    CHECK(ts.tau.front() >= 1);
    CHECK(ts.tau.back() == T);
    for (int i = 1; i < S; ++i) REQUIRE(ts.tau[i] > ts.tau[i - 1]);
  }
}

TEST_CASE("sigma_for_step") {
  const Schedule s = make_sigmoid_schedule(500, 5e-4, 1e-2);
  CHECK(sigma_for_step(400, 200, 0.0, s) == 0.0);
  RngStream rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    const int ti = static_cast<int>(rng.uniform_int(1, 500));
    const int tp = static_cast<int>(rng.uniform_int(0, ti - 1));
    const double eta = rng.uniform();
    const double sigma = sigma_for_step(ti, tp, eta, s);
    CHECK(sigma >= 0.0);
    CHECK(sigma <= std::sqrt(1.0 - s.alpha_bar_or_one(tp)) + 1e-15);
  }
  CHECK_THROWS_AS((void)sigma_for_step(5, 5, 1.0, s), ContractError);
}

TEST_CASE("sampling with an oracle model") {
  const Schedule s = make_sigmoid_schedule(100, 5e-4, 1e-2);
  RngStream rng(9);
  const Tensor x0 = random_tensor({3, 2}, rng);
  const OracleModel oracle(x0, s);
  SUBCASE("S = 1, eta = 0 returns the encoded x0") {
    const SampleResult r = sample(oracle, Tensor({1}, 0.0), make_tau(1, 100, 0.0), s, rng);
    REQUIRE(r.x0.shape() == x0.shape());
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(rel(r.x0[i], x0[i]) < 1e-9);
  }
  SUBCASE("stochastic multi-step still lands on x0 and records a trace") {
    const SampleResult r = sample(oracle, Tensor({1}, 0.0), make_tau(10, 100, 1.0), s, rng, true);
    CHECK(r.x0_trace.size() == 10);
    for (std::size_t i = 0; i < x0.size(); ++i) CHECK(std::abs(r.x0[i] - x0[i]) < 1e-9);
  }
  SUBCASE("fixed seed gives identical outputs") {
    RngStream a(42), b(42);
    const OracleModel noisy(Tensor({3, 2}, 0.0), s);
    CHECK(sample(noisy, Tensor({1}), make_tau(10, 100), s, a).x0 ==
          sample(noisy, Tensor({1}), make_tau(10, 100), s, b).x0);
  }
  SUBCASE("eta = 0 is a deterministic function of the starting noise") {
    RngStream a(1), b(2);
    const Tensor start = random_tensor({3, 2}, rng);
    CHECK(sample_from(oracle, Tensor({1}), start, make_tau(7, 100, 0.0), s, a).x0 ==
          sample_from(oracle, Tensor({1}), start, make_tau(7, 100, 0.0), s, b).x0);
  }
  SUBCASE("condition shape mismatch") {
    CHECK_THROWS_AS(sample(oracle, Tensor({2}), make_tau(3, 100), s, rng), ShapeError);
  }
}

TEST_CASE("train") {
  const int T = 50;
  const Schedule s = make_sigmoid_schedule(T, 5e-4, 1e-2);
  const TrainBatchSource src = constant_source();
  AdamOptions o;
  o.learning_rate = 1e-3;

  SUBCASE("zero steps leaves parameters unchanged") {
    RngStream init(1), rng(2);
    NoisePredictor m(tiny_spec(T), init);
    const ParameterSet before = m.parameters();
    auto st = OptimizerState::for_params(m.parameters(), o);
    const TrainResult r = train(m, src, s, st, rng, {0, 4, {}});
    CHECK(r.losses.empty());
    for (std::size_t p = 0; p < before.size(); ++p) CHECK(before[p].value == m.parameters()[p].value);
  }
  SUBCASE("fixed seed gives identical loss traces") {
    auto run = [&] {
      RngStream init(1), rng(2);
      NoisePredictor m(tiny_spec(T), init);
      auto st = OptimizerState::for_params(m.parameters(), o);
      return train(m, src, s, st, rng, {20, 4, {}}).losses;
    };
    const auto a = run();
    CHECK(a.size() == 20);
    CHECK(a == run());
  }
  SUBCASE("shape mismatch is rejected") {
    RngStream init(1), rng(2);
    NoisePredictor m(tiny_spec(T), init);
    auto st = OptimizerState::for_params(m.parameters(), o);
    const TrainBatchSource bad({4, 4, 2}, {4, 4, 1}, [](std::uint64_t) {
      return TrainPair{Tensor({4, 4, 2}), Tensor({4, 4, 1})};
    });
    CHECK_THROWS_AS(train(m, bad, s, st, rng, {1, 1, {}}), ShapeError);
  }
  SUBCASE("non-finite loss aborts") {
    RngStream init(1), rng(2);
    NoisePredictor m(tiny_spec(T), init);
    auto st = OptimizerState::for_params(m.parameters(), o);
    const TrainBatchSource nan_src({4, 4, 1}, {4, 4, 1}, [](std::uint64_t) {
      return TrainPair{Tensor({4, 4, 1}, 0.0), Tensor({4, 4, 1}, std::nan(""))};
    });
    CHECK_THROWS_AS(train(m, nan_src, s, st, rng, {3, 1, {}}), NonFiniteLoss);
  }
}

TEST_CASE("toy convergence on a constant target") {
  const int T = 50;
  const Schedule s = make_sigmoid_schedule(T, 5e-4, 1e-2);
  RngStream init(3), rng(4);
  NoisePredictor m(tiny_spec(T), init);
  AdamOptions o;
  o.learning_rate = 1e-3;
  auto st = OptimizerState::for_params(m.parameters(), o);
  const auto losses = train(m, constant_source(), s, st, rng, {2000, 4, {}}).losses;
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 10; ++i) first += losses[i] / 10.0;
  for (int i = 1900; i < 2000; ++i) last += losses[i] / 100.0;
  MESSAGE("first-10 mean " << first << ", last-100 mean " << last);
  CHECK(last <= 0.25 * first);
}
