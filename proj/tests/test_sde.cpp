#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "phaseforge/sde.hpp"

using namespace phaseforge;

namespace {

double sample_std(const std::vector<double>& xs, double mean) {
  double s = 0.0;
  for (double x : xs) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

double sample_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

}  // namespace

TEST_CASE("sigma schedule matches the geometric formula") {
  NoiseSchedule s(0.01, 378.0, 1000);
  CHECK(s.sigma_at(0.0) == 0.01);
  CHECK(s.sigma_at(1.0) == 0.01 * std::pow(378.0 / 0.01, 1.0));
  CHECK(s.sigma_at(1.0) == doctest::Approx(378.0).epsilon(1e-14));
  CHECK(s.sigma_at(0.5) ==
        doctest::Approx(std::sqrt(0.01 * 378.0)).epsilon(1e-12));  // ~1.9442
  // strictly increasing
  double prev = s.sigma_at(0.0);
  for (int i = 1; i <= 50; ++i) {
    const double cur = s.sigma_at(i / 50.0);
    CHECK(cur > prev);
    prev = cur;
  }
  CHECK_THROWS_AS(s.sigma_at(-0.1), contract_error);
  CHECK_THROWS_AS(s.sigma_at(1.1), contract_error);
}

TEST_CASE("schedule construction rejects degenerate parameters") {
  CHECK_THROWS_AS(NoiseSchedule(1.0, 1.0, 100), contract_error);   // sigma_max == sigma_min
  CHECK_THROWS_AS(NoiseSchedule(-0.1, 378.0, 100), contract_error);
  CHECK_THROWS_AS(NoiseSchedule(0.01, 378.0, 0), contract_error);
  CHECK_THROWS_AS(NoiseSchedule(0.01, 378.0, 100, 1.5), contract_error);
}

TEST_CASE("diffusion coefficient is consistent with d sigma^2/dt") {
  NoiseSchedule s(0.01, 378.0, 1000);
  const double h = 1e-6;
  for (double t : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9}) {
    const double g2 = std::pow(s.diffusion_coeff(t), 2.0);
    const double fd = (std::pow(s.sigma_at(t + h), 2.0) - std::pow(s.sigma_at(t), 2.0)) / h;
    CHECK(std::abs(g2 - fd) / g2 < 1e-3);
  }
  // endpoint values against the closed form evaluated independently
  const double root = std::sqrt(2.0 * std::log(378.0 / 0.01));
  CHECK(s.diffusion_coeff(1.0) == doctest::Approx(378.0 * root).epsilon(1e-12));
  CHECK(s.diffusion_coeff(0.0) == doctest::Approx(0.01 * root).epsilon(1e-12));
}

TEST_CASE("discretize_times is a uniform strictly decreasing grid") {
  NoiseSchedule s(0.01, 378.0, 1000);
  const auto ts = s.discretize_times();
  REQUIRE(ts.size() == 1000);
  CHECK(ts.front() == 1.0);
  CHECK(ts.back() == 1e-5);
  const double step = ts[0] - ts[1];
  for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
    CHECK(ts[i] > ts[i + 1]);
    CHECK(std::abs((ts[i] - ts[i + 1]) - step) < 1e-12);
  }

  NoiseSchedule two(0.01, 378.0, 2);
  const auto t2 = two.discretize_times();
  REQUIRE(t2.size() == 2);
  CHECK(t2[0] == 1.0);
  CHECK(t2[1] == 1e-5);
}

TEST_CASE("marginal perturbation has the schedule's std and is seed-stable") {
  NoiseSchedule s(0.01, 378.0, 1000);

  SUBCASE("empirical std across a t grid") {
    Tensor x0({100000});
    for (double t : {0.1, 0.5, 0.9}) {
      Rng rng(42);
      auto [xt, z] = marginal_perturb(s, x0, t, rng);
      std::vector<double> vals(xt.raw());
      const double sd = sample_std(vals, sample_mean(vals));
      CHECK(std::abs(sd - s.sigma_at(t)) / s.sigma_at(t) < 0.02);
    }
  }

  SUBCASE("x_t = x0 + sigma z exactly") {
    Tensor x0({64});
    Rng init(3);
    for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = init.normal();
    Rng rng(7);
    auto [xt, z] = marginal_perturb(s, x0, 0.3, rng);
    for (std::size_t i = 0; i < x0.size(); ++i)
      CHECK(xt[i] == x0[i] + s.sigma_at(0.3) * z[i]);
  }

  SUBCASE("fixed seed gives identical draws") {
    Tensor x0({32});
    Rng a(11), b(11);
    auto [x1, z1] = marginal_perturb(s, x0, 0.7, a);
    auto [x2, z2] = marginal_perturb(s, x0, 0.7, b);
    for (std::size_t i = 0; i < x1.size(); ++i) {
      CHECK(x1[i] == x2[i]);
      CHECK(z1[i] == z2[i]);
    }
  }
}

TEST_CASE("reverse Euler step contracts to pure diffusion under zero score") {
  NoiseSchedule s(0.01, 378.0, 1000);
  SdeState st;
  st.x = Tensor({16});
  for (std::size_t i = 0; i < st.x.size(); ++i) st.x[i] = 0.5 * static_cast<double>(i);
  st.t = 0.5;

  const double dt = -1e-8;
  Rng rng(5), rng2(5);
  auto next = reverse_step_euler(s, st, dt, [](const Tensor& x, double) {
    Tensor z(x.shape());
    return z;
  }, rng);
  CHECK(next.t == st.t + dt);

  const double g = s.diffusion_coeff(st.t);
  Tensor z({16});
  for (std::size_t i = 0; i < z.size(); ++i) z[i] = rng2.normal();
  double diff_norm = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = next.x[i] - st.x[i];
    diff_norm += d * d;
    CHECK(next.x[i] == doctest::Approx(st.x[i] + g * std::sqrt(-dt) * z[i]).epsilon(1e-12));
  }
  CHECK(std::sqrt(diff_norm) <= g * std::sqrt(-dt) * z.norm2() * (1.0 + 1e-12));
}

TEST_CASE("reverse Euler step rejects positive dt") {
  NoiseSchedule s(0.01, 378.0, 1000);
  SdeState st;
  st.x = Tensor({4});
  st.t = 0.5;
  Rng rng(1);
  auto zero_score = [](const Tensor& x, double) { return Tensor(x.shape()); };
  CHECK_THROWS_AS(reverse_step_euler(s, st, 0.001, zero_score, rng), contract_error);
}

TEST_CASE("reverse Euler step surfaces non-finite scores") {
  NoiseSchedule s(0.01, 378.0, 1000);
  SdeState st;
  st.x = Tensor({4});
  st.t = 0.5;
  Rng rng(1);
  auto bad_score = [](const Tensor& x, double) {
    Tensor out(x.shape());
    out[0] = std::numeric_limits<double>::quiet_NaN();
    return out;
  };
  CHECK_THROWS_AS(reverse_step_euler(s, st, -0.001, bad_score, rng), numeric_error);
}

TEST_CASE("Langevin corrector skips on zero score and is stationary on a Gaussian") {
  NoiseSchedule s(0.01, 378.0, 1000);

  SUBCASE("zero score leaves the state unchanged") {
    SdeState st;
    st.x = Tensor({8});
    for (std::size_t i = 0; i < st.x.size(); ++i) st.x[i] = static_cast<double>(i);
    st.t = 0.4;
    Rng rng(2);
    auto next = corrector_step_langevin(s, st, [](const Tensor& x, double) {
      return Tensor(x.shape());
    }, 0.16, rng);
    for (std::size_t i = 0; i < st.x.size(); ++i) CHECK(next.x[i] == st.x[i]);
  }

  SUBCASE("corrector-only chain matches the closed-form marginal") {
    const double s0 = 1.0;
    const double t = 0.5;
    const double var = s0 * s0 + std::pow(s.sigma_at(t), 2.0);
    auto score = [&](const Tensor& x, double) {
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] / var;
      return out;
    };
    SdeState st;
    st.x = Tensor({4000});
    st.t = t;
    Rng rng(99);
    for (std::size_t i = 0; i < st.x.size(); ++i) st.x[i] = rng.normal();
    for (int k = 0; k < 500; ++k) st = corrector_step_langevin(s, st, score, 0.16, rng);
    std::vector<double> vals(st.x.raw());
    const double sd = sample_std(vals, sample_mean(vals));
    CHECK(std::abs(sd - std::sqrt(var)) / std::sqrt(var) < 0.05);
  }

  SUBCASE("fixed seed is deterministic") {
    SdeState st;
    st.x = Tensor({16});
    for (std::size_t i = 0; i < st.x.size(); ++i) st.x[i] = 0.1 * static_cast<double>(i);
    st.t = 0.3;
    auto score = [](const Tensor& x, double) {
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i];
      return out;
    };
    Rng a(21), b(21);
    auto r1 = corrector_step_langevin(s, st, score, 0.16, a);
    auto r2 = corrector_step_langevin(s, st, score, 0.16, b);
    for (std::size_t i = 0; i < r1.x.size(); ++i) CHECK(r1.x[i] == r2.x[i]);
  }
}

TEST_CASE("reverse sampling with the analytic Gaussian score recovers the data law") {
  // Closed-form oracle: p_t = N(0, (s0^2 + sigma^2(t)) I) for x0 ~ N(0, s0^2 I).
  NoiseSchedule s(0.01, 378.0, 500);
  const double s0 = 1.0;
  auto score = [&](const Tensor& x, double t) {
    const double var = s0 * s0 + std::pow(s.sigma_at(t), 2.0);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] / var;
    return out;
  };

  SamplerConfig cfg;  // predictor-corrector defaults
  Rng rng(123);
  Tensor terminal = reverse_sample(s, {10000}, score, cfg, rng);
  REQUIRE(terminal.all_finite());

  std::vector<double> vals(terminal.raw());
  const double mean = sample_mean(vals);
  const double sd = sample_std(vals, mean);
  CHECK(std::abs(mean) <= 0.05 * s0);
  CHECK(std::abs(sd - s0) / s0 < 0.05);
}

TEST_CASE("reverse sampling is bitwise reproducible for a fixed seed") {
  NoiseSchedule s(0.01, 378.0, 50);
  auto score = [&](const Tensor& x, double t) {
    const double var = 1.0 + std::pow(s.sigma_at(t), 2.0);
    Tensor out(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = -x[i] / var;
    return out;
  };
  SamplerConfig cfg;
  Rng a(7), b(7);
  Tensor r1 = reverse_sample(s, {64}, score, cfg, a);
  Tensor r2 = reverse_sample(s, {64}, score, cfg, b);
  for (std::size_t i = 0; i < r1.size(); ++i) CHECK(r1[i] == r2[i]);
}
