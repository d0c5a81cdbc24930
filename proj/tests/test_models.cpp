#include "atvi/models.hpp"

#include <cmath>
#include <numbers>

#include "atvi/ode.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace atvi;
using namespace atvi::models;
namespace diff = atvi::diff;

TEST_SUITE_BEGIN("models");

TEST_CASE("rk4 on exponential decay") {
  std::vector<double> y{1.0};
  ode::OdeWork<double> w;
  auto rhs = [](double, std::span<const double> s, std::span<double> d) { d[0] = -s[0]; };
  ode::rk4_steps(rhs, 0.0, 0.01, 100, y, w);
  CHECK(std::abs(y[0] - std::exp(-1.0)) < 1e-8);

  std::vector<double> c{3.7};
  auto zero = [](double, std::span<const double>, std::span<double> d) { d[0] = 0.0; };
  ode::rk4_steps(zero, 0.0, 0.1, 50, c, w);
  CHECK(c[0] == 3.7);
}

TEST_CASE("rk4 aborts on non-finite state with the step index") {
  std::vector<double> y{1.0};
  ode::OdeWork<double> w;
  auto blowup = [](double, std::span<const double> s, std::span<double> d) { d[0] = s[0] * s[0] * 1e8; };
  try {
    ode::rk4_steps(blowup, 0.0, 1.0, 100, y, w);
    CHECK(false);
  } catch (const ode::OdeError& e) {
    CHECK(e.step >= 0);
  }
}

TEST_CASE("rk4 sensitivity to the initial condition is differentiable") {
  diff::DiffFn f = [](diff::Graph&, std::span<const diff::Scalar> p) {
    std::vector<diff::Scalar> y{p[0]};
    ode::OdeWork<diff::Scalar> w;
    auto rhs = [](double, std::span<const diff::Scalar> s, std::span<diff::Scalar> d) { d[0] = -s[0]; };
    ode::rk4_steps(rhs, 0.0, 0.01, 100, y, w);
    return y[0];
  };
  std::vector<double> point{1.0};
  CHECK(diff::grad_check(f, point, 1e-5) < 1e-6);

  // d y(1) / d y(0) = e^{-1} for dy/dt = -y.
  diff::Graph g;
  auto y0 = g.lift(1.0, true);
  std::vector<diff::Scalar> y{y0};
  ode::OdeWork<diff::Scalar> w;
  auto rhs = [](double, std::span<const diff::Scalar> s, std::span<diff::Scalar> d) { d[0] = -s[0]; };
  ode::rk4_steps(rhs, 0.0, 0.01, 100, y, w);
  CHECK(std::abs(g.backward(y[0]).at(y0) - std::exp(-1.0)) < 1e-6);
}

TEST_CASE("sir rhs: equilibrium, conservation, plug-in arithmetic") {
  std::vector<double> dy(3);
  std::vector<double> rest{250.0, 0.0, 5.0};
  sir_rhs<double>(rest, 0.89, 0.29, 255.0, dy);
  CHECK(dy[0] == 0.0);
  CHECK(dy[1] == 0.0);
  CHECK(dy[2] == 0.0);

  std::vector<double> st{250.0, 5.0, 0.0};
  sir_rhs<double>(st, 0.89, 0.29, 255.0, dy);
  CHECK(dy[0] + dy[1] + dy[2] == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(dy[1] == doctest::Approx(0.89 * 5.0 * 250.0 / 255.0 - 0.29 * 5.0).epsilon(1e-12));
}

TEST_CASE("poisson log-pmf spot values") {
  CHECK(log_poisson<double>(0.0, 1.0, std::lgamma(1.0)) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(log_poisson<double>(2.0, 2.0, std::lgamma(3.0)) ==
        doctest::Approx(std::log(2.0) - 2.0).epsilon(1e-12));
}

namespace {

SirTarget make_sir_with_rounded_truth() {
  SirConfig cfg;
  SirTarget sim(cfg);
  const auto truth = testing::sir_truth();
  const auto traj = sim.trajectory(truth);
  TimeSeriesData d;
  d.channel_names = {"infected", "recovered"};
  d.series.assign(2, std::vector<double>(21));
  for (int t = 0; t < 21; ++t) {
    d.times.push_back(t + 1.0);
    d.series[0][static_cast<std::size_t>(t)] = std::round(traj[0][static_cast<std::size_t>(t)]);
    d.series[1][static_cast<std::size_t>(t)] = std::round(traj[1][static_cast<std::size_t>(t)]);
  }
  return SirTarget(cfg, d);
}

}  // namespace

TEST_CASE("sir likelihood peaks at the generating parameters on a local grid") {
  const auto target = make_sir_with_rounded_truth();
  const auto truth = testing::sir_truth();
  const double best = target.log_likelihood_value(truth);
  for (const double db : {-0.08, 0.08})
    for (const double dg : {-0.05, 0.05}) {
      std::vector<double> p{truth[0] + db, truth[1] + dg, truth[2]};
      CHECK(target.log_likelihood_value(p) < best);
    }
  std::vector<double> ps{truth[0], truth[1], truth[2] + 6.0};
  CHECK(target.log_likelihood_value(ps) < best);
}

TEST_CASE("sir mass conservation and non-negativity along the data horizon") {
  SirConfig cfg;
  SirTarget sim(cfg);
  const std::vector<double> theta{2.5, 0.1, 200.0};
  const int per_day = 20;
  std::vector<double> y{theta[2], cfg.i0, cfg.r0};
  const double n0 = theta[2] + cfg.i0;
  ode::OdeWork<double> w;
  auto rhs = [&](double, std::span<const double> s, std::span<double> d) {
    sir_rhs<double>(s, theta[0], theta[1], n0, d);
  };
  for (int day = 1; day <= 21; ++day) {
    ode::rk4_steps(rhs, day - 1.0, 0.05, per_day, y, w);
    CHECK(std::abs(y[0] + y[1] + y[2] - n0) / n0 < 1e-6);
    for (const double v : y) CHECK(v >= -1e-6);
  }
}

TEST_CASE("sir log-likelihood gradients match finite differences") {
  const auto target = make_sir_with_rounded_truth();
  diff::DiffFn f = [&](diff::Graph&, std::span<const diff::Scalar> th) {
    return target.loglik_impl<diff::Scalar>(th);
  };
  std::vector<double> point{0.95, 0.33, 45.0};
  CHECK(diff::grad_check(f, point, 1e-5) < 1e-3);
}

TEST_CASE("seasonal transmission rate") {
  CHECK(transmission_rate<double>(17.0, 1.305, 0.0, 7.35) == 1.305);
  const double w = 0.43, phi = 7.35, b01 = 1.305;
  const double peak_t = 26.0 * phi / std::numbers::pi;
  CHECK(transmission_rate<double>(peak_t, b01, w, phi) == doctest::Approx(b01 * (1.0 + w)).epsilon(1e-12));
  CHECK(transmission_rate<double>(0.0, b01, w, phi) ==
        doctest::Approx(b01 * (1.0 + w * std::cos(-7.35))).epsilon(1e-12));
}

TEST_CASE("msir rhs: disease-free equilibrium has no infection flow") {
  MsirConfig cfg;
  MsirTarget t(cfg);
  auto y = t.initial_state();
  for (int i = 0; i < 6; ++i) {
    y[static_cast<std::size_t>(12 + i)] = 0.0;
    y[static_cast<std::size_t>(18 + i)] = 0.0;
  }
  const auto theta = testing::msir_truth();
  std::vector<double> dy(30), lam;
  std::vector<double> th(theta.begin(), theta.end());
  msir_rhs<double>(3.0, y, th, cfg, dy, lam);
  for (int i = 0; i < 6; ++i) {
    CHECK(lam[static_cast<std::size_t>(i)] == 0.0);
    CHECK(dy[static_cast<std::size_t>(12 + i)] == 0.0);
    // Mild infections likewise stay empty.
    CHECK(dy[static_cast<std::size_t>(18 + i)] == 0.0);
  }
}

TEST_CASE("msir rhs: per-class mass balance") {
  MsirConfig cfg;
  MsirTarget t(cfg);
  auto y = t.initial_state();
  // Random-ish perturbation keeps the check generic.
  for (std::size_t i = 0; i < y.size(); ++i) y[i] *= 0.8 + 0.01 * static_cast<double>(i % 7);
  const auto theta = testing::msir_truth();
  std::vector<double> dy(30), lam;
  msir_rhs<double>(11.0, y, theta, cfg, dy, lam);
  for (int i = 0; i < 6; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    double tot_deriv = 0.0;
    for (int c = 0; c < 5; ++c) tot_deriv += dy[static_cast<std::size_t>(6 * c) + iu];
    double expected = (i == 0) ? cfg.births : 0.0;
    double class_tot = 0.0, prev_tot = 0.0;
    for (int c = 0; c < 5; ++c) {
      class_tot += y[static_cast<std::size_t>(6 * c) + iu];
      if (i > 0) prev_tot += y[static_cast<std::size_t>(6 * c) + iu - 1];
    }
    if (i > 0) expected += kMsirAging[iu - 1] * prev_tot;
    expected -= kMsirAging[iu] * class_tot;
    CHECK(tot_deriv == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("msir rhs: identity contact matrix isolates the seeded class") {
  MsirConfig cfg;
  cfg.contact.fill(0.0);
  for (int i = 0; i < 6; ++i) cfg.contact[static_cast<std::size_t>(i * 6 + i)] = 1.0;
  cfg.is0_frac = 0.0;
  cfg.im0_frac = 0.0;
  MsirTarget t(cfg);
  auto y = t.initial_state();
  y[12 + 2] = 50.0;  // seed severe infections in class 3 only
  const auto theta = testing::msir_truth();
  std::vector<double> dy(30), lam;
  msir_rhs<double>(0.0, y, theta, cfg, dy, lam);
  for (int i = 0; i < 6; ++i) {
    if (i == 2)
      CHECK(lam[static_cast<std::size_t>(i)] > 0.0);
    else
      CHECK(lam[static_cast<std::size_t>(i)] == 0.0);
  }
}

TEST_CASE("negative binomial approaches Poisson for large dispersion") {
  const double lg5 = std::lgamma(5.0);
  const double nb = log_neg_binomial<double>(4.0, 5.0, 1e7, std::lgamma(1e7), lg5);
  const double po = log_poisson<double>(4.0, 5.0, lg5);
  CHECK(std::abs(nb - po) < 1e-3);
}

TEST_CASE("negative binomial simulation matches the burden mean") {
  MsirConfig cfg;
  MsirTarget sim(cfg);
  const auto theta = testing::msir_truth();
  const auto burden = sim.predictive_mean(theta);
  Rng rng(314159);
  // Average many draws of week 60, class 4.
  const double eta = burden[3][59];
  double mean = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) mean += static_cast<double>(rng.neg_binomial(eta, theta[3]));
  mean /= n;
  const double sd = std::sqrt((eta + eta * eta / theta[3]) / n);
  CHECK(std::abs(mean - eta) < 4.0 * sd);
}

TEST_CASE("msir likelihood prefers the generating seasonal amplitude") {
  MsirConfig cfg;
  MsirTarget sim(cfg);
  const auto theta = testing::msir_truth();
  Rng rng = Rng::sub(7, "msir-data");
  MsirTarget target(cfg, sim.simulate(theta, rng));
  const double best = target.log_likelihood_value(theta);
  for (const double dw : {-0.1, 0.1}) {
    auto p = theta;
    p[0] += dw;
    CHECK(target.log_likelihood_value(p) < best);
  }
}

TEST_CASE("msir log-likelihood gradients match finite differences") {
  MsirConfig cfg;
  cfg.weeks = 30;  // short horizon keeps the check quick
  MsirTarget sim(cfg);
  const auto theta = testing::msir_truth();
  Rng rng = Rng::sub(8, "msir-data");
  MsirTarget target(cfg, sim.simulate(theta, rng));
  diff::DiffFn f = [&](diff::Graph&, std::span<const diff::Scalar> th) {
    return target.loglik_impl<diff::Scalar>(th);
  };
  CHECK(diff::grad_check(f, theta, 1e-5) < 1e-3);
}

TEST_CASE("uniform prior constant") {
  CHECK(uniform_logprior_constant(surject::ParamBox::bounded({0.0, 0.0}, {1.0, 1.0})) == 0.0);
  CHECK(uniform_logprior_constant(surject::ParamBox::bounded({38.0}, {268.0})) ==
        doctest::Approx(-std::log(230.0)).epsilon(1e-15));
  CHECK_THROWS(uniform_logprior_constant(surject::ParamBox::unbounded(2)));

  SirConfig cfg;
  SirTarget t(cfg);
  std::vector<double> outside{0.0, 0.3, 50.0};
  CHECK(t.log_prior_value(outside) == -std::numeric_limits<double>::infinity());
}

TEST_CASE("gaussian target density at the mean") {
  GaussianSpec spec;
  spec.mean = {1.0, -2.0};
  spec.sd = {1.0, 1.0};
  GaussianTarget t(spec);
  CHECK(t.log_likelihood_value(spec.mean) == doctest::Approx(-std::log(2.0 * std::numbers::pi)).epsilon(1e-12));
  CHECK(t.log_prior_value(spec.mean) == 0.0);
}

TEST_CASE("boundary target: closed-form normalization") {
  BoundaryTarget t(BoundarySpec{5.0});
  CHECK(t.true_density(0.0) == doctest::Approx(5.0 / (1.0 - std::exp(-5.0))).epsilon(1e-12));
  // Quadrature of the true density integrates to one.
  double mass = 0.0;
  const int n = 100000;
  for (int i = 0; i <= n; ++i) {
    const double x = static_cast<double>(i) / n;
    mass += ((i == 0 || i == n) ? 0.5 : 1.0) * t.true_density(x);
  }
  mass /= n;
  CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("bimodal target: grid masses recover the mixture weights") {
  BimodalSpec spec;
  spec.m1 = 0.3;
  spec.s1 = 0.03;
  spec.w1 = 0.3;
  spec.m2 = 0.7;
  spec.s2 = 0.03;
  spec.w2 = 0.7;
  BimodalTarget t(spec);
  auto density = [&](double x) {
    std::vector<double> p{x};
    return std::exp(t.log_likelihood_value(p));
  };
  const auto [left, right] = testing::grid_mode_masses(density, 0.0, 1.0, 0.5);
  CHECK(left == doctest::Approx(0.3).epsilon(1e-4));
  CHECK(right == doctest::Approx(0.7).epsilon(1e-4));
}

TEST_CASE("data csv roundtrip and validation") {
  TimeSeriesData d;
  d.channel_names = {"a", "b"};
  d.times = {1.0, 2.0, 3.0};
  d.series = {{1.0, 0.0, 5.0}, {2.0, 2.0, 2.0}};
  d.write_csv("data_test.csv");
  const auto back = TimeSeriesData::read_csv("data_test.csv");
  CHECK(back.channel_names == d.channel_names);
  CHECK(back.times == d.times);
  CHECK(back.series == d.series);
  std::remove("data_test.csv");

  TimeSeriesData bad = d;
  bad.series[0][0] = -1.0;
  CHECK_THROWS(bad.validate());
  bad = d;
  bad.series[0][0] = 0.5;
  CHECK_THROWS(bad.validate());
}

TEST_CASE("simulation is deterministic given the seed") {
  SirConfig cfg;
  SirTarget sim(cfg);
  Rng r1(42), r2(42);
  const auto a = sim.simulate(testing::sir_truth(), r1);
  const auto b = sim.simulate(testing::sir_truth(), r2);
  CHECK(a.series == b.series);
}

TEST_SUITE_END();
