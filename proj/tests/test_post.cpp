#include "atvi/post.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "atvi/models.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace atvi;
using namespace atvi::post;

TEST_SUITE_BEGIN("post");

TEST_CASE("hpd of a standard normal") {
  Rng rng(201);
  std::vector<double> x(100000);
  for (auto& v : x) v = rng.normal();
  const auto [lo, hi] = hpd(x, 0.95);
  CHECK(std::abs(lo + 1.96) < 0.03);
  CHECK(std::abs(hi - 1.96) < 0.03);
}

TEST_CASE("hpd degenerate and uniform cases") {
  std::vector<double> constant(200, 2.5);
  const auto [clo, chi] = hpd(constant, 0.95);
  CHECK(clo == 2.5);
  CHECK(chi == 2.5);

  Rng rng(102);
  std::vector<double> u(100000);
  for (auto& v : u) v = rng.uniform();
  const auto [ulo, uhi] = hpd(u, 0.95);
  CHECK(std::abs((uhi - ulo) - 0.95) < 0.01);
}

TEST_CASE("hpd returns the shortest window (exhaustive oracle)") {
  Rng rng(103);
  std::vector<double> x(150);
  for (auto& v : x) v = std::exp(rng.normal());
  const auto [lo, hi] = hpd(x, 0.9);
  std::sort(x.begin(), x.end());
  const auto w = static_cast<std::size_t>(std::ceil(0.9 * 150));
  for (std::size_t i = 0; i + w <= x.size(); ++i) CHECK(x[i + w - 1] - x[i] >= hi - lo - 1e-15);
  CHECK(hpd(x, 0.9) == std::pair{lo, hi});  // order-independent
}

TEST_CASE("hpd contracts") {
  std::vector<double> few(50, 1.0);
  CHECK_THROWS(hpd(few, 0.95));
  std::vector<double> x(200, 1.0);
  CHECK_THROWS(hpd(x, 1.5));
}

TEST_CASE("mode of a gaussian sample") {
  Rng rng(204);
  std::vector<double> x(100000);
  for (auto& v : x) v = 2.0 + rng.normal();
  CHECK(std::abs(mode_estimate(x) - 2.0) < 0.05);
}

TEST_CASE("mode picks the heavier component of a mixture") {
  Rng rng(105);
  std::vector<double> x;
  for (int i = 0; i < 30000; ++i) x.push_back(-1.5 + 0.3 * rng.normal());
  for (int i = 0; i < 70000; ++i) x.push_back(1.5 + 0.3 * rng.normal());
  CHECK(std::abs(mode_estimate(x) - 1.5) < 0.1);
}

TEST_CASE("mode of constant samples is that constant") {
  std::vector<double> x(500, 0.77);
  CHECK(mode_estimate(x) == 0.77);
}

TEST_CASE("interval widening doubles AIL and never loses coverage") {
  Rng rng(106);
  const int n = 200;
  std::vector<double> lo(n), hi(n), mean(n), obs(n);
  for (int i = 0; i < n; ++i) {
    mean[static_cast<std::size_t>(i)] = rng.normal();
    lo[static_cast<std::size_t>(i)] = mean[static_cast<std::size_t>(i)] - rng.uniform(0.5, 1.5);
    hi[static_cast<std::size_t>(i)] = mean[static_cast<std::size_t>(i)] + rng.uniform(0.5, 1.5);
    obs[static_cast<std::size_t>(i)] = rng.normal() * 2.0;
  }
  const Metrics base = aggregate_metrics(lo, hi, mean, obs);
  std::vector<double> lo2(n), hi2(n);
  for (int i = 0; i < n; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double mid = 0.5 * (lo[iu] + hi[iu]);
    lo2[iu] = mid - (mid - lo[iu]) * 2.0;
    hi2[iu] = mid + (hi[iu] - mid) * 2.0;
  }
  const Metrics wide = aggregate_metrics(lo2, hi2, mean, obs);
  CHECK(wide.ail == doctest::Approx(2.0 * base.ail).epsilon(1e-12));
  CHECK(wide.coverage >= base.coverage);
  CHECK(wide.mspe == base.mspe);
}

TEST_CASE("well-specified predictive distribution is calibrated") {
  models::SirConfig cfg;
  models::SirTarget sim(cfg);
  const auto truth = testing::sir_truth();
  // Point-mass posterior at the generating parameters.
  std::vector<std::vector<double>> posterior(600, truth);
  double cov = 0.0;
  int reps = 5;
  Rng rng(107);
  for (int r = 0; r < reps; ++r) {
    Rng data_rng(1000 + static_cast<std::uint64_t>(r));
    const auto held_out = sim.simulate(truth, data_rng);
    const Metrics m = predictive_metrics(posterior, sim, held_out, 600, rng);
    cov += m.coverage;
  }
  cov /= reps;
  CHECK(cov > 0.92);
  CHECK(cov <= 1.0);
}

TEST_CASE("point-mass predictive MSPE matches the observation noise") {
  models::SirConfig cfg;
  models::SirTarget sim(cfg);
  const auto truth = testing::sir_truth();
  std::vector<std::vector<double>> posterior(500, truth);
  Rng data_rng(2024);
  const auto held_out = sim.simulate(truth, data_rng);
  Rng rng(108);
  const Metrics m = predictive_metrics(posterior, sim, held_out, 500, rng);
  // Poisson noise: expected squared error per point equals the mean.
  const auto traj = sim.trajectory(truth);
  double avg_var = 0.0;
  int count = 0;
  for (const auto& ch : traj)
    for (const double v : ch) {
      avg_var += v;
      ++count;
    }
  avg_var /= count;
  CHECK(m.mspe / avg_var > 0.55);
  CHECK(m.mspe / avg_var < 1.6);
}

TEST_CASE("burden metrics are permutation-invariant in the draws") {
  models::SirConfig cfg;
  models::SirTarget sim(cfg);
  Rng rng(109);
  std::vector<std::vector<double>> posterior;
  for (int i = 0; i < 300; ++i)
    posterior.push_back({0.89 + 0.05 * rng.normal(), 0.29 + 0.02 * rng.normal(), 39.0 + rng.normal()});
  const auto truth_series = sim.trajectory(testing::sir_truth());

  const Metrics a = burden_metrics(posterior, sim, truth_series, 300);
  std::reverse(posterior.begin(), posterior.end());
  const Metrics b = burden_metrics(posterior, sim, truth_series, 300);
  CHECK(a.coverage == b.coverage);
  CHECK(a.ail == b.ail);
  // The predictive mean is a different summation order after permutation.
  CHECK(a.mspe == doctest::Approx(b.mspe).epsilon(1e-12));
}

TEST_CASE("summary json structure") {
  std::vector<ParamSummary> params{{"beta", 0.9, 0.8, 1.0}};
  Metrics m;
  m.coverage = 0.95;
  m.ail = 10.0;
  m.mspe = 3.0;
  write_summary_json("summary_test.json", params, {{"metrics", m}}, {{"final_objective", -1.25}});
  std::ifstream in("summary_test.json");
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  CHECK(text.find("\"beta\"") != std::string::npos);
  CHECK(text.find("\"hpd_lo\"") != std::string::npos);
  CHECK(text.find("\"coverage\"") != std::string::npos);
  CHECK(text.find("\"final_objective\"") != std::string::npos);
  std::remove("summary_test.json");
}

TEST_SUITE_END();
