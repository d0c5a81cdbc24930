#pragma once

#include <array>
#include <atomic>
#include <cmath>
#include <memory>
#include <numbers>
#include <span>

#include "atvi/ode.hpp"
#include "atvi/target.hpp"

namespace atvi::models {

/// Constant log-density of the uniform prior over a bounded box; throws on an
/// unbounded side.
double uniform_logprior_constant(const surject::ParamBox& box);

template <class S>
S log_poisson(double y, const S& lambda, double lgamma_y1) {
  using std::log;
  return y * log(lambda) - lambda - lgamma_y1;
}

/// Negative binomial with mean eta and dispersion nu (Var = eta + eta^2/nu).
template <class S>
S log_neg_binomial(double y, const S& eta, const S& nu, const S& lgamma_nu, double lgamma_y1) {
  using std::lgamma;
  using std::log;
  using diff::lgamma;
  return lgamma(y + nu) - lgamma_nu - lgamma_y1 + nu * log(nu / (nu + eta)) + y * log(eta / (nu + eta));
}

// --- SIR ----------------------------------------------------------------

/// dS = -beta*I*S/N, dI = beta*I*S/N - gamma*I, dR = gamma*I.
template <class S>
void sir_rhs(std::span<const S> y, const S& beta, const S& gamma, const S& n, std::span<S> dy) {
  const S infection = beta * y[1] * y[0] / n;
  const S recovery = gamma * y[1];
  dy[0] = -infection;
  dy[1] = infection - recovery;
  dy[2] = recovery;
}

struct SirConfig {
  surject::ParamBox box = surject::ParamBox::bounded({0.1, 0.05, 38.0}, {3.0, 1.5, 268.0});
  double step = 0.05;  // days
  int days = 21;
  double i0 = 1.0;  // a deterministic outbreak needs a seed infection
  double r0 = 0.0;
};

/// theta = (beta, gamma, S0); Poisson observation of (I_t, R_t) at integer days.
class SirTarget final : public Target {
 public:
  SirTarget(SirConfig cfg, TimeSeriesData data);
  explicit SirTarget(SirConfig cfg);  // simulation-only (no data)

  int dim() const override { return 3; }
  const surject::ParamBox& box() const override { return cfg_.box; }
  std::vector<std::string> param_names() const override { return {"beta", "gamma", "s0"}; }

  diff::Scalar log_prior(std::span<const diff::Scalar> theta) const override;
  diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const override;
  double log_prior_value(std::span<const double> theta) const override;
  double log_likelihood_value(std::span<const double> theta) const override;

  bool can_simulate() const override { return true; }
  TimeSeriesData simulate(std::span<const double> theta, Rng& rng) const override;
  std::vector<std::vector<double>> predictive_mean(std::span<const double> theta) const override;

  const SirConfig& config() const { return cfg_; }
  const TimeSeriesData& data() const { return data_; }
  long clamp_count() const { return clamps_.load(); }

  template <class S>
  S loglik_impl(std::span<const S> theta) const {
    const int per_day = static_cast<int>(std::lround(1.0 / cfg_.step));
    std::vector<S> y{theta[2], S{cfg_.i0}, S{cfg_.r0}};
    ode::OdeWork<S> w;
    const S n = theta[2] + (cfg_.i0 + cfg_.r0);
    auto rhs = [&](double, std::span<const S> st, std::span<S> d) { sir_rhs<S>(st, theta[0], theta[1], n, d); };
    S ll{0.0};
    for (int day = 1; day <= cfg_.days; ++day) {
      ode::rk4_steps(rhs, day - 1.0, cfg_.step, per_day, y, w);
      const S it = clamp_rate(y[1]);
      const S rt = clamp_rate(y[2]);
      const auto td = static_cast<std::size_t>(day - 1);
      ll += log_poisson(data_.series[0][td], it, lg1_[td]);
      ll += log_poisson(data_.series[1][td], rt, lg2_[td]);
    }
    return ll;
  }

  /// Deterministic (I_t, R_t) trajectory at integer days.
  std::vector<std::vector<double>> trajectory(std::span<const double> theta) const;

 private:
  template <class S>
  S clamp_rate(const S& lambda) const {
    if (diff::value_of(lambda) <= 1e-10) {
      ++clamps_;
      using diff::max;
      using std::max;
      return max(lambda, S{1e-10});
    }
    return lambda;
  }

  SirConfig cfg_;
  TimeSeriesData data_;
  double prior_const_ = 0.0;
  std::vector<double> lg1_, lg2_;  // lgamma(y+1) per observation
  mutable std::atomic<long> clamps_{0};
};

// --- MSIR ----------------------------------------------------------------

inline constexpr std::array<double, 6> kMsirAging = {1.0 / 8.0,  1.0 / 8.0,  1.0 / 8.0,
                                                     1.0 / 24.0, 1.0 / 48.0, 1.0 / 144.0};

struct MsirConfig {
  surject::ParamBox box = surject::ParamBox::bounded(
      {0.0, 0.0, 0.001, 0.1, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0},
      {1.0, 52.0, 0.1, 5.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0});
  double step = 0.1;  // weeks
  int weeks = 118;
  std::array<double, 6> pop = {8000.0, 8000.0, 8000.0, 24000.0, 48000.0, 144000.0};
  std::array<double, 36> contact = {};  // C[i*6+j]; defaults to homogeneous mixing
  double births = 1000.0;               // per week, into the youngest class
  // Initial compartment fractions of each class population.
  double m0_frac = 0.05, is0_frac = 0.001, im0_frac = 0.003, r0_frac = 0.3;

  MsirConfig() { contact.fill(1.0); }
};

/// Seasonal transmission rate beta_i(t) = beta0_i * (1 + w cos((2 pi t - 52 phi)/52)).
template <class S>
S transmission_rate(double t, const S& beta0_i, const S& w, const S& phi) {
  using std::cos;
  using diff::cos;
  const S arg = (2.0 * std::numbers::pi * t - 52.0 * phi) / 52.0;
  return beta0_i * (1.0 + w * cos(arg));
}

/// Force of infection lambda_i = sum_j beta_j(t) C_ij (Is_j + 0.5 Im_j)/N_j.
/// State layout: [M(6), S(6), Is(6), Im(6), R(6)]; theta = (w, phi, rho, nu, beta01..beta06).
template <class S>
void msir_lambda(double t, std::span<const S> y, std::span<const S> theta, const MsirConfig& cfg,
                 std::vector<S>& lambda_out) {
  const auto Is = y.subspan(12, 6);
  const auto Im = y.subspan(18, 6);
  std::array<S, 6> beta;
  for (int j = 0; j < 6; ++j)
    beta[static_cast<std::size_t>(j)] =
        transmission_rate(t, theta[static_cast<std::size_t>(4 + j)], theta[0], theta[1]);
  std::array<S, 6> press;
  for (int j = 0; j < 6; ++j)
    press[static_cast<std::size_t>(j)] = (Is[static_cast<std::size_t>(j)] + 0.5 * Im[static_cast<std::size_t>(j)]) /
                                         cfg.pop[static_cast<std::size_t>(j)];
  lambda_out.assign(6, S{0.0});
  for (int i = 0; i < 6; ++i) {
    S lam{0.0};
    for (int j = 0; j < 6; ++j) {
      const double c = cfg.contact[static_cast<std::size_t>(i * 6 + j)];
      if (c != 0.0) lam += c * (beta[static_cast<std::size_t>(j)] * press[static_cast<std::size_t>(j)]);
    }
    lambda_out[static_cast<std::size_t>(i)] = lam;
  }
}

template <class S>
void msir_rhs(double t, std::span<const S> y, std::span<const S> theta, const MsirConfig& cfg,
              std::span<S> dy, std::vector<S>& lambda_scratch) {
  const auto M = y.subspan(0, 6);
  const auto Su = y.subspan(6, 6);
  const auto Is = y.subspan(12, 6);
  const auto Im = y.subspan(18, 6);
  const auto R = y.subspan(24, 6);
  msir_lambda<S>(t, y, theta, cfg, lambda_scratch);

  for (int i = 0; i < 6; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double a_out = kMsirAging[iu];
    const S lam_s = lambda_scratch[iu] * Su[iu];
    const double birth = (i == 0) ? cfg.births : 0.0;
    if (i > 0) {
      const double a_in = kMsirAging[iu - 1];
      dy[iu] = a_in * M[iu - 1] - a_out * M[iu] + birth - (1.0 / 13.0) * M[iu];
      dy[6 + iu] = a_in * Su[iu - 1] - a_out * Su[iu] + (1.0 / 13.0) * M[iu] - lam_s + (1.0 / 52.0) * R[iu];
      dy[12 + iu] = a_in * Is[iu - 1] - a_out * Is[iu] + (6.0 / 25.0) * lam_s - Is[iu];
      dy[18 + iu] = a_in * Im[iu - 1] - a_out * Im[iu] + (19.0 / 25.0) * lam_s - 2.0 * Im[iu];
      dy[24 + iu] = a_in * R[iu - 1] - a_out * R[iu] + Is[iu] + 2.0 * Im[iu] - (1.0 / 52.0) * R[iu];
    } else {
      dy[iu] = -a_out * M[iu] + birth - (1.0 / 13.0) * M[iu];
      dy[6 + iu] = -a_out * Su[iu] + (1.0 / 13.0) * M[iu] - lam_s + (1.0 / 52.0) * R[iu];
      dy[12 + iu] = -a_out * Is[iu] + (6.0 / 25.0) * lam_s - Is[iu];
      dy[18 + iu] = -a_out * Im[iu] + (19.0 / 25.0) * lam_s - 2.0 * Im[iu];
      dy[24 + iu] = -a_out * R[iu] + Is[iu] + 2.0 * Im[iu] - (1.0 / 52.0) * R[iu];
    }
  }
}

/// Weekly reported severe cases per age class, negative-binomial around the
/// disease burden eta_i(t) = (6/25) rho lambda_i(t) S_i(t).
class MsirTarget final : public Target {
 public:
  MsirTarget(MsirConfig cfg, TimeSeriesData data);
  explicit MsirTarget(MsirConfig cfg);

  int dim() const override { return 10; }
  const surject::ParamBox& box() const override { return cfg_.box; }
  std::vector<std::string> param_names() const override {
    return {"w", "phi", "rho", "nu", "beta01", "beta02", "beta03", "beta04", "beta05", "beta06"};
  }

  diff::Scalar log_prior(std::span<const diff::Scalar> theta) const override;
  diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const override;
  double log_prior_value(std::span<const double> theta) const override;
  double log_likelihood_value(std::span<const double> theta) const override;

  bool can_simulate() const override { return true; }
  TimeSeriesData simulate(std::span<const double> theta, Rng& rng) const override;
  /// Burden series eta_i(t), 6 channels x weeks.
  std::vector<std::vector<double>> predictive_mean(std::span<const double> theta) const override;

  const MsirConfig& config() const { return cfg_; }
  const TimeSeriesData& data() const { return data_; }
  long clamp_count() const { return clamps_.load(); }

  std::vector<double> initial_state() const;

  template <class S>
  S loglik_impl(std::span<const S> theta) const {
    using diff::lgamma;
    using std::lgamma;
    const int per_week = static_cast<int>(std::lround(1.0 / cfg_.step));
    std::vector<S> y;
    for (const double v : initial_state()) y.push_back(S{v});
    ode::OdeWork<S> w;
    std::vector<S> lam;
    auto rhs = [&](double t, std::span<const S> st, std::span<S> d) { msir_rhs<S>(t, st, theta, cfg_, d, lam); };
    const S& rho = theta[2];
    const S& nu = theta[3];
    const S lgamma_nu = lgamma(nu);
    S ll{0.0};
    for (int week = 1; week <= cfg_.weeks; ++week) {
      ode::rk4_steps(rhs, week - 1.0, cfg_.step, per_week, y, w);
      msir_lambda<S>(static_cast<double>(week), y, theta, cfg_, lam);
      for (int i = 0; i < 6; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        S eta = (6.0 / 25.0) * (rho * (lam[iu] * y[6 + iu]));
        if (diff::value_of(eta) <= 1e-10) {
          ++clamps_;
          using diff::max;
          using std::max;
          eta = max(eta, S{1e-10});
        }
        ll += log_neg_binomial(data_.series[iu][static_cast<std::size_t>(week - 1)], eta, nu, lgamma_nu,
                               lgy1_[iu][static_cast<std::size_t>(week - 1)]);
      }
    }
    return ll;
  }

 private:
  MsirConfig cfg_;
  TimeSeriesData data_;
  double prior_const_ = 0.0;
  std::vector<std::vector<double>> lgy1_;
  mutable std::atomic<long> clamps_{0};
};

// --- synthetic test targets ----------------------------------------------

struct GaussianSpec {
  std::vector<double> mean;
  std::vector<double> sd;
  surject::ParamBox box;  // empty => unbounded
};

struct BoundarySpec {
  double c = 5.0;  // density proportional to exp(-c*theta) on [0,1]
};

struct BimodalSpec {
  double m1 = 0.25, s1 = 0.045, w1 = 0.35;
  double m2 = 0.75, s2 = 0.045, w2 = 0.65;
};

class GaussianTarget final : public Target {
 public:
  explicit GaussianTarget(GaussianSpec spec);
  int dim() const override { return static_cast<int>(spec_.mean.size()); }
  const surject::ParamBox& box() const override { return spec_.box; }
  std::vector<std::string> param_names() const override;
  diff::Scalar log_prior(std::span<const diff::Scalar> theta) const override;
  diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const override;
  double log_prior_value(std::span<const double> theta) const override;
  double log_likelihood_value(std::span<const double> theta) const override;

  template <class S>
  S loglik_impl(std::span<const S> theta) const {
    S ll{0.0};
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double s = spec_.sd[i];
      const S z = (theta[i] - spec_.mean[i]) / s;
      ll += -0.5 * (z * z) - (std::log(s) + 0.5 * std::log(2.0 * std::numbers::pi));
    }
    return ll;
  }

 private:
  GaussianSpec spec_;
  double prior_const_ = 0.0;
  bool bounded_ = false;
};

/// 1D, mass piled against theta = 0: likelihood exp(-c*theta), uniform prior
/// on [0,1].
class BoundaryTarget final : public Target {
 public:
  explicit BoundaryTarget(BoundarySpec spec) : spec_(spec) {}
  int dim() const override { return 1; }
  const surject::ParamBox& box() const override { return box_; }
  std::vector<std::string> param_names() const override { return {"theta"}; }
  diff::Scalar log_prior(std::span<const diff::Scalar>) const override { return diff::Scalar{0.0}; }
  diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const override { return -spec_.c * theta[0]; }
  double log_prior_value(std::span<const double> theta) const override {
    return box_.contains(theta) ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  double log_likelihood_value(std::span<const double> theta) const override { return -spec_.c * theta[0]; }

  double true_density(double theta) const {
    return spec_.c * std::exp(-spec_.c * theta) / (1.0 - std::exp(-spec_.c));
  }

 private:
  BoundarySpec spec_;
  surject::ParamBox box_ = surject::ParamBox::bounded({0.0}, {1.0});
};

/// 1D two-component normal mixture restricted to [0,1].
class BimodalTarget final : public Target {
 public:
  explicit BimodalTarget(BimodalSpec spec) : spec_(spec) {}
  int dim() const override { return 1; }
  const surject::ParamBox& box() const override { return box_; }
  std::vector<std::string> param_names() const override { return {"theta"}; }
  diff::Scalar log_prior(std::span<const diff::Scalar>) const override { return diff::Scalar{0.0}; }
  diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const override {
    return loglik_impl<diff::Scalar>(theta);
  }
  double log_prior_value(std::span<const double> theta) const override {
    return box_.contains(theta) ? 0.0 : -std::numeric_limits<double>::infinity();
  }
  double log_likelihood_value(std::span<const double> theta) const override { return loglik_impl<double>(theta); }

  template <class S>
  S loglik_impl(std::span<const S> theta) const {
    const S z1 = (theta[0] - spec_.m1) / spec_.s1;
    const S z2 = (theta[0] - spec_.m2) / spec_.s2;
    std::array<S, 2> terms{std::log(spec_.w1 / spec_.s1) - 0.5 * (z1 * z1),
                           std::log(spec_.w2 / spec_.s2) - 0.5 * (z2 * z2)};
    if constexpr (std::is_same_v<S, diff::Scalar>) {
      return diff::log_sum_exp(std::span<const diff::Scalar>(terms));
    } else {
      const double m = std::max(terms[0], terms[1]);
      return m + std::log(std::exp(terms[0] - m) + std::exp(terms[1] - m));
    }
  }

  const BimodalSpec& spec() const { return spec_; }

 private:
  BimodalSpec spec_;
  surject::ParamBox box_ = surject::ParamBox::bounded({0.0}, {1.0});
};

std::unique_ptr<Target> make_synthetic_target(const GaussianSpec& spec);
std::unique_ptr<Target> make_synthetic_target(const BoundarySpec& spec);
std::unique_ptr<Target> make_synthetic_target(const BimodalSpec& spec);

}  // namespace atvi::models
