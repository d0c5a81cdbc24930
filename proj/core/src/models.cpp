#include "atvi/models.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace atvi {

void TimeSeriesData::validate() const {
  if (series.empty()) throw std::invalid_argument("TimeSeriesData: no channels");
  if (channel_names.size() != series.size())
    throw std::invalid_argument("TimeSeriesData: channel name count mismatch");
  for (const auto& ch : series) {
    if (ch.size() != times.size()) throw std::invalid_argument("TimeSeriesData: ragged series");
    for (const double v : ch)
      if (!(v >= 0.0) || v != std::floor(v)) throw std::invalid_argument("TimeSeriesData: counts must be non-negative integers");
  }
}

TimeSeriesData TimeSeriesData::read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read data file: " + path);
  TimeSeriesData d;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty data file: " + path);
  std::stringstream header(line);
  std::string cell;
  bool first = true;
  while (std::getline(header, cell, ',')) {
    if (first) {
      first = false;
      continue;
    }
    d.channel_names.push_back(cell);
    d.series.emplace_back();
  }
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream row(line);
    std::size_t col = 0;
    while (std::getline(row, cell, ',')) {
      const double v = std::stod(cell);
      if (col == 0)
        d.times.push_back(v);
      else if (col - 1 < d.series.size())
        d.series[col - 1].push_back(v);
      else
        throw std::runtime_error("data row wider than header in " + path);
      ++col;
    }
  }
  d.validate();
  return d;
}

void TimeSeriesData::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write data file: " + path);
  out << "time";
  for (const auto& name : channel_names) out << "," << name;
  out << "\n";
  char buf[32];
  for (std::size_t t = 0; t < times.size(); ++t) {
    std::snprintf(buf, sizeof(buf), "%.17g", times[t]);
    out << buf;
    for (const auto& ch : series) {
      std::snprintf(buf, sizeof(buf), "%.17g", ch[t]);
      out << "," << buf;
    }
    out << "\n";
  }
}

}  // namespace atvi

namespace atvi::models {

double uniform_logprior_constant(const surject::ParamBox& box) {
  double c = 0.0;
  for (int i = 0; i < box.dim(); ++i) {
    const double w = box.hi[static_cast<std::size_t>(i)] - box.lo[static_cast<std::size_t>(i)];
    if (!std::isfinite(w)) throw std::invalid_argument("uniform prior needs a bounded box");
    c -= std::log(w);
  }
  return c;
}

namespace {

std::vector<double> lgamma_counts(const std::vector<double>& ys) {
  std::vector<double> out(ys.size());
  for (std::size_t i = 0; i < ys.size(); ++i) out[i] = std::lgamma(ys[i] + 1.0);
  return out;
}

}  // namespace

// --- SIR ----------------------------------------------------------------

SirTarget::SirTarget(SirConfig cfg, TimeSeriesData data) : cfg_(cfg), data_(std::move(data)) {
  data_.validate();
  if (data_.channels() != 2 || data_.length() != cfg_.days)
    throw std::invalid_argument("SirTarget: data must be 2 channels x days");
  prior_const_ = uniform_logprior_constant(cfg_.box);
  lg1_ = lgamma_counts(data_.series[0]);
  lg2_ = lgamma_counts(data_.series[1]);
}

SirTarget::SirTarget(SirConfig cfg) : cfg_(cfg) { prior_const_ = uniform_logprior_constant(cfg_.box); }

diff::Scalar SirTarget::log_prior(std::span<const diff::Scalar>) const { return diff::Scalar{prior_const_}; }

diff::Scalar SirTarget::log_likelihood(std::span<const diff::Scalar> theta) const {
  return loglik_impl<diff::Scalar>(theta);
}

double SirTarget::log_prior_value(std::span<const double> theta) const {
  return cfg_.box.contains(theta) ? prior_const_ : -std::numeric_limits<double>::infinity();
}

double SirTarget::log_likelihood_value(std::span<const double> theta) const {
  return loglik_impl<double>(theta);
}

std::vector<std::vector<double>> SirTarget::trajectory(std::span<const double> theta) const {
  const int per_day = static_cast<int>(std::lround(1.0 / cfg_.step));
  std::vector<double> y{theta[2], cfg_.i0, cfg_.r0};
  ode::OdeWork<double> w;
  const double n = theta[2] + cfg_.i0 + cfg_.r0;
  auto rhs = [&](double, std::span<const double> st, std::span<double> d) {
    sir_rhs<double>(st, theta[0], theta[1], n, d);
  };
  std::vector<std::vector<double>> out(2, std::vector<double>(static_cast<std::size_t>(cfg_.days)));
  for (int day = 1; day <= cfg_.days; ++day) {
    ode::rk4_steps(rhs, day - 1.0, cfg_.step, per_day, y, w);
    out[0][static_cast<std::size_t>(day - 1)] = y[1];
    out[1][static_cast<std::size_t>(day - 1)] = y[2];
  }
  return out;
}

std::vector<std::vector<double>> SirTarget::predictive_mean(std::span<const double> theta) const {
  return trajectory(theta);
}

TimeSeriesData SirTarget::simulate(std::span<const double> theta, Rng& rng) const {
  const auto traj = trajectory(theta);
  TimeSeriesData d;
  d.channel_names = {"infected", "recovered"};
  d.series.assign(2, std::vector<double>(static_cast<std::size_t>(cfg_.days)));
  for (int t = 0; t < cfg_.days; ++t) {
    d.times.push_back(t + 1.0);
    d.series[0][static_cast<std::size_t>(t)] = static_cast<double>(rng.poisson(traj[0][static_cast<std::size_t>(t)]));
    d.series[1][static_cast<std::size_t>(t)] = static_cast<double>(rng.poisson(traj[1][static_cast<std::size_t>(t)]));
  }
  return d;
}

// --- MSIR ----------------------------------------------------------------

MsirTarget::MsirTarget(MsirConfig cfg, TimeSeriesData data) : cfg_(cfg), data_(std::move(data)) {
  data_.validate();
  if (data_.channels() != 6 || data_.length() != cfg_.weeks)
    throw std::invalid_argument("MsirTarget: data must be 6 channels x weeks");
  prior_const_ = uniform_logprior_constant(cfg_.box);
  for (const auto& ch : data_.series) lgy1_.push_back(lgamma_counts(ch));
}

MsirTarget::MsirTarget(MsirConfig cfg) : cfg_(cfg) { prior_const_ = uniform_logprior_constant(cfg_.box); }

std::vector<double> MsirTarget::initial_state() const {
  std::vector<double> y(30, 0.0);
  for (int i = 0; i < 6; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const double n = cfg_.pop[iu];
    y[iu] = cfg_.m0_frac * n;
    y[12 + iu] = cfg_.is0_frac * n;
    y[18 + iu] = cfg_.im0_frac * n;
    y[24 + iu] = cfg_.r0_frac * n;
    y[6 + iu] = n - y[iu] - y[12 + iu] - y[18 + iu] - y[24 + iu];
  }
  return y;
}

diff::Scalar MsirTarget::log_prior(std::span<const diff::Scalar>) const { return diff::Scalar{prior_const_}; }

diff::Scalar MsirTarget::log_likelihood(std::span<const diff::Scalar> theta) const {
  return loglik_impl<diff::Scalar>(theta);
}

double MsirTarget::log_prior_value(std::span<const double> theta) const {
  return cfg_.box.contains(theta) ? prior_const_ : -std::numeric_limits<double>::infinity();
}

double MsirTarget::log_likelihood_value(std::span<const double> theta) const {
  return loglik_impl<double>(theta);
}

std::vector<std::vector<double>> MsirTarget::predictive_mean(std::span<const double> theta) const {
  const int per_week = static_cast<int>(std::lround(1.0 / cfg_.step));
  std::vector<double> y = initial_state();
  ode::OdeWork<double> w;
  std::vector<double> lam;
  auto rhs = [&](double t, std::span<const double> st, std::span<double> d) {
    msir_rhs<double>(t, st, theta, cfg_, d, lam);
  };
  std::vector<std::vector<double>> burden(6, std::vector<double>(static_cast<std::size_t>(cfg_.weeks)));
  const double rho = theta[2];
  for (int week = 1; week <= cfg_.weeks; ++week) {
    ode::rk4_steps(rhs, week - 1.0, cfg_.step, per_week, y, w);
    msir_lambda<double>(static_cast<double>(week), y, theta, cfg_, lam);
    for (int i = 0; i < 6; ++i) {
      const auto iu = static_cast<std::size_t>(i);
      burden[iu][static_cast<std::size_t>(week - 1)] =
          std::max((6.0 / 25.0) * rho * lam[iu] * y[6 + iu], 1e-10);
    }
  }
  return burden;
}

TimeSeriesData MsirTarget::simulate(std::span<const double> theta, Rng& rng) const {
  const auto burden = predictive_mean(theta);
  const double nu = theta[3];
  TimeSeriesData d;
  d.channel_names = {"age1", "age2", "age3", "age4", "age5", "age6"};
  d.series.assign(6, std::vector<double>(static_cast<std::size_t>(cfg_.weeks)));
  for (int t = 0; t < cfg_.weeks; ++t) {
    d.times.push_back(t + 1.0);
    for (int i = 0; i < 6; ++i)
      d.series[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)] =
          static_cast<double>(rng.neg_binomial(burden[static_cast<std::size_t>(i)][static_cast<std::size_t>(t)], nu));
  }
  return d;
}

// --- synthetic targets -----------------------------------------------------

GaussianTarget::GaussianTarget(GaussianSpec spec) : spec_(std::move(spec)) {
  if (spec_.mean.size() != spec_.sd.size() || spec_.mean.empty())
    throw std::invalid_argument("GaussianTarget: mean/sd size mismatch");
  for (const double s : spec_.sd)
    if (!(s > 0.0)) throw std::invalid_argument("GaussianTarget: sd must be positive");
  if (spec_.box.dim() == 0) spec_.box = surject::ParamBox::unbounded(static_cast<int>(spec_.mean.size()));
  if (spec_.box.dim() != static_cast<int>(spec_.mean.size()))
    throw std::invalid_argument("GaussianTarget: box dimension mismatch");
  bounded_ = true;
  for (int i = 0; i < spec_.box.dim(); ++i) bounded_ = bounded_ && spec_.box.two_sided(i);
  prior_const_ = bounded_ ? uniform_logprior_constant(spec_.box) : 0.0;
}

std::vector<std::string> GaussianTarget::param_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < spec_.mean.size(); ++i) names.push_back("theta" + std::to_string(i + 1));
  return names;
}

diff::Scalar GaussianTarget::log_prior(std::span<const diff::Scalar>) const { return diff::Scalar{prior_const_}; }

diff::Scalar GaussianTarget::log_likelihood(std::span<const diff::Scalar> theta) const {
  return loglik_impl<diff::Scalar>(theta);
}

double GaussianTarget::log_prior_value(std::span<const double> theta) const {
  return spec_.box.contains(theta) ? prior_const_ : -std::numeric_limits<double>::infinity();
}

double GaussianTarget::log_likelihood_value(std::span<const double> theta) const {
  return loglik_impl<double>(theta);
}

std::unique_ptr<Target> make_synthetic_target(const GaussianSpec& spec) {
  return std::make_unique<GaussianTarget>(spec);
}
std::unique_ptr<Target> make_synthetic_target(const BoundarySpec& spec) {
  if (!(spec.c > 0.0)) throw std::invalid_argument("BoundaryTarget: c must be positive");
  return std::make_unique<BoundaryTarget>(spec);
}
std::unique_ptr<Target> make_synthetic_target(const BimodalSpec& spec) {
  if (!(spec.s1 > 0.0) || !(spec.s2 > 0.0) || !(spec.w1 > 0.0) || !(spec.w2 > 0.0))
    throw std::invalid_argument("BimodalTarget: invalid spec");
  return std::make_unique<BimodalTarget>(spec);
}

}  // namespace atvi::models
