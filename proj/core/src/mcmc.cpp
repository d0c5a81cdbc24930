#include "atvi/mcmc.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace atvi::mcmc {

namespace {

Eigen::MatrixXd factor_matrix(const RamState& s) {
  const auto d = static_cast<Eigen::Index>(s.point.size());
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(d, d);
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) L(i, j) = s.factor[static_cast<std::size_t>(i * d + j)];
  return L;
}

void store_factor(RamState& s, const Eigen::MatrixXd& L) {
  const auto d = L.rows();
  for (Eigen::Index i = 0; i < d; ++i)
    for (Eigen::Index j = 0; j <= i; ++j) s.factor[static_cast<std::size_t>(i * d + j)] = L(i, j);
}

}  // namespace

RamState ram_init(const Target& target, std::span<const double> start, double initial_scale) {
  RamState s;
  s.point.assign(start.begin(), start.end());
  s.log_post = target.log_posterior_value(s.point);
  if (!std::isfinite(s.log_post)) throw std::invalid_argument("ram_init: start point has non-finite posterior");
  const int d = target.dim();
  s.factor.assign(static_cast<std::size_t>(d) * static_cast<std::size_t>(d), 0.0);
  for (int i = 0; i < d; ++i) s.factor[static_cast<std::size_t>(i * d + i)] = initial_scale;
  return s;
}

bool ram_step(RamState& s, const Target& target, Rng& rng) {
  const auto d = static_cast<Eigen::Index>(s.point.size());
  ++s.step;

  Eigen::VectorXd u(d);
  for (Eigen::Index i = 0; i < d; ++i) u(i) = rng.normal();
  Eigen::MatrixXd L = factor_matrix(s);
  const Eigen::VectorXd jump = L.template triangularView<Eigen::Lower>() * u;

  std::vector<double> proposal(s.point);
  for (Eigen::Index i = 0; i < d; ++i) proposal[static_cast<std::size_t>(i)] += jump(i);
  const double lp = target.log_posterior_value(proposal);
  const double alpha = std::min(1.0, std::exp(lp - s.log_post));

  const bool accept = rng.uniform() < alpha;
  if (accept) {
    s.point = std::move(proposal);
    s.log_post = lp;
  }

  // Rank-one Cholesky update of S S^T toward the target acceptance rate.
  const double eta = std::min(1.0, static_cast<double>(d) * std::pow(static_cast<double>(s.step), -2.0 / 3.0));
  const double c = eta * (alpha - s.target_acceptance);
  if (c != 0.0) {
    const double unorm2 = u.squaredNorm();
    if (unorm2 > 0.0) {
      Eigen::LLT<Eigen::MatrixXd> llt(L * L.transpose());
      const Eigen::VectorXd v = (L.template triangularView<Eigen::Lower>() * u) * std::sqrt(std::abs(c) / unorm2);
      llt.rankUpdate(v, c > 0.0 ? 1.0 : -1.0);
      store_factor(s, llt.matrixL());
    }
  }
  return accept;
}

ChainResult run_chain(const Target& target, int n_iter, int burn_in, int thin, std::uint64_t seed) {
  if (n_iter <= burn_in) throw std::invalid_argument("run_chain: n_iter must exceed burn_in");
  if (thin < 1) throw std::invalid_argument("run_chain: thin must be >= 1");
  const auto& box = target.box();
  std::vector<double> start(static_cast<std::size_t>(target.dim()));
  for (int i = 0; i < target.dim(); ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (box.two_sided(i))
      start[iu] = 0.5 * (box.lo[iu] + box.hi[iu]);
    else if (std::isfinite(box.lo[iu]))
      start[iu] = box.lo[iu] + 1.0;
    else if (std::isfinite(box.hi[iu]))
      start[iu] = box.hi[iu] - 1.0;
    else
      start[iu] = 0.0;
  }

  Rng rng = Rng::sub(seed, "ram-chain");
  RamState state = ram_init(target, start);
  ChainResult out;
  out.accepted.reserve(static_cast<std::size_t>(n_iter));
  long accepted_total = 0;
  for (int it = 0; it < n_iter; ++it) {
    const bool acc = ram_step(state, target, rng);
    out.accepted.push_back(acc ? 1 : 0);
    accepted_total += acc ? 1 : 0;
    if (it >= burn_in && (it - burn_in) % thin == 0) out.samples.push_back(state.point);
  }
  out.acceptance_rate = static_cast<double>(accepted_total) / n_iter;
  return out;
}

std::vector<double> ess(const std::vector<std::vector<double>>& samples) {
  const std::size_t n = samples.size();
  if (n < 100) throw std::invalid_argument("ess: need at least 100 samples");
  const std::size_t d = samples.front().size();
  std::vector<double> out(d, 0.0);
  for (std::size_t j = 0; j < d; ++j) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (const auto& s : samples) var += (s[j] - mean) * (s[j] - mean);
    var /= static_cast<double>(n);
    if (var <= 0.0) {
      out[j] = 1.0;
      continue;
    }
    // Geyer initial positive sequence over pair sums.
    double tau = 1.0;
    double prev_pair = std::numeric_limits<double>::infinity();
    for (std::size_t lag = 1; lag + 1 < n; lag += 2) {
      auto rho = [&](std::size_t l) {
        double acc = 0.0;
        for (std::size_t t = 0; t + l < n; ++t) acc += (samples[t][j] - mean) * (samples[t + l][j] - mean);
        return acc / (static_cast<double>(n) * var);
      };
      const double pair = rho(lag) + rho(lag + 1);
      if (pair <= 0.0) break;
      // Enforce monotone decrease to stabilize the estimate.
      const double capped = std::min(pair, prev_pair);
      tau += 2.0 * capped;
      prev_pair = capped;
    }
    out[j] = static_cast<double>(n) / tau;
  }
  return out;
}

void write_samples_csv(const std::string& path, const std::vector<std::vector<double>>& samples,
                       const std::vector<std::string>& names) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write samples: " + path);
  for (std::size_t i = 0; i < names.size(); ++i) out << (i ? "," : "") << names[i];
  out << "\n";
  char buf[64];
  for (const auto& row : samples) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      std::snprintf(buf, sizeof(buf), "%.17g", row[i]);
      out << (i ? "," : "") << buf;
    }
    out << "\n";
  }
}

void write_acceptance_csv(const std::string& path, const std::vector<std::uint8_t>& accepted) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write acceptance trace: " + path);
  out << "iteration,accepted\n";
  for (std::size_t i = 0; i < accepted.size(); ++i)
    out << (i + 1) << "," << static_cast<int>(accepted[i]) << "\n";
}

}  // namespace atvi::mcmc
