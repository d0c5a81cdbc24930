#include "atvi/psis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace atvi::psis {

GpdFit fit_gpd(std::span<const double> tail) {
  const int n = static_cast<int>(tail.size());
  if (n < 5) throw std::invalid_argument("fit_gpd: need at least 5 tail values");
  GpdFit fit;
  fit.tail_count = n;
  if (tail.back() <= tail.front()) return fit;  // degenerate: all equal

  // Profile likelihood over theta = -k/sigma candidates (Zhang & Stephens 2009).
  const int m = 30 + static_cast<int>(std::floor(std::sqrt(static_cast<double>(n))));
  const double quart = tail[static_cast<std::size_t>(std::floor(n / 4.0 + 0.5))];
  std::vector<double> theta(static_cast<std::size_t>(m));
  std::vector<double> prof(static_cast<std::size_t>(m));
  for (int j = 0; j < m; ++j) {
    theta[static_cast<std::size_t>(j)] =
        1.0 / tail.back() + (1.0 - std::sqrt(static_cast<double>(m) / (j + 0.5))) / (3.0 * quart);
    double mean_log1p = 0.0;
    for (const double x : tail) mean_log1p += std::log1p(-theta[static_cast<std::size_t>(j)] * x);
    mean_log1p /= n;
    prof[static_cast<std::size_t>(j)] =
        n * (std::log(-theta[static_cast<std::size_t>(j)] / mean_log1p) - mean_log1p - 1.0);
  }

  // Posterior-mean theta under the profile weights.
  double theta_hat = 0.0;
  for (int j = 0; j < m; ++j) {
    double denom = 0.0;
    for (int l = 0; l < m; ++l) denom += std::exp(prof[static_cast<std::size_t>(l)] - prof[static_cast<std::size_t>(j)]);
    theta_hat += theta[static_cast<std::size_t>(j)] / denom;
  }

  double k = 0.0;
  for (const double x : tail) k += std::log1p(-theta_hat * x);
  k /= n;
  fit.sigma = -k / theta_hat;
  // Weakly-informative prior regularization toward k = 0.5.
  fit.khat = k * n / (n + 10.0) + 5.0 / (n + 10.0);
  fit.khat_defined = std::isfinite(fit.khat) && fit.sigma > 0.0;
  return fit;
}

double gpd_quantile(double p, double khat, double sigma) {
  if (std::abs(khat) < 1e-12) return -sigma * std::log1p(-p);
  return sigma * std::expm1(-khat * std::log1p(-p)) / khat;
}

SmoothedWeights smooth_weights(std::span<const double> log_raw) {
  const int n = static_cast<int>(log_raw.size());
  if (n < 25) throw std::invalid_argument("smooth_weights: need at least 25 weights");

  const double shift = *std::max_element(log_raw.begin(), log_raw.end());
  SmoothedWeights out;
  out.weights.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.weights[static_cast<std::size_t>(i)] = std::exp(log_raw[static_cast<std::size_t>(i)] - shift);
  out.raw_max = 1.0;  // by construction of the shift

  const int tail_m = static_cast<int>(
      std::min(std::ceil(0.2 * n), std::ceil(3.0 * std::sqrt(static_cast<double>(n)))));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return out.weights[static_cast<std::size_t>(a)] < out.weights[static_cast<std::size_t>(b)];
  });

  // Exceedances over the largest non-tail weight.
  const double cutoff = out.weights[static_cast<std::size_t>(order[static_cast<std::size_t>(n - tail_m - 1)])];
  std::vector<double> exceed(static_cast<std::size_t>(tail_m));
  for (int z = 0; z < tail_m; ++z)
    exceed[static_cast<std::size_t>(z)] =
        out.weights[static_cast<std::size_t>(order[static_cast<std::size_t>(n - tail_m + z)])] - cutoff;

  if (exceed.back() > 0.0) {
    const GpdFit fit = fit_gpd(exceed);
    out.khat = fit.khat;
    out.khat_defined = fit.khat_defined;
    if (fit.khat_defined) {
      for (int z = 0; z < tail_m; ++z) {
        const double p = (z + 0.5) / tail_m;
        const double smoothed = cutoff + gpd_quantile(p, fit.khat, fit.sigma);
        // Truncate at the raw maximum; assignment in sorted order keeps the
        // smoothing monotone.
        out.weights[static_cast<std::size_t>(order[static_cast<std::size_t>(n - tail_m + z)])] =
            std::min(smoothed, out.raw_max);
      }
    }
  }

  out.max_unnormalized = *std::max_element(out.weights.begin(), out.weights.end());
  double total = 0.0;
  for (const double w : out.weights) total += w;
  for (double& w : out.weights) w /= total;
  return out;
}

}  // namespace atvi::psis
