#pragma once

#include <span>
#include <vector>

namespace atvi::psis {

/// Generalized-Pareto fit to tail exceedances (profile likelihood over a
/// shape-candidate grid, Zhang-Stephens style). khat_defined is false for a
/// degenerate tail (all exceedances equal), in which case smoothing is
/// skipped by the caller.
struct GpdFit {
  double khat = 0.0;
  double sigma = 0.0;
  int tail_count = 0;
  bool khat_defined = false;
};

/// Fit exceedances over an implicit zero threshold. `tail` must be sorted
/// ascending, length >= 5, strictly positive.
GpdFit fit_gpd(std::span<const double> tail);

/// Self-normalized Pareto-smoothed weights.
struct SmoothedWeights {
  std::vector<double> weights;  // sum to 1
  double khat = 0.0;
  bool khat_defined = false;
  double raw_max = 0.0;           // largest raw (max-shifted) weight before smoothing
  double max_unnormalized = 0.0;  // largest smoothed weight before normalization
};

/// PSIS smoothing of log importance ratios (length >= 25): shift by the max,
/// exponentiate, replace the M = min(ceil(0.2n), ceil(3 sqrt(n))) largest
/// weights by expected GPD order statistics, truncate at the raw max,
/// self-normalize. Monotone in the raw ordering.
SmoothedWeights smooth_weights(std::span<const double> log_raw);

/// GPD quantile function (unit threshold offset handled by the caller).
double gpd_quantile(double p, double khat, double sigma);

}  // namespace atvi::psis
