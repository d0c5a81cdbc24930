#pragma once

#include <span>
#include <string>
#include <vector>

#include "atvi/rng.hpp"
#include "atvi/target.hpp"

namespace atvi::post {

/// Shortest interval containing ceil(level*n) sorted samples.
std::pair<double, double> hpd(std::span<const double> samples, double level);

/// Argmax of a Gaussian-kernel density on a 512-point grid, bandwidth by
/// Silverman's rule of thumb.
double mode_estimate(std::span<const double> samples);

struct Metrics {
  double coverage = 0.0;  // fraction of held-out points inside the 95% predictive HPD
  double ail = 0.0;       // mean predictive interval length
  double mspe = 0.0;      // mean squared error of the predictive mean
  int failures = 0;       // simulation failures (excluded draws)
};

/// Interval aggregation helper (exposed for property tests): per point,
/// interval [lo, hi] and predictive mean against the held-out value.
Metrics aggregate_metrics(const std::vector<double>& lo, const std::vector<double>& hi,
                          const std::vector<double>& mean, const std::vector<double>& held_out);

/// Posterior-predictive check: simulate data per posterior draw, build 95%
/// HPD intervals per (channel, time) point, and score the held-out series.
/// sum_channels collapses the channels to their per-time total first (used
/// for the severe-case series).
Metrics predictive_metrics(const std::vector<std::vector<double>>& posterior, const Target& target,
                           const TimeSeriesData& held_out, int max_draws, Rng& rng,
                           bool sum_channels = false);

/// Burden-style check against a deterministic per-draw mean series.
Metrics burden_metrics(const std::vector<std::vector<double>>& posterior, const Target& target,
                       const std::vector<std::vector<double>>& true_series, int max_draws,
                       bool sum_channels = false);

struct ParamSummary {
  std::string name;
  double mode = 0.0, hpd_lo = 0.0, hpd_hi = 0.0;
};

std::vector<ParamSummary> summarize(const std::vector<std::vector<double>>& samples,
                                    const std::vector<std::string>& names, double level = 0.95);

void write_summary_json(const std::string& path, const std::vector<ParamSummary>& params,
                        const std::vector<std::pair<std::string, Metrics>>& metrics,
                        const std::vector<std::pair<std::string, double>>& extras = {});

}  // namespace atvi::post
