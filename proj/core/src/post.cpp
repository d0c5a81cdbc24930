#include "atvi/post.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace atvi::post {

std::pair<double, double> hpd(std::span<const double> samples, double level) {
  if (samples.size() < 100) throw std::invalid_argument("hpd: need at least 100 samples");
  if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("hpd: level must lie in (0,1)");
  std::vector<double> x(samples.begin(), samples.end());
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  const auto w = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n)));
  double best_lo = x.front(), best_hi = x.back();
  double best_width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + w <= n; ++i) {
    const double width = x[i + w - 1] - x[i];
    if (width < best_width) {
      best_width = width;
      best_lo = x[i];
      best_hi = x[i + w - 1];
    }
  }
  return {best_lo, best_hi};
}

double mode_estimate(std::span<const double> samples) {
  if (samples.size() < 200) throw std::invalid_argument("mode_estimate: need at least 200 samples");
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (const double v : samples) mean += v;
  mean /= n;
  double var = 0.0;
  for (const double v : samples) var += (v - mean) * (v - mean);
  var /= (n - 1.0);
  const double sd = std::sqrt(var);

  std::vector<double> sorted(samples.begin(), samples.end());
  std::sort(sorted.begin(), sorted.end());
  const double q25 = sorted[static_cast<std::size_t>(0.25 * (n - 1.0))];
  const double q75 = sorted[static_cast<std::size_t>(0.75 * (n - 1.0))];
  const double iqr = q75 - q25;
  double spread = sd;
  if (iqr > 0.0) spread = std::min(sd, iqr / 1.34);
  if (spread <= 0.0) return sorted.front();  // constant samples
  const double bw = 0.9 * spread * std::pow(n, -0.2);

  const double lo = sorted.front(), hi = sorted.back();
  const int grid = 512;
  double best_x = lo, best_f = -1.0;
  for (int g = 0; g < grid; ++g) {
    const double x = lo + (hi - lo) * static_cast<double>(g) / (grid - 1);
    double f = 0.0;
    for (const double v : samples) {
      const double z = (x - v) / bw;
      f += std::exp(-0.5 * z * z);
    }
    if (f > best_f) {
      best_f = f;
      best_x = x;
    }
  }
  return best_x;
}

Metrics aggregate_metrics(const std::vector<double>& lo, const std::vector<double>& hi,
                          const std::vector<double>& mean, const std::vector<double>& held_out) {
  if (lo.size() != hi.size() || lo.size() != mean.size() || lo.size() != held_out.size())
    throw std::invalid_argument("aggregate_metrics: size mismatch");
  Metrics m;
  const auto n = static_cast<double>(lo.size());
  for (std::size_t i = 0; i < lo.size(); ++i) {
    if (held_out[i] >= lo[i] && held_out[i] <= hi[i]) m.coverage += 1.0;
    m.ail += hi[i] - lo[i];
    m.mspe += (mean[i] - held_out[i]) * (mean[i] - held_out[i]);
  }
  m.coverage /= n;
  m.ail /= n;
  m.mspe /= n;
  return m;
}

namespace {

Metrics score_draws(const std::vector<std::vector<std::vector<double>>>& draws,  // [draw][channel][t]
                    const std::vector<std::vector<double>>& held_out, int failures) {
  const std::size_t channels = held_out.size();
  const std::size_t len = held_out.front().size();
  std::vector<double> lo, hi, mean, obs;
  std::vector<double> point(draws.size());
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t t = 0; t < len; ++t) {
      for (std::size_t j = 0; j < draws.size(); ++j) point[j] = draws[j][c][t];
      const auto [l, h] = hpd(point, 0.95);
      double mu = 0.0;
      for (const double v : point) mu += v;
      lo.push_back(l);
      hi.push_back(h);
      mean.push_back(mu / static_cast<double>(point.size()));
      obs.push_back(held_out[c][t]);
    }
  }
  Metrics m = aggregate_metrics(lo, hi, mean, obs);
  m.failures = failures;
  return m;
}

std::vector<std::vector<double>> collapse_channels(const std::vector<std::vector<double>>& series) {
  std::vector<std::vector<double>> out(1, std::vector<double>(series.front().size(), 0.0));
  for (const auto& ch : series)
    for (std::size_t t = 0; t < ch.size(); ++t) out[0][t] += ch[t];
  return out;
}

}  // namespace

Metrics predictive_metrics(const std::vector<std::vector<double>>& posterior, const Target& target,
                           const TimeSeriesData& held_out, int max_draws, Rng& rng,
                           bool sum_channels) {
  if (!target.can_simulate()) throw std::invalid_argument("predictive_metrics: target cannot simulate");
  if (posterior.empty()) throw std::invalid_argument("predictive_metrics: no posterior draws");
  const std::size_t step = std::max<std::size_t>(1, posterior.size() / static_cast<std::size_t>(max_draws));
  std::vector<std::vector<std::vector<double>>> draws;
  int failures = 0;
  for (std::size_t j = 0; j < posterior.size(); j += step) {
    try {
      auto sim = target.simulate(posterior[j], rng);
      draws.push_back(sum_channels ? collapse_channels(sim.series) : sim.series);
    } catch (const std::exception&) {
      ++failures;
    }
  }
  if (draws.size() < 100) throw std::runtime_error("predictive_metrics: too few successful simulations");
  const auto obs = sum_channels ? collapse_channels(held_out.series) : held_out.series;
  return score_draws(draws, obs, failures);
}

Metrics burden_metrics(const std::vector<std::vector<double>>& posterior, const Target& target,
                       const std::vector<std::vector<double>>& true_series, int max_draws,
                       bool sum_channels) {
  const std::size_t step = std::max<std::size_t>(1, posterior.size() / static_cast<std::size_t>(max_draws));
  std::vector<std::vector<std::vector<double>>> draws;
  int failures = 0;
  for (std::size_t j = 0; j < posterior.size(); j += step) {
    try {
      auto mean = target.predictive_mean(posterior[j]);
      draws.push_back(sum_channels ? collapse_channels(mean) : mean);
    } catch (const std::exception&) {
      ++failures;
    }
  }
  if (draws.size() < 100) throw std::runtime_error("burden_metrics: too few successful evaluations");
  const auto obs = sum_channels ? collapse_channels(true_series) : true_series;
  return score_draws(draws, obs, failures);
}

std::vector<ParamSummary> summarize(const std::vector<std::vector<double>>& samples,
                                    const std::vector<std::string>& names, double level) {
  if (samples.empty()) throw std::invalid_argument("summarize: no samples");
  const std::size_t d = names.size();
  std::vector<ParamSummary> out(d);
  std::vector<double> col(samples.size());
  for (std::size_t j = 0; j < d; ++j) {
    for (std::size_t i = 0; i < samples.size(); ++i) col[i] = samples[i][j];
    out[j].name = names[j];
    out[j].mode = mode_estimate(col);
    const auto [lo, hi] = hpd(col, level);
    out[j].hpd_lo = lo;
    out[j].hpd_hi = hi;
  }
  return out;
}

void write_summary_json(const std::string& path, const std::vector<ParamSummary>& params,
                        const std::vector<std::pair<std::string, Metrics>>& metrics,
                        const std::vector<std::pair<std::string, double>>& extras) {
  nlohmann::json j;
  nlohmann::json p = nlohmann::json::object();
  for (const auto& s : params) p[s.name] = {{"mode", s.mode}, {"hpd_lo", s.hpd_lo}, {"hpd_hi", s.hpd_hi}};
  j["parameters"] = std::move(p);
  for (const auto& [name, m] : metrics)
    j[name] = {{"coverage", m.coverage}, {"ail", m.ail}, {"mspe", m.mspe}, {"failures", m.failures}};
  for (const auto& [name, v] : extras) j[name] = v;
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write summary: " + path);
  out << j.dump(1) << "\n";
}

}  // namespace atvi::post
