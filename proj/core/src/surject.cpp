#include "atvi/surject.hpp"

#include <cmath>

namespace atvi::surject {

ParamBox ParamBox::bounded(std::vector<double> lo, std::vector<double> hi) {
  ParamBox b;
  b.lo = std::move(lo);
  b.hi = std::move(hi);
  b.validate();
  return b;
}

bool ParamBox::contains(std::span<const double> theta) const {
  for (std::size_t i = 0; i < theta.size(); ++i)
    if (theta[i] < lo[i] || theta[i] > hi[i]) return false;
  return true;
}

void ParamBox::validate() const {
  if (lo.size() != hi.size()) throw std::invalid_argument("ParamBox: bound size mismatch");
  for (std::size_t i = 0; i < lo.size(); ++i)
    if (!(lo[i] < hi[i])) throw std::invalid_argument("ParamBox: requires lo < hi per dimension");
}

SurjectorConfig SurjectorConfig::defaults(const ParamBox& box, double r_frac, double one_sided_r) {
  SurjectorConfig cfg;
  const auto d = static_cast<std::size_t>(box.dim());
  cfg.r.assign(d, 0.0);
  cfg.b_lo.assign(d, 0.0);
  cfg.b_hi.assign(d, 0.0);
  for (std::size_t i = 0; i < d; ++i) {
    const double width = box.hi[i] - box.lo[i];
    cfg.r[i] = std::isfinite(width) ? r_frac * width : one_sided_r;
    const double slope = std::log(99.0) / cfg.r[i];
    cfg.b_lo[i] = slope;
    cfg.b_hi[i] = slope;
  }
  return cfg;
}

void SurjectorConfig::validate(const ParamBox& box) const {
  const auto d = static_cast<std::size_t>(box.dim());
  if (r.size() != d || b_lo.size() != d || b_hi.size() != d)
    throw std::invalid_argument("SurjectorConfig: size mismatch with the box");
  if (!(eps > 0.0 && eps < 1.0)) throw std::invalid_argument("SurjectorConfig: eps must lie in (0,1)");
  for (std::size_t i = 0; i < d; ++i) {
    if (box.unconstrained(static_cast<int>(i))) continue;
    if (!(r[i] > 0.0)) throw std::invalid_argument("SurjectorConfig: r must be positive");
    if (!(b_lo[i] > 0.0) || !(b_hi[i] > 0.0)) throw std::invalid_argument("SurjectorConfig: B must be positive");
    const double width = box.hi[i] - box.lo[i];
    if (std::isfinite(width) && !(r[i] < 0.5 * width))
      throw std::invalid_argument("SurjectorConfig: r must satisfy r < (b-a)/2");
  }
}

std::pair<std::vector<double>, SideTag> surject(std::span<const double> xi, const ParamBox& box) {
  if (xi.size() != static_cast<std::size_t>(box.dim())) throw std::invalid_argument("surject: dimension mismatch");
  std::vector<double> theta(xi.size());
  SideTag s(xi.size(), Side::inside);
  for (std::size_t i = 0; i < xi.size(); ++i)
    surject_dim<double>(xi[i], box.lo[i], box.hi[i], theta[i], s[i]);
  return {std::move(theta), std::move(s)};
}

double u_eval(double theta_i, bool upper, int i, const SurjectorConfig& cfg, const ParamBox& box) {
  const auto iu = static_cast<std::size_t>(i);
  if (theta_i < box.lo[iu] || theta_i > box.hi[iu])
    throw std::invalid_argument("u_eval: theta outside the box");
  if (upper) {
    if (!std::isfinite(box.hi[iu])) return 1.0;
    return diff::sigmoid(cfg.b_hi[iu] * (box.hi[iu] - theta_i));
  }
  if (!std::isfinite(box.lo[iu])) return 1.0;
  return diff::sigmoid(cfg.b_lo[iu] * (theta_i - box.lo[iu]));
}

std::vector<double> stochastic_inverse(std::span<const double> theta, const SurjectorConfig& cfg,
                                       const ParamBox& box, Rng& rng) {
  if (!box.contains(theta)) throw std::invalid_argument("stochastic_inverse: theta outside the box");
  std::vector<double> xi(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const int ii = static_cast<int>(i);
    if (box.unconstrained(ii)) {
      xi[i] = theta[i];
      continue;
    }
    const double u_lo = u_eval(theta[i], /*upper=*/false, ii, cfg, box);
    const double u_hi = u_eval(theta[i], /*upper=*/true, ii, cfg, box);
    const double w_below = 1.0 - u_lo;
    const double w_inside = u_lo + u_hi - 1.0;
    const double u = rng.uniform();
    if (u < w_below)
      xi[i] = 2.0 * box.lo[i] - theta[i];
    else if (u < w_below + w_inside)
      xi[i] = theta[i];
    else
      xi[i] = 2.0 * box.hi[i] - theta[i];
  }
  return xi;
}

RadiusReport verify_radius(const std::function<double(std::span<const double>)>& log_density,
                           const SurjectorConfig& cfg, const ParamBox& box, int probe_count) {
  cfg.validate(box);
  const int d = box.dim();
  std::vector<double> center(static_cast<std::size_t>(d));
  for (int i = 0; i < d; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    if (box.two_sided(i))
      center[iu] = 0.5 * (box.lo[iu] + box.hi[iu]);
    else if (std::isfinite(box.lo[iu]))
      center[iu] = box.lo[iu] + std::max(1.0, 2.0 * cfg.r[iu]);
    else if (std::isfinite(box.hi[iu]))
      center[iu] = box.hi[iu] - std::max(1.0, 2.0 * cfg.r[iu]);
    else
      center[iu] = 0.0;
  }

  RadiusReport report;
  std::vector<double> point = center;
  for (int i = 0; i < d; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    for (const bool upper : {false, true}) {
      const double bound = upper ? box.hi[iu] : box.lo[iu];
      if (!std::isfinite(bound)) continue;
      RadiusReport::SideCheck check;
      check.dim = i;
      check.upper = upper;
      check.worst_margin = std::numeric_limits<double>::infinity();
      const double h = cfg.r[iu] * 1e-4;
      for (int j = 0; j < probe_count; ++j) {
        const double off = cfg.r[iu] * (j + 0.5) / probe_count;
        const double c = upper ? bound - off : bound + off;
        point[iu] = c + h;
        const double lp = log_density(point);
        point[iu] = c - h;
        const double lm = log_density(point);
        point[iu] = c;
        // Slope of log p toward the boundary.
        const double slope = (upper ? -1.0 : 1.0) * (lp - lm) / (2.0 * h);
        const double lhs = (upper ? cfg.b_hi[iu] : cfg.b_lo[iu]) * u_eval(c, upper, i, cfg, box);
        check.worst_margin = std::min(check.worst_margin, lhs - slope);
      }
      const double at_r = upper ? bound - cfg.r[iu] : bound + cfg.r[iu];
      check.u_at_r = u_eval(at_r, upper, i, cfg, box);
      check.pass = check.worst_margin >= 0.0;
      report.pass = report.pass && check.pass;
      report.sides.push_back(check);
      point[iu] = center[iu];
    }
  }
  return report;
}

}  // namespace atvi::surject
