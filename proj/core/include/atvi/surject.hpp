#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atvi/diff.hpp"
#include "atvi/rng.hpp"

namespace atvi::surject {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Per-dimension parameter bounds; +-inf marks an unconstrained side.
struct ParamBox {
  std::vector<double> lo, hi;

  static ParamBox unbounded(int dim) {
    ParamBox b;
    b.lo.assign(static_cast<std::size_t>(dim), -kInf);
    b.hi.assign(static_cast<std::size_t>(dim), kInf);
    return b;
  }
  static ParamBox bounded(std::vector<double> lo, std::vector<double> hi);

  int dim() const { return static_cast<int>(lo.size()); }
  bool two_sided(int i) const {
    return std::isfinite(lo[static_cast<std::size_t>(i)]) && std::isfinite(hi[static_cast<std::size_t>(i)]);
  }
  bool unconstrained(int i) const {
    return !std::isfinite(lo[static_cast<std::size_t>(i)]) && !std::isfinite(hi[static_cast<std::size_t>(i)]);
  }
  bool contains(std::span<const double> theta) const;
  void validate() const;
};

/// Reflection radius and logistic slopes per dimension. r is the shell width
/// the transformed target concentrates in; B the logistic steepness, one per
/// finite side.
struct SurjectorConfig {
  std::vector<double> r;      // per dimension
  std::vector<double> b_lo;   // slope of the lower-side logistic
  std::vector<double> b_hi;
  double eps = 0.01;          // tail mass target used by diagnostics

  /// Default rule: r_i = r_frac*(b_i - a_i) for two-sided boxes (absolute
  /// fallback for one-sided), B = log(99)/r so that u(a+r) = 0.99.
  static SurjectorConfig defaults(const ParamBox& box, double r_frac = 0.05,
                                  double one_sided_r = 1.0);
  void validate(const ParamBox& box) const;
};

enum class Side : std::uint8_t { below = 0, inside = 1, above = 2 };

using SideTag = std::vector<Side>;

/// ksi outside the reflecting preimage of the box. The sample must be
/// excluded and counted, never silently clamped.
struct EscapeError : std::runtime_error {
  explicit EscapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Deterministic fold into the box: reflect above the upper bound, pass
/// through inside, reflect below the lower bound.
template <class S>
void surject_dim(const S& xi, double a, double b, S& theta, Side& side) {
  const double v = diff::value_of(xi);
  if (std::isfinite(b) && v > b) {
    if (std::isfinite(a) && v >= a + 1.5 * (b - a)) throw EscapeError("surject: xi above the reflecting preimage");
    theta = 2.0 * b - xi;
    side = Side::above;
  } else if (std::isfinite(a) && v < a) {
    if (std::isfinite(b) && v <= a - 0.5 * (b - a)) throw EscapeError("surject: xi below the reflecting preimage");
    theta = 2.0 * a - xi;
    side = Side::below;
  } else {
    theta = xi;
    side = Side::inside;
  }
}

std::pair<std::vector<double>, SideTag> surject(std::span<const double> xi, const ParamBox& box);

/// Side-probability factor: the lower-side logistic u(theta) = 1/(1+e^{-B(theta-a)})
/// (mirrored for the upper side); 1 for an unconstrained side.
double u_eval(double theta_i, bool upper, int i, const SurjectorConfig& cfg, const ParamBox& box);

/// Per-dimension probabilities of the side tag given theta:
///   w(inside) = u_lo + u_hi - 1,  w(below) = 1 - u_lo,  w(above) = 1 - u_hi.
/// They sum to one and reduce to the one-sided definition when the opposite
/// bound is infinite.
template <class S>
S side_logprob(const S& theta, Side side, double a, double b, double b_lo, double b_hi) {
  using std::log;
  using diff::sigmoid;
  S u_lo{1.0}, u_hi{1.0};
  if (std::isfinite(a)) u_lo = sigmoid(b_lo * (theta - a));
  if (std::isfinite(b)) u_hi = sigmoid(b_hi * (b - theta));
  switch (side) {
    case Side::inside: return log(u_lo + u_hi - 1.0);
    case Side::below: return log(1.0 - u_lo);
    case Side::above: return log(1.0 - u_hi);
  }
  throw std::logic_error("side_logprob: bad side tag");
}

/// Likelihood contribution V = sum_i log w(s_i | theta_i); always <= 0.
/// (theta, s) must be consistent with a surject() output.
template <class S>
S likelihood_contribution(std::span<const S> theta, const SideTag& s, const SurjectorConfig& cfg,
                          const ParamBox& box) {
  if (theta.size() != s.size() || theta.size() != static_cast<std::size_t>(box.dim()))
    throw std::invalid_argument("likelihood_contribution: dimension mismatch");
  S v{0.0};
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double a = box.lo[i], b = box.hi[i];
    const double tv = diff::value_of(theta[i]);
    if (tv < a || tv > b) throw std::invalid_argument("likelihood_contribution: theta outside the box");
    if ((s[i] == Side::below && !std::isfinite(a)) || (s[i] == Side::above && !std::isfinite(b)))
      throw std::invalid_argument("likelihood_contribution: side tag inconsistent with the box");
    if (box.unconstrained(static_cast<int>(i))) continue;
    v += side_logprob<S>(theta[i], s[i], a, b, cfg.b_lo[i], cfg.b_hi[i]);
  }
  return v;
}

/// Stochastic inverse of the surjection: sample the side tag from w(s|theta),
/// then unfold deterministically.
std::vector<double> stochastic_inverse(std::span<const double> theta, const SurjectorConfig& cfg,
                                       const ParamBox& box, Rng& rng);

/// Numeric check of the slope condition B*u(c) >= d log p / dc on probe points
/// in the boundary shell (finite-difference log-density slopes), plus the
/// attained u(a+r) per side.
struct RadiusReport {
  struct SideCheck {
    int dim = 0;
    bool upper = false;
    double worst_margin = 0.0;  // min over probes of LHS - RHS
    double u_at_r = 0.0;
    bool pass = false;
  };
  std::vector<SideCheck> sides;
  bool pass = true;
};

RadiusReport verify_radius(const std::function<double(std::span<const double>)>& log_density,
                           const SurjectorConfig& cfg, const ParamBox& box, int probe_count);

}  // namespace atvi::surject
