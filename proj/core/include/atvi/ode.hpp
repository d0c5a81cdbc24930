#pragma once

#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atvi/diff.hpp"

namespace atvi::ode {

struct OdeError : std::runtime_error {
  int step = 0;
  OdeError(const std::string& what, int step_idx) : std::runtime_error(what), step(step_idx) {}
};

template <class S>
struct OdeWork {
  std::vector<S> k1, k2, k3, k4, tmp;
};

/// Classical fixed-step RK4, differentiable through every step when S is a
/// graph scalar (discretize-then-differentiate). Aborts with the step index
/// if the state goes non-finite.
template <class S, class Rhs>
void rk4_steps(const Rhs& rhs, double t0, double h, int nsteps, std::vector<S>& y, OdeWork<S>& w) {
  const std::size_t d = y.size();
  w.k1.assign(d, S{0.0});
  w.k2.assign(d, S{0.0});
  w.k3.assign(d, S{0.0});
  w.k4.assign(d, S{0.0});
  w.tmp.assign(d, S{0.0});
  for (int step = 0; step < nsteps; ++step) {
    const double t = t0 + h * step;
    rhs(t, std::span<const S>(y), std::span<S>(w.k1));
    for (std::size_t i = 0; i < d; ++i) w.tmp[i] = y[i] + (0.5 * h) * w.k1[i];
    rhs(t + 0.5 * h, std::span<const S>(w.tmp), std::span<S>(w.k2));
    for (std::size_t i = 0; i < d; ++i) w.tmp[i] = y[i] + (0.5 * h) * w.k2[i];
    rhs(t + 0.5 * h, std::span<const S>(w.tmp), std::span<S>(w.k3));
    for (std::size_t i = 0; i < d; ++i) w.tmp[i] = y[i] + h * w.k3[i];
    rhs(t + h, std::span<const S>(w.tmp), std::span<S>(w.k4));
    for (std::size_t i = 0; i < d; ++i)
      y[i] = y[i] + (h / 6.0) * (w.k1[i] + 2.0 * w.k2[i] + 2.0 * w.k3[i] + w.k4[i]);
    for (std::size_t i = 0; i < d; ++i)
      if (!std::isfinite(diff::value_of(y[i]))) throw OdeError("rk4: non-finite state", step);
  }
}

}  // namespace atvi::ode
