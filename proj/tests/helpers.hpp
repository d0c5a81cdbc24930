#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "atvi/models.hpp"

namespace atvi::testing {

inline std::vector<double> sir_truth() { return {0.89, 0.29, 39.0}; }

inline std::vector<double> msir_truth() {
  return {0.43, 7.35, 0.027, 0.9, 1.305, 3.118, 0.032, 3.241, 0.314, 0.094};
}

/// Normalized masses of [lo, split) and [split, hi] under an unnormalized 1D
/// density, via trapezoid quadrature on a dense grid.
inline std::pair<double, double> grid_mode_masses(const std::function<double(double)>& density,
                                                  double lo, double hi, double split, int n = 200000) {
  const double h = (hi - lo) / n;
  double left = 0.0, right = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = lo + h * i;
    const double w = (i == 0 || i == n) ? 0.5 : 1.0;
    const double f = w * density(x);
    (x < split ? left : right) += f;
  }
  const double total = left + right;
  return {left / total, right / total};
}

}  // namespace atvi::testing
