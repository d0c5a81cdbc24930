#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace atvi {

/// Deterministic random source. All variate transforms are implemented here
/// (not via std:: distributions, whose sequences are implementation-defined),
/// so a (seed, config) pair pins every draw bit-exactly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t bits() { return eng_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (second variate cached).
  double normal();

  /// Marsaglia-Tsang gamma, shape > 0, unit scale.
  double gamma(double shape);

  /// Poisson counts: inversion for small means, PTRS otherwise.
  std::uint64_t poisson(double mean);

  /// Negative binomial with mean `mu` and dispersion `nu` (Var = mu + mu^2/nu),
  /// as a gamma-Poisson mixture.
  std::uint64_t neg_binomial(double mu, double nu);

  std::uint64_t integer(std::uint64_t n);  // uniform on [0, n)

  /// Independent substream: hashes (seed, tag) so phases cannot collide.
  static Rng sub(std::uint64_t seed, std::string_view tag);

 private:
  std::mt19937_64 eng_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

}  // namespace atvi
