#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "atvi/rng.hpp"
#include "atvi/target.hpp"

namespace atvi::mcmc {

/// Robust adaptive Metropolis state: lower-triangular proposal factor S
/// (row-major d x d, positive diagonal), adapted toward a target acceptance
/// rate with gain eta_n = min(1, d n^{-2/3}).
struct RamState {
  std::vector<double> point;
  double log_post = 0.0;
  std::vector<double> factor;  // row-major lower-triangular S
  double target_acceptance = 0.234;
  long step = 0;
};

RamState ram_init(const Target& target, std::span<const double> start, double initial_scale = 0.1);

/// One proposal/accept/adapt step. The factor update solves
/// S' S'^T = S (I + eta_n (alpha - alpha*) u u^T / |u|^2) S^T.
bool ram_step(RamState& state, const Target& target, Rng& rng);

struct ChainResult {
  std::vector<std::vector<double>> samples;  // [draw][dim]
  std::vector<std::uint8_t> accepted;        // per iteration, before thinning
  double acceptance_rate = 0.0;
};

ChainResult run_chain(const Target& target, int n_iter, int burn_in, int thin, std::uint64_t seed);

/// Effective sample size per dimension (initial positive sequence estimator).
std::vector<double> ess(const std::vector<std::vector<double>>& samples);

void write_samples_csv(const std::string& path, const std::vector<std::vector<double>>& samples,
                       const std::vector<std::string>& names);
void write_acceptance_csv(const std::string& path, const std::vector<std::uint8_t>& accepted);

}  // namespace atvi::mcmc
