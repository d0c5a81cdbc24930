#pragma once

#include <memory>
#include <string>

#include "atvi/anneal.hpp"
#include "atvi/config.hpp"
#include "atvi/models.hpp"

namespace atvi::runner {

/// A target assembled from a run configuration (owns the model and its data).
struct TargetBundle {
  std::unique_ptr<Target> target;
  bool needs_data = false;
};

TargetBundle build_target(const config::RunConfig& cfg, bool require_data);

/// Construct the flow/surjector problem for the configured method.
struct FitSetup {
  std::unique_ptr<flow::FlowStack> stack;
  anneal::Problem problem;
  anneal::TemperatureLadder ladder;
  anneal::TrainConfig train;
};

FitSetup build_fit(const config::RunConfig& cfg, const Target& target, int threads);

/// Draws posterior samples through the trained flow and boundary map.
std::vector<std::vector<double>> draw_posterior(const anneal::Problem& prob, int n, Rng& rng);

/// Exact fitted marginal density at a point (1-dimensional targets only):
/// the sum of the flow density over the boundary map's preimages.
double marginal_density_1d(const anneal::Problem& prob, double theta);

struct FitArtifacts {
  std::string samples_csv, summary_json, trace_csv, resolved_config;
};

/// cmd_fit: run the configured method, write samples.csv, summary.json,
/// trace.csv and the resolved-config snapshot into out_dir. For 1-d targets a
/// plot-ready density.csv is written as well.
FitArtifacts run_fit(const config::RunConfig& cfg, const std::string& out_dir, int threads);

/// cmd_mcmc: adaptive Metropolis baseline; writes samples.csv,
/// acceptance.csv and ess.json.
void run_mcmc(const config::RunConfig& cfg, const std::string& out_dir);

/// cmd_simulate: forward data simulation; writes the data CSV plus a JSON
/// sidecar recording the generating theta and seed.
void run_simulate(const config::RunConfig& cfg, std::span<const double> theta, std::uint64_t seed,
                  const std::string& out_csv);

/// cmd_diagnose: predictive metrics of a samples file against held-out data.
void run_diagnose(const config::RunConfig& cfg, const std::string& samples_csv,
                  const std::string& heldout_csv, const std::string& out_json, bool sum_channels);

int threads_from_env();

std::vector<std::vector<double>> read_samples_csv(const std::string& path, int expect_dim);

}  // namespace atvi::runner
