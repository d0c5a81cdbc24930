// Batch driver for the calibration engine: fit a variational posterior,
// run the adaptive-MCMC baseline, simulate synthetic data, or score
// posterior samples against held-out data.

#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "atvi/config.hpp"
#include "atvi/runner.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitTraining = 3;

int guarded(const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const atvi::config::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const atvi::anneal::TrainingError& e) {
    std::fprintf(stderr, "training aborted: %s\n", e.what());
    return kExitTraining;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"annealed and transformed variational inference for computer-model calibration"};
  app.require_subcommand(1);

  std::string config_path, out_dir = ".", out_file, samples_path, data_path;
  std::vector<double> theta;
  std::uint64_t seed = 1;
  bool sum_channels = false;

  auto* fit = app.add_subcommand("fit", "train a variational posterior and write run artifacts");
  fit->add_option("--config", config_path, "run configuration (TOML)")->required();
  fit->add_option("--out", out_dir, "output directory");

  auto* mc = app.add_subcommand("mcmc", "run the adaptive Metropolis baseline");
  mc->add_option("--config", config_path, "run configuration (TOML)")->required();
  mc->add_option("--out", out_dir, "output directory");

  auto* sim = app.add_subcommand("simulate", "simulate synthetic data from a target");
  sim->add_option("--config", config_path, "run configuration (TOML)")->required();
  sim->add_option("--theta", theta, "generating parameters (comma separated)")->required()->delimiter(',');
  sim->add_option("--seed", seed, "simulation seed");
  sim->add_option("--out", out_file, "output CSV path")->required();

  auto* diag = app.add_subcommand("diagnose", "predictive metrics for a samples file");
  diag->add_option("--config", config_path, "run configuration (TOML)")->required();
  diag->add_option("--samples", samples_path, "posterior samples CSV")->required();
  diag->add_option("--data", data_path, "held-out data CSV")->required();
  diag->add_option("--out", out_file, "metrics JSON path")->required();
  diag->add_flag("--sum-channels", sum_channels, "score the per-time channel totals");

  CLI11_PARSE(app, argc, argv);

  return guarded([&] {
    const auto cfg = atvi::config::RunConfig::from_file(config_path);
    if (fit->parsed()) {
      atvi::runner::run_fit(cfg, out_dir, atvi::runner::threads_from_env());
    } else if (mc->parsed()) {
      atvi::runner::run_mcmc(cfg, out_dir);
    } else if (sim->parsed()) {
      atvi::runner::run_simulate(cfg, theta, seed, out_file);
    } else if (diag->parsed()) {
      atvi::runner::run_diagnose(cfg, samples_path, data_path, out_file, sum_channels);
    }
  });
}
