#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "atvi/anneal.hpp"

namespace atvi::config {

/// Schema or syntax problem in a run configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Minimal TOML subset: [section] headers, key = value pairs, values are
/// numbers, booleans, "strings" or flat arrays of numbers/strings, comments
/// with #. Enough for the run-config schema; anything else is rejected.
class Toml {
 public:
  using Value = std::variant<double, bool, std::string, std::vector<double>, std::vector<std::string>>;

  static Toml parse(const std::string& text);
  static Toml parse_file(const std::string& path);

  bool has_section(const std::string& section) const;
  bool has(const std::string& section, const std::string& key) const;

  double number(const std::string& section, const std::string& key) const;
  double number_or(const std::string& section, const std::string& key, double fallback) const;
  bool boolean_or(const std::string& section, const std::string& key, bool fallback) const;
  std::string text(const std::string& section, const std::string& key) const;
  std::string text_or(const std::string& section, const std::string& key, std::string fallback) const;
  std::vector<double> numbers(const std::string& section, const std::string& key) const;
  std::vector<double> numbers_or(const std::string& section, const std::string& key,
                                 std::vector<double> fallback) const;

  const std::map<std::string, std::map<std::string, Value>>& sections() const { return sections_; }

 private:
  std::map<std::string, std::map<std::string, Value>> sections_;
};

enum class Method { atvi, tvi, nfvi };
enum class TargetKind { sir, msir, gaussian, boundary, bimodal };

struct RunConfig {
  TargetKind target = TargetKind::sir;
  std::string data_path;  // observed data (required to fit sir/msir)

  // target-specific knobs (empty vectors mean module defaults)
  std::vector<double> box_lo, box_hi;
  double boundary_c = 5.0;
  std::vector<double> gaussian_mean, gaussian_sd;
  double bimodal_m1 = 0.25, bimodal_s1 = 0.045, bimodal_w1 = 0.35;
  double bimodal_m2 = 0.75, bimodal_s2 = 0.045, bimodal_w2 = 0.65;
  std::vector<double> msir_pop;
  double msir_births = 1000.0;

  Method method = Method::atvi;

  int flow_knots = 8;
  int flow_layers_per_block = 10;
  int flow_hidden = 32;

  double surj_r_frac = 0.05;
  std::optional<double> surj_r;      // absolute override, all dimensions
  std::optional<double> surj_slope;  // absolute B override, both sides
  double surj_eps = 0.01;

  std::vector<double> ladder{3.0, 1.0};

  anneal::TrainConfig train;

  std::uint64_t seed = 1;

  int mcmc_iters = 50000;
  int mcmc_burn_in = 10000;
  int mcmc_thin = 10;

  int output_samples = 4000;

  static RunConfig from_toml(const Toml& t);
  static RunConfig from_file(const std::string& path);

  /// Deterministic snapshot of every resolved field (byte-stable).
  std::string to_toml() const;
};

}  // namespace atvi::config
