#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "atvi/data.hpp"
#include "atvi/diff.hpp"
#include "atvi/rng.hpp"
#include "atvi/surject.hpp"

namespace atvi {

/// A calibration target: parameter box, differentiable log-prior and
/// log-likelihood (graph path for training, plain-double path for MCMC and
/// weight evaluation). Implementations are pure and reentrant; concurrent
/// evaluation on separate graphs is safe.
class Target {
 public:
  virtual ~Target() = default;

  virtual int dim() const = 0;
  virtual const surject::ParamBox& box() const = 0;
  virtual std::vector<std::string> param_names() const = 0;

  virtual diff::Scalar log_prior(std::span<const diff::Scalar> theta) const = 0;
  virtual diff::Scalar log_likelihood(std::span<const diff::Scalar> theta) const = 0;
  virtual double log_prior_value(std::span<const double> theta) const = 0;
  virtual double log_likelihood_value(std::span<const double> theta) const = 0;

  /// Unnormalized log-posterior on the double path (-inf outside the box).
  double log_posterior_value(std::span<const double> theta) const {
    const double lp = log_prior_value(theta);
    if (!std::isfinite(lp)) return lp;
    return lp + log_likelihood_value(theta);
  }

  virtual bool can_simulate() const { return false; }
  virtual TimeSeriesData simulate(std::span<const double>, Rng&) const {
    throw std::logic_error("target does not support forward simulation");
  }
  /// Predictive mean series per channel (e.g. the disease burden), when the
  /// target has one.
  virtual std::vector<std::vector<double>> predictive_mean(std::span<const double>) const {
    throw std::logic_error("target does not define a predictive mean");
  }
};

}  // namespace atvi
