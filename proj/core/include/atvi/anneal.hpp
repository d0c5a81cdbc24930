#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "atvi/flow.hpp"
#include "atvi/surject.hpp"
#include "atvi/target.hpp"

namespace atvi::anneal {

/// Likelihood-tempering schedule: strictly decreasing, last entry exactly 1.
/// One flow block per temperature.
struct TemperatureLadder {
  std::vector<double> temps;
  void validate() const;
  int size() const { return static_cast<int>(temps.size()); }
};

struct TrainConfig {
  int batch = 100;       // m
  double lr = 3e-3;      // adaptive-moment step size
  int max_iters = 2000;  // per-block cap
  int window = 50;       // convergence window W
  double tol = 1e-3;
  int finetune_samples = 2000;
  int finetune_iters = 500;
  bool finetune_all_blocks = false;
  double khat_threshold = 0.7;
  std::uint64_t seed = 1;
  int threads = 1;  // ATVI_THREADS; >1 keeps bytes identical (fixed-block reduction)
  void validate() const;
};

/// How latent draws are pushed into the parameter box.
enum class BoundaryMap {
  surjection,  // reflecting fold with likelihood contribution V
  logistic,    // bijective squash (log|det T'| in the V slot); the naive baseline
  none,        // identity (unbounded targets)
};

struct Problem {
  flow::FlowStack* stack = nullptr;
  const Target* target = nullptr;
  surject::SurjectorConfig surj;
  BoundaryMap map = BoundaryMap::surjection;
};

/// Fixed per-dimension affine between the flow output and the surjection.
/// Two-sided boxes are centered and scaled to a third of their width, so the
/// standard-normal initialization covers the box (0.27% preimage escapes)
/// and the posterior's latent image stays inside the spline interval. The
/// logistic and identity maps take the flow output as-is.
inline void latent_affine(const surject::ParamBox& box, BoundaryMap map, int i, double& loc,
                          double& scale) {
  loc = 0.0;
  scale = 1.0;
  if (map != BoundaryMap::surjection) return;
  const auto iu = static_cast<std::size_t>(i);
  if (box.two_sided(i)) {
    loc = 0.5 * (box.lo[iu] + box.hi[iu]);
    scale = (box.hi[iu] - box.lo[iu]) / 3.0;
  } else if (std::isfinite(box.lo[iu])) {
    loc = box.lo[iu];
  } else if (std::isfinite(box.hi[iu])) {
    loc = box.hi[iu];
  }
}

/// Constant log-Jacobian of the latent affine (enters log q of the mapped
/// latents).
inline double latent_log_jacobian(const surject::ParamBox& box, BoundaryMap map) {
  double lj = 0.0;
  for (int i = 0; i < box.dim(); ++i) {
    double loc = 0.0, scale = 1.0;
    latent_affine(box, map, i, loc, scale);
    lj += std::log(scale);
  }
  return lj;
}

/// Maps xi into the parameter box and returns the map's objective term: the
/// likelihood contribution V for the surjection, log|det T'| for the logistic
/// squash, zero for the identity.
template <class S>
S boundary_map_term(const Problem& prob, std::span<const S> xi, std::vector<S>& theta) {
  using std::exp;
  using std::log;
  using diff::softplus;
  const auto& box = prob.target->box();
  const int d = box.dim();
  theta.assign(static_cast<std::size_t>(d), S{0.0});
  switch (prob.map) {
    case BoundaryMap::none: {
      for (int i = 0; i < d; ++i) theta[static_cast<std::size_t>(i)] = xi[static_cast<std::size_t>(i)];
      return S{0.0};
    }
    case BoundaryMap::surjection: {
      surject::SideTag sides(static_cast<std::size_t>(d), surject::Side::inside);
      for (int i = 0; i < d; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        double loc = 0.0, scale = 1.0;
        latent_affine(box, prob.map, i, loc, scale);
        const S xp = (loc == 0.0 && scale == 1.0) ? xi[iu] : S{loc + scale * xi[iu]};
        surject::surject_dim<S>(xp, box.lo[iu], box.hi[iu], theta[iu], sides[iu]);
      }
      return surject::likelihood_contribution<S>(theta, sides, prob.surj, box);
    }
    case BoundaryMap::logistic: {
      S logdet{0.0};
      for (int i = 0; i < d; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const double a = box.lo[iu], b = box.hi[iu];
        const S& x = xi[iu];
        if (box.two_sided(i)) {
          theta[iu] = a + (b - a) * diff::sigmoid(x);
          logdet += std::log(b - a) - softplus(x) - softplus(-x);
        } else if (std::isfinite(a)) {
          theta[iu] = a + exp(x);
          logdet += x;
        } else if (std::isfinite(b)) {
          theta[iu] = b - exp(x);
          logdet += x;
        } else {
          theta[iu] = x;
        }
      }
      return logdet;
    }
  }
  throw std::logic_error("boundary_map_term: bad boundary map");
}

/// One Monte-Carlo evaluation of the per-block objective (Algorithm 2 line 6):
/// mean of (1/t) log p(D|theta) + log p(theta) + V - log q over the batch.
struct ElboEstimate {
  double value = 0.0;
  double loglik_mean = 0.0, logprior_mean = 0.0, v_mean = 0.0, logq_mean = 0.0;
  int escapes = 0;           // excluded samples: preimage escapes + target failures
  std::vector<double> grad;  // compact, parameter-registration order of the active blocks
};

struct TraceRow {
  int iteration = 0;
  int block = 0;  // 1-based; fine-tuning rows carry the last block
  double temperature = 1.0;
  double elbo = 0.0;
  double loglik_mean = 0.0, logprior_mean = 0.0, v_mean = 0.0, logq_mean = 0.0;
  double khat = std::numeric_limits<double>::quiet_NaN();  // set during fine-tuning
  int escapes = 0;
};

struct Trace {
  std::vector<TraceRow> rows;
  void write_csv(const std::string& path) const;
};

struct TrainingError : std::runtime_error {
  int block = 0;
  TrainingError(const std::string& what, int block_idx) : std::runtime_error(what), block(block_idx) {}
};

/// True when the last two windows of values agree within
/// tol * (1 + |previous window mean|). Needs 2W filled entries.
bool convergence_check(std::span<const double> values, int window, double tol);

/// Differentiable batch objective at temperature t over blocks 1..upto_block;
/// gradients flow only into blocks marked active.
ElboEstimate elbo_block(const Problem& prob, double t, int batch, int upto_block,
                        const std::vector<bool>& active_blocks, Rng& rng, int threads);

/// Per-sample summand on a caller-owned graph (test and oracle hook).
diff::Scalar elbo_summand(const Problem& prob, const flow::BoundStack& bound,
                          flow::StackWork<diff::Scalar>& work, std::span<const double> z0, double t,
                          int upto_block);

/// Summand assembled from an already-computed flow output (lets oracles
/// differentiate the objective with respect to arbitrary parameter scalars).
diff::Scalar assemble_summand(const Problem& prob, std::span<const diff::Scalar> xi,
                              const diff::Scalar& logdet, std::span<const double> z0, double t);

/// Algorithm 2 lines 3..7 for one block: ascend the tempered objective with
/// adaptive moments until convergence_check or the iteration cap; only block
/// k's parameters move.
void train_block(int k, const Problem& prob, const TemperatureLadder& ladder, const TrainConfig& cfg,
                 Trace& trace, Rng& rng);

/// One PSIS-weighted fine-tuning pass: smoothed self-normalized weights on
/// the summand log-ratios (weights detached), weighted-mean objective and
/// gradient for the active blocks. khat above the threshold skips the step.
struct FinetuneStep {
  ElboEstimate estimate;
  double khat = 0.0;
  bool khat_defined = false;
  bool skipped = false;
};
FinetuneStep weighted_elbo(const Problem& prob, const TrainConfig& cfg,
                           const std::vector<bool>& active_blocks, Rng& rng);

/// Algorithm 1: single block at t = 1, no fine-tuning.
Trace run_tvi(const Problem& prob, const TrainConfig& cfg);

/// Algorithm 2: sequential block training over the ladder, then weight-
/// adjusted fine-tuning of the last block (all blocks behind a config flag).
Trace run_atvi(const Problem& prob, const TemperatureLadder& ladder, const TrainConfig& cfg);

}  // namespace atvi::anneal
