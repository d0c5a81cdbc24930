#include "atvi/anneal.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <thread>

#include "atvi/models.hpp"
#include "atvi/ode.hpp"
#include "atvi/psis.hpp"

namespace atvi::anneal {

namespace {

constexpr int kReduceBlock = 16;  // gradient reduction unit; fixes the summation order

using Ranges = std::vector<std::pair<std::size_t, std::size_t>>;

Ranges active_ranges(const flow::FlowStack& st, const std::vector<bool>& mask) {
  Ranges r;
  for (int k = 0; k < st.config().blocks; ++k)
    if (mask[static_cast<std::size_t>(k)]) r.emplace_back(st.block_begin(k), st.block_end(k));
  return r;
}

std::size_t ranges_size(const Ranges& r) {
  std::size_t n = 0;
  for (const auto& [b, e] : r) n += e - b;
  return n;
}

void gather(const flow::FlowStack& st, const Ranges& r, std::vector<double>& out) {
  out.clear();
  const auto p = st.params();
  for (const auto& [b, e] : r)
    out.insert(out.end(), p.begin() + static_cast<std::ptrdiff_t>(b), p.begin() + static_cast<std::ptrdiff_t>(e));
}

void scatter(flow::FlowStack& st, const Ranges& r, std::span<const double> in) {
  auto p = st.params_mut();
  std::size_t i = 0;
  for (const auto& [b, e] : r)
    for (std::size_t j = b; j < e; ++j) p[j] = in[i++];
}

template <class S>
struct Terms {
  S loglik{0.0}, logprior{0.0}, extra{0.0}, logq{0.0}, summand{0.0};
};

template <class S>
Terms<S> assemble_terms(const Problem& prob, std::span<const S> xi, const S& logdet,
                        std::span<const double> z0, double t, std::vector<S>& theta_scratch) {
  Terms<S> out;
  out.extra = boundary_map_term<S>(prob, xi, theta_scratch);
  if constexpr (std::is_same_v<S, diff::Scalar>) {
    out.loglik = prob.target->log_likelihood(theta_scratch);
    out.logprior = prob.target->log_prior(theta_scratch);
  } else {
    out.loglik = prob.target->log_likelihood_value(theta_scratch);
    out.logprior = prob.target->log_prior_value(theta_scratch);
  }
  // log q of the mapped latents: the fixed affine contributes a constant
  // Jacobian.
  out.logq = flow::log_q<S>(z0, logdet) - latent_log_jacobian(prob.target->box(), prob.map);
  out.summand = (1.0 / t) * out.loglik + out.logprior + out.extra - out.logq;
  return out;
}

struct BlockAccum {
  double summand = 0.0, loglik = 0.0, logprior = 0.0, extra = 0.0, logq = 0.0;
  int ok = 0, excluded = 0;
  std::vector<double> grad;
};

struct Divergence {};

struct Adam {
  double lr;
  double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  long t = 0;

  Adam(double rate, std::size_t n) : lr(rate), m(n, 0.0), v(n, 0.0) {}

  void ascend(std::span<double> x, std::span<const double> g) {
    ++t;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
    for (std::size_t i = 0; i < x.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      x[i] += lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
};

void append_row(Trace& trace, int block, double temp, const ElboEstimate& est, double khat) {
  TraceRow row;
  row.iteration = static_cast<int>(trace.rows.size()) + 1;
  row.block = block;
  row.temperature = temp;
  row.elbo = est.value;
  row.loglik_mean = est.loglik_mean;
  row.logprior_mean = est.logprior_mean;
  row.v_mean = est.v_mean;
  row.logq_mean = est.logq_mean;
  row.khat = khat;
  row.escapes = est.escapes;
  trace.rows.push_back(row);
}

}  // namespace

void TemperatureLadder::validate() const {
  if (temps.empty()) throw std::invalid_argument("temperature ladder is empty");
  if (temps.back() != 1.0) throw std::invalid_argument("temperature ladder must end at exactly 1");
  for (std::size_t i = 0; i + 1 < temps.size(); ++i)
    if (!(temps[i] > temps[i + 1])) throw std::invalid_argument("temperature ladder must be strictly decreasing");
  for (const double t : temps)
    if (!(t > 0.0)) throw std::invalid_argument("temperatures must be positive");
}

void TrainConfig::validate() const {
  if (batch < 2) throw std::invalid_argument("train.m must be at least 2");
  if (!(lr > 0.0)) throw std::invalid_argument("train.lr must be positive");
  if (max_iters < 1 || window < 1 || !(tol > 0.0)) throw std::invalid_argument("invalid convergence settings");
  if (finetune_iters > 0 && finetune_samples < 25)
    throw std::invalid_argument("train.finetune_samples must be at least 25");
  if (threads < 1) throw std::invalid_argument("threads must be at least 1");
}

bool convergence_check(std::span<const double> values, int window, double tol) {
  const auto w = static_cast<std::size_t>(window);
  if (values.size() < 2 * w) return false;
  double last = 0.0, prev = 0.0;
  for (std::size_t i = values.size() - w; i < values.size(); ++i) last += values[i];
  for (std::size_t i = values.size() - 2 * w; i < values.size() - w; ++i) prev += values[i];
  last /= static_cast<double>(w);
  prev /= static_cast<double>(w);
  return std::abs(last - prev) < tol * (1.0 + std::abs(prev));
}

diff::Scalar elbo_summand(const Problem& prob, const flow::BoundStack& bound,
                          flow::StackWork<diff::Scalar>& work, std::span<const double> z0, double t,
                          int upto_block) {
  std::vector<diff::Scalar> xi;
  diff::Scalar logdet;
  bound.forward(z0, upto_block, xi, logdet, work);
  std::vector<diff::Scalar> theta;
  return assemble_terms<diff::Scalar>(prob, xi, logdet, z0, t, theta).summand;
}

diff::Scalar assemble_summand(const Problem& prob, std::span<const diff::Scalar> xi,
                              const diff::Scalar& logdet, std::span<const double> z0, double t) {
  std::vector<diff::Scalar> theta;
  return assemble_terms<diff::Scalar>(prob, xi, logdet, z0, t, theta).summand;
}

ElboEstimate elbo_block(const Problem& prob, double t, int batch, int upto_block,
                        const std::vector<bool>& active_blocks, Rng& rng, int threads) {
  const int d = prob.target->dim();
  std::vector<double> z(static_cast<std::size_t>(batch) * static_cast<std::size_t>(d));
  for (auto& v : z) v = rng.normal();

  const Ranges ranges = active_ranges(*prob.stack, active_blocks);
  const std::size_t nact = ranges_size(ranges);
  const int nblocks = (batch + kReduceBlock - 1) / kReduceBlock;
  std::vector<BlockAccum> acc(static_cast<std::size_t>(nblocks));
  for (auto& a : acc) a.grad.assign(nact, 0.0);

  std::atomic<int> next{0};
  auto worker = [&] {
    diff::Graph graph;
    flow::StackWork<diff::Scalar> work;
    std::vector<diff::Scalar> xi, theta;
    bool first = true;
    flow::BoundStack bound;
    for (;;) {
      const int b = next.fetch_add(1);
      if (b >= nblocks) break;
      auto& a = acc[static_cast<std::size_t>(b)];
      const int lo = b * kReduceBlock;
      const int hi = std::min(batch, lo + kReduceBlock);
      for (int j = lo; j < hi; ++j) {
        graph.clear();
        if (first) {
          bound = flow::bind(*prob.stack, graph, active_blocks);
          first = false;
        } else {
          flow::rebind(*prob.stack, graph, active_blocks);
        }
        const auto z0 = std::span<const double>(z).subspan(
            static_cast<std::size_t>(j) * static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        try {
          diff::Scalar logdet;
          bound.forward(z0, upto_block, xi, logdet, work);
          const auto terms = assemble_terms<diff::Scalar>(prob, xi, logdet, z0, t, theta);
          if (!std::isfinite(terms.summand.v)) throw Divergence{};
          a.summand += terms.summand.v;
          a.loglik += terms.loglik.v;
          a.logprior += terms.logprior.v;
          a.extra += terms.extra.v;
          a.logq += terms.logq.v;
          if (nact > 0 && terms.summand.tracked()) graph.backward_accumulate(terms.summand, 1.0, a.grad);
          ++a.ok;
        } catch (const surject::EscapeError&) {
          ++a.excluded;
        } catch (const ode::OdeError&) {
          ++a.excluded;
        } catch (const Divergence&) {
          ++a.excluded;
        }
      }
    }
  };

  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ElboEstimate est;
  est.grad.assign(nact, 0.0);
  int ok = 0;
  for (const auto& a : acc) {
    ok += a.ok;
    est.escapes += a.excluded;
    est.value += a.summand;
    est.loglik_mean += a.loglik;
    est.logprior_mean += a.logprior;
    est.v_mean += a.extra;
    est.logq_mean += a.logq;
    for (std::size_t i = 0; i < nact; ++i) est.grad[i] += a.grad[i];
  }
  if (est.escapes > batch / 10)
    throw TrainingError("elbo batch failed: " + std::to_string(est.escapes) + " of " +
                            std::to_string(batch) + " samples excluded",
                        upto_block);
  est.value /= ok;
  est.loglik_mean /= ok;
  est.logprior_mean /= ok;
  est.v_mean /= ok;
  est.logq_mean /= ok;
  for (auto& g : est.grad) g /= ok;
  return est;
}

void train_block(int k, const Problem& prob, const TemperatureLadder& ladder, const TrainConfig& cfg,
                 Trace& trace, Rng& rng) {
  const double t_k = ladder.temps[static_cast<std::size_t>(k - 1)];
  std::vector<bool> mask(static_cast<std::size_t>(prob.stack->config().blocks), false);
  mask[static_cast<std::size_t>(k - 1)] = true;
  const Ranges ranges = active_ranges(*prob.stack, mask);
  std::vector<double> x;
  gather(*prob.stack, ranges, x);
  Adam opt(cfg.lr, x.size());

  std::vector<double> history;
  int nan_streak = 0;
  bool warned = false;
  double prev_wmean = 0.0;
  bool have_prev_wmean = false;
  for (int it = 1; it <= cfg.max_iters; ++it) {
    ElboEstimate est = elbo_block(prob, t_k, cfg.batch, k, mask, rng, cfg.threads);
    append_row(trace, k, t_k, est, std::numeric_limits<double>::quiet_NaN());
    history.push_back(est.value);

    if (!std::isfinite(est.value)) {
      if (++nan_streak >= cfg.window)
        throw TrainingError("block " + std::to_string(k) + " diverged (non-finite objective for a full window)", k);
    } else {
      nan_streak = 0;
      opt.ascend(x, est.grad);
      scatter(*prob.stack, ranges, x);
    }

    if (history.size() >= 2 * static_cast<std::size_t>(cfg.window)) {
      double wmean = 0.0;
      for (std::size_t i = history.size() - static_cast<std::size_t>(cfg.window); i < history.size(); ++i)
        wmean += history[i];
      wmean /= cfg.window;
      if (have_prev_wmean && !warned && wmean < prev_wmean - 10.0 * cfg.tol * (1.0 + std::abs(prev_wmean))) {
        std::fprintf(stderr,
                     "[atvi] warning: block %d windowed objective dropped (%.6g -> %.6g); "
                     "consider a smaller learning rate\n",
                     k, prev_wmean, wmean);
        warned = true;
      }
      prev_wmean = wmean;
      have_prev_wmean = true;
      if (convergence_check(history, cfg.window, cfg.tol)) break;
    }
  }
}

FinetuneStep weighted_elbo(const Problem& prob, const TrainConfig& cfg,
                           const std::vector<bool>& active_blocks, Rng& rng) {
  const int d = prob.target->dim();
  const int n = cfg.finetune_samples;
  const int upto = prob.stack->config().blocks;
  std::vector<double> z(static_cast<std::size_t>(n) * static_cast<std::size_t>(d));
  for (auto& v : z) v = rng.normal();

  // Value pass (plain doubles): per-sample summands at t = 1 are the
  // importance log-ratios; the weights are never differentiated.
  std::vector<double> ratios;
  std::vector<int> kept;
  std::vector<std::array<double, 4>> parts;
  flow::StackWork<double> dwork;
  std::vector<double> xi(static_cast<std::size_t>(d)), theta_d;
  FinetuneStep step;
  int excluded = 0;
  for (int j = 0; j < n; ++j) {
    const auto z0 = std::span<const double>(z).subspan(
        static_cast<std::size_t>(j) * static_cast<std::size_t>(d), static_cast<std::size_t>(d));
    try {
      double logdet = 0.0;
      flow::stack_forward<double>(*prob.stack, prob.stack->params(), z0, upto, xi, logdet, dwork);
      const auto terms = assemble_terms<double>(prob, xi, logdet, z0, 1.0, theta_d);
      if (!std::isfinite(terms.summand)) throw Divergence{};
      ratios.push_back(terms.summand);
      parts.push_back({terms.loglik, terms.logprior, terms.extra, terms.logq});
      kept.push_back(j);
    } catch (const surject::EscapeError&) {
      ++excluded;
    } catch (const ode::OdeError&) {
      ++excluded;
    } catch (const Divergence&) {
      ++excluded;
    }
  }
  if (excluded > n / 10)
    throw TrainingError("fine-tuning batch failed: " + std::to_string(excluded) + " of " +
                            std::to_string(n) + " samples excluded",
                        upto);

  const auto smoothed = psis::smooth_weights(ratios);
  step.khat = smoothed.khat;
  step.khat_defined = smoothed.khat_defined;

  ElboEstimate& est = step.estimate;
  est.escapes = excluded;
  const std::size_t m = kept.size();
  for (std::size_t j = 0; j < m; ++j) {
    const double w = smoothed.weights[j];
    est.value += w * ratios[j];
    est.loglik_mean += w * parts[j][0];
    est.logprior_mean += w * parts[j][1];
    est.v_mean += w * parts[j][2];
    est.logq_mean += w * parts[j][3];
  }

  if (smoothed.khat_defined && smoothed.khat > cfg.khat_threshold) {
    step.skipped = true;
    std::fprintf(stderr, "[atvi] warning: khat = %.3f above %.2f; fine-tuning step skipped\n", smoothed.khat,
                 cfg.khat_threshold);
    return step;
  }

  // Gradient pass: weighted per-sample backward with detached weights.
  const Ranges ranges = active_ranges(*prob.stack, active_blocks);
  const std::size_t nact = ranges_size(ranges);
  const int nblocks = (static_cast<int>(m) + kReduceBlock - 1) / kReduceBlock;
  std::vector<std::vector<double>> grads(static_cast<std::size_t>(nblocks));
  for (auto& g : grads) g.assign(nact, 0.0);

  std::atomic<int> nextb{0};
  auto worker = [&] {
    diff::Graph graph;
    flow::StackWork<diff::Scalar> work;
    std::vector<diff::Scalar> xi_s, theta_s;
    bool first = true;
    flow::BoundStack bound;
    for (;;) {
      const int b = nextb.fetch_add(1);
      if (b >= nblocks) break;
      const std::size_t lo = static_cast<std::size_t>(b) * kReduceBlock;
      const std::size_t hi = std::min(m, lo + static_cast<std::size_t>(kReduceBlock));
      for (std::size_t j = lo; j < hi; ++j) {
        graph.clear();
        if (first) {
          bound = flow::bind(*prob.stack, graph, active_blocks);
          first = false;
        } else {
          flow::rebind(*prob.stack, graph, active_blocks);
        }
        const auto z0 = std::span<const double>(z).subspan(
            static_cast<std::size_t>(kept[j]) * static_cast<std::size_t>(d), static_cast<std::size_t>(d));
        diff::Scalar logdet;
        bound.forward(z0, upto, xi_s, logdet, work);
        const auto terms = assemble_terms<diff::Scalar>(prob, xi_s, logdet, z0, 1.0, theta_s);
        // Samples entirely in the spline tails have constant summands.
        if (terms.summand.tracked())
          graph.backward_accumulate(terms.summand, smoothed.weights[j], grads[static_cast<std::size_t>(b)]);
      }
    }
  };
  if (cfg.threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int i = 0; i < cfg.threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  est.grad.assign(nact, 0.0);
  for (const auto& g : grads)
    for (std::size_t i = 0; i < nact; ++i) est.grad[i] += g[i];
  return step;
}

Trace run_tvi(const Problem& prob, const TrainConfig& cfg) {
  cfg.validate();
  if (prob.stack->config().blocks != 1) throw std::invalid_argument("run_tvi needs a single-block stack");
  TemperatureLadder ladder{{1.0}};
  Trace trace;
  Rng rng = Rng::sub(cfg.seed, "train-block-1");
  train_block(1, prob, ladder, cfg, trace, rng);
  return trace;
}

Trace run_atvi(const Problem& prob, const TemperatureLadder& ladder, const TrainConfig& cfg) {
  cfg.validate();
  ladder.validate();
  if (ladder.size() != prob.stack->config().blocks)
    throw std::invalid_argument("ladder length must match the number of flow blocks");

  Trace trace;
  for (int k = 1; k <= ladder.size(); ++k) {
    Rng rng = Rng::sub(cfg.seed, "train-block-" + std::to_string(k));
    train_block(k, prob, ladder, cfg, trace, rng);
  }

  if (cfg.finetune_iters > 0) {
    const int nblocks = prob.stack->config().blocks;
    std::vector<bool> mask(static_cast<std::size_t>(nblocks), cfg.finetune_all_blocks);
    mask[static_cast<std::size_t>(nblocks - 1)] = true;
    const Ranges ranges = active_ranges(*prob.stack, mask);
    std::vector<double> x;
    gather(*prob.stack, ranges, x);
    Adam opt(cfg.lr, x.size());
    Rng rng = Rng::sub(cfg.seed, "finetune");
    std::vector<double> history;
    for (int it = 1; it <= cfg.finetune_iters; ++it) {
      FinetuneStep step = weighted_elbo(prob, cfg, mask, rng);
      append_row(trace, nblocks, 1.0, step.estimate,
                 step.khat_defined ? step.khat : std::numeric_limits<double>::quiet_NaN());
      history.push_back(step.estimate.value);
      if (!step.skipped && std::isfinite(step.estimate.value)) {
        opt.ascend(x, step.estimate.grad);
        scatter(*prob.stack, ranges, x);
      }
      if (history.size() >= 2 * static_cast<std::size_t>(cfg.window) &&
          convergence_check(history, cfg.window, cfg.tol))
        break;
    }
  }
  return trace;
}

void Trace::write_csv(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write trace: " + path);
  out << "iteration,block,temperature,elbo,loglik_mean,logprior_mean,V_mean,logq_mean,khat,escapes\n";
  char buf[512];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%d\n", r.iteration,
                  r.block, r.temperature, r.elbo, r.loglik_mean, r.logprior_mean, r.v_mean, r.logq_mean,
                  r.khat, r.escapes);
    out << buf;
  }
}

}  // namespace atvi::anneal
