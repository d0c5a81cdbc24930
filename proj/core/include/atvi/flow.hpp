#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "atvi/diff.hpp"

namespace atvi::flow {

// Spline domain: linear tails outside [-TAIL, TAIL].
inline constexpr double kTail = 2.0;

struct FlowConfig {
  int dim = 1;
  int knots = 8;             // K bins per spline
  int layers_per_block = 10;
  int hidden = 32;           // conditioner MLP width (2 hidden layers)
  int blocks = 1;
};

/// Monotone rational-quadratic spline: K+1 increasing knots on [-2,2] in both
/// axes and K+1 positive derivatives with the boundary pair fixed to 1.
template <class S>
struct Knots {
  std::vector<S> x, y, d;
};

/// Autoregressive RQS flow organized as annealing blocks. Parameters live in
/// one flat array; per-(block, layer, dim) conditioners are either a free
/// 3K-1 vector (first dimension) or a 2-hidden-layer tanh MLP over the input
/// prefix, and each layer carries a per-dimension trainable affine
/// x' = e^s x + b applied before the spline (the stack's only reach beyond
/// the spline interval). Final MLP layers, free vectors and affines are zero
/// at construction, so every block starts as the exact identity; MLP hidden
/// layers get a small seeded init so that gradients can reach them once
/// training moves the final layer off zero.
class FlowStack {
 public:
  FlowStack(FlowConfig cfg, std::uint64_t seed);

  const FlowConfig& config() const { return cfg_; }
  std::size_t param_count() const { return params_.size(); }
  std::span<const double> params() const { return params_; }
  std::span<double> params_mut() { return params_; }

  /// Flat range holding block k's parameters (k is 0-based).
  std::size_t block_begin(int k) const { return block_off_[static_cast<std::size_t>(k)]; }
  std::size_t block_end(int k) const { return block_off_[static_cast<std::size_t>(k) + 1]; }

  /// Offset of the per-dimension (s, b) affine pairs of (block, layer).
  std::size_t affine_offset(int block, int layer) const;
  /// Base offset of the conditioner for (block, layer, dim).
  std::size_t cond_offset(int block, int layer, int dim) const;
  std::size_t cond_size(int dim) const;

  std::string param_name(std::size_t flat) const;

  /// JSON checkpoint (version-tagged flat name -> value map).
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  FlowConfig cfg_;
  std::vector<double> params_;
  std::vector<std::size_t> block_off_;
};

// --- generic scalar helpers -------------------------------------------------

template <class S>
S dot_span(std::span<const S> a, std::span<const S> b) {
  if constexpr (std::is_same_v<S, diff::Scalar>) {
    return diff::dot(a, b);
  } else {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
  }
}

template <class S>
S lse_span(std::span<const S> xs) {
  if constexpr (std::is_same_v<S, diff::Scalar>) {
    return diff::log_sum_exp(xs);
  } else {
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& x : xs) m = std::max(m, x);
    double s = 0.0;
    for (const auto& x : xs) s += std::exp(x - m);
    return m + std::log(s);
  }
}

// --- spline construction and evaluation -------------------------------------

/// Derivative transform offset: softplus(h + c0)/softplus(c0) is exactly 1 at
/// h = 0 (x/x), monotone increasing and positive everywhere.
inline double deriv_offset() { return std::log(std::numbers::e - 1.0); }

/// raw = (h_w[K], h_e[K], h_rho[K-1]) -> knots. Widths and heights are
/// 4*softmax (each axis spans [-2,2] exactly; the last cumulative knot is
/// pinned to 2 so rounding cannot leak past the interval).
template <class S>
void knots_from_raw(std::span<const S> raw, int K, Knots<S>& out) {
  using std::exp;
  using diff::softplus;
  if (raw.size() != static_cast<std::size_t>(3 * K - 1))
    throw std::invalid_argument("knots_from_raw: raw must have length 3K-1");
  out.x.assign(static_cast<std::size_t>(K) + 1, S{0.0});
  out.y.assign(static_cast<std::size_t>(K) + 1, S{0.0});
  out.d.assign(static_cast<std::size_t>(K) + 1, S{0.0});

  const auto hw = raw.subspan(0, static_cast<std::size_t>(K));
  const auto he = raw.subspan(static_cast<std::size_t>(K), static_cast<std::size_t>(K));
  const auto hr = raw.subspan(static_cast<std::size_t>(2 * K), static_cast<std::size_t>(K - 1));

  // Max-shifted softmax with a detached shift: exact (1/K each) at zero raw
  // parameters, which the identity-at-init contract depends on.
  const auto softmax_scaled = [K](std::span<const S> h, std::vector<S>& out_w) {
    using std::exp;
    double m = -std::numeric_limits<double>::infinity();
    for (const auto& v : h) m = std::max(m, diff::value_of(v));
    out_w.assign(static_cast<std::size_t>(K), S{0.0});
    S total{0.0};
    for (int k = 0; k < K; ++k) {
      out_w[static_cast<std::size_t>(k)] = exp(h[static_cast<std::size_t>(k)] - m);
      total += out_w[static_cast<std::size_t>(k)];
    }
    for (int k = 0; k < K; ++k)
      out_w[static_cast<std::size_t>(k)] = (2.0 * kTail) * (out_w[static_cast<std::size_t>(k)] / total);
  };
  std::vector<S> widths, heights;
  softmax_scaled(hw, widths);
  softmax_scaled(he, heights);
  out.x[0] = S{-kTail};
  out.y[0] = S{-kTail};
  for (int k = 0; k < K - 1; ++k) {
    out.x[static_cast<std::size_t>(k) + 1] = out.x[static_cast<std::size_t>(k)] + widths[static_cast<std::size_t>(k)];
    out.y[static_cast<std::size_t>(k) + 1] = out.y[static_cast<std::size_t>(k)] + heights[static_cast<std::size_t>(k)];
  }
  out.x[static_cast<std::size_t>(K)] = S{kTail};
  out.y[static_cast<std::size_t>(K)] = S{kTail};

  const double c0 = deriv_offset();
  const double c0n = diff::softplus(c0);
  out.d[0] = S{1.0};
  out.d[static_cast<std::size_t>(K)] = S{1.0};
  for (int k = 0; k < K - 1; ++k)
    out.d[static_cast<std::size_t>(k) + 1] = softplus(hr[static_cast<std::size_t>(k)] + c0) / c0n;
}

/// Monotone RQ interpolant of the bin containing x; identity with zero
/// log-derivative outside [-2,2]. The numerator forms below reduce
/// algebraically to the plain bin slope at the identity parameterization, so
/// a freshly initialized spline is the exact identity with logdet exactly 0.
template <class S>
void rqs_apply(const Knots<S>& kn, const S& x, S& y, S& dlogdet) {
  using std::log;
  const double xv = diff::value_of(x);
  if (xv < -kTail || xv > kTail) {
    y = x;
    dlogdet = S{0.0};
    return;
  }
  const int K = static_cast<int>(kn.x.size()) - 1;
  int k = K - 1;
  for (int i = 0; i < K; ++i) {
    if (xv < diff::value_of(kn.x[static_cast<std::size_t>(i) + 1])) {
      k = i;
      break;
    }
  }
  const auto ku = static_cast<std::size_t>(k);
  const S w = kn.x[ku + 1] - kn.x[ku];
  const S hgt = kn.y[ku + 1] - kn.y[ku];
  const S s = hgt / w;
  const S dsum = kn.d[ku + 1] + kn.d[ku] - 2.0 * s;
  // Anchor the bin-relative coordinate at the endpoint closer to zero: the
  // offset subtraction is then exact (Sterbenz), which keeps the identity
  // configuration bit-exact for inputs near a knot.
  const bool anchor_right =
      std::abs(diff::value_of(kn.x[ku + 1])) < std::abs(diff::value_of(kn.x[ku]));
  S t{0.0}, omt{0.0};
  if (anchor_right) {
    omt = (kn.x[ku + 1] - x) / w;
    t = 1.0 - omt;
  } else {
    t = (x - kn.x[ku]) / w;
    omt = 1.0 - t;
  }
  const S denom = s + dsum * (t * omt);
  if (anchor_right) {
    const S rel = omt * (s + (kn.d[ku + 1] - s) * t);
    y = kn.y[ku + 1] - hgt * (rel / denom);
  } else {
    const S rel = t * (s + (kn.d[ku] - s) * omt);
    y = kn.y[ku] + hgt * (rel / denom);
  }
  const S numer_d = s + (kn.d[ku + 1] - s) * (t * t) + (kn.d[ku] - s) * (omt * omt);
  dlogdet = log(s * s * numer_d / (denom * denom));
}

/// Analytic inverse (per-bin quadratic). Tails are identity.
double rqs_invert(const Knots<double>& kn, double y);

// --- conditioner and layer evaluation ---------------------------------------

inline std::size_t mlp_size(int in, int hidden, int out) {
  return static_cast<std::size_t>(hidden) * static_cast<std::size_t>(in) + static_cast<std::size_t>(hidden) +
         static_cast<std::size_t>(hidden) * static_cast<std::size_t>(hidden) + static_cast<std::size_t>(hidden) +
         static_cast<std::size_t>(out) * static_cast<std::size_t>(hidden) + static_cast<std::size_t>(out);
}

/// Scratch reused across forward passes (avoids per-sample allocation).
template <class S>
struct StackWork {
  std::vector<S> h1, h2, raw, cur, nxt;
  Knots<S> knots;
};

template <class S>
void conditioner_eval(std::span<const S> p, int in, int hidden, int out, std::span<const S> x,
                      StackWork<S>& w) {
  using std::tanh;
  w.raw.assign(static_cast<std::size_t>(out), S{0.0});
  if (in == 0) {
    for (int j = 0; j < out; ++j) w.raw[static_cast<std::size_t>(j)] = p[static_cast<std::size_t>(j)];
    return;
  }
  const auto h = static_cast<std::size_t>(hidden);
  const auto W1 = p.subspan(0, h * static_cast<std::size_t>(in));
  const auto b1 = p.subspan(W1.size(), h);
  const auto W2 = p.subspan(W1.size() + h, h * h);
  const auto b2 = p.subspan(W1.size() + h + W2.size(), h);
  const auto W3 = p.subspan(W1.size() + 2 * h + W2.size(), static_cast<std::size_t>(out) * h);
  const auto b3 = p.subspan(W1.size() + 2 * h + W2.size() + W3.size(), static_cast<std::size_t>(out));

  w.h1.assign(h, S{0.0});
  w.h2.assign(h, S{0.0});
  for (std::size_t j = 0; j < h; ++j)
    w.h1[j] = tanh(dot_span<S>(W1.subspan(j * static_cast<std::size_t>(in), static_cast<std::size_t>(in)), x) + b1[j]);
  for (std::size_t j = 0; j < h; ++j)
    w.h2[j] = tanh(dot_span<S>(W2.subspan(j * h, h), std::span<const S>(w.h1)) + b2[j]);
  for (std::size_t j = 0; j < static_cast<std::size_t>(out); ++j)
    w.raw[j] = dot_span<S>(W3.subspan(j * h, h), std::span<const S>(w.h2)) + b3[j];
}

/// One autoregressive layer: dimension i's knots come from the input prefix
/// z[0..i); the per-dimension affine precedes the spline. The Jacobian is
/// lower-triangular and logdet is the sum of the per-dimension affine and
/// spline log-derivatives.
template <class S>
void layer_forward(const FlowStack& st, std::span<const S> params, int block, int layer,
                   std::span<const S> z, std::span<S> out, S& logdet, StackWork<S>& w) {
  using std::exp;
  const auto& cfg = st.config();
  if (z.size() != static_cast<std::size_t>(cfg.dim)) throw std::invalid_argument("layer_forward: dimension mismatch");
  const int nraw = 3 * cfg.knots - 1;
  const std::size_t aff = st.affine_offset(block, layer);
  for (int i = 0; i < cfg.dim; ++i) {
    const auto iu = static_cast<std::size_t>(i);
    const std::size_t off = st.cond_offset(block, layer, i);
    const auto p = params.subspan(off, st.cond_size(i));
    conditioner_eval<S>(p, i, cfg.hidden, nraw, z.first(iu), w);
    knots_from_raw<S>(w.raw, cfg.knots, w.knots);
    const S& s_aff = params[aff + 2 * iu];
    const S& b_aff = params[aff + 2 * iu + 1];
    const S x = exp(s_aff) * z[iu] + b_aff;
    S dld{0.0};
    rqs_apply<S>(w.knots, x, out[iu], dld);
    logdet += s_aff + dld;
  }
}

/// Compose blocks 1..upto_block (1-based count), accumulating logdet.
template <class S>
void stack_forward(const FlowStack& st, std::span<const S> params, std::span<const S> z0,
                   int upto_block, std::span<S> xi, S& logdet, StackWork<S>& w) {
  const auto& cfg = st.config();
  if (upto_block < 1 || upto_block > cfg.blocks) throw std::invalid_argument("stack_forward: block index out of range");
  w.cur.assign(z0.begin(), z0.end());
  w.nxt.assign(z0.size(), S{0.0});
  logdet = S{0.0};
  for (int b = 0; b < upto_block; ++b) {
    for (int l = 0; l < cfg.layers_per_block; ++l) {
      layer_forward<S>(st, params, b, l, w.cur, w.nxt, logdet, w);
      std::swap(w.cur, w.nxt);
    }
  }
  for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = w.cur[i];
}

/// log q of the flow sample: log N(z0; 0, I) minus the accumulated forward
/// log-determinant.
template <class S>
S log_q(std::span<const double> z0, const S& logdet) {
  double quad = 0.0;
  for (const double z : z0) quad += z * z;
  const double base =
      -0.5 * quad - 0.5 * static_cast<double>(z0.size()) * std::log(2.0 * std::numbers::pi);
  return S{base} - logdet;
}

// --- double-path conveniences ------------------------------------------------

/// Forward map on plain doubles (sampling / MCMC-side density work).
void stack_forward_values(const FlowStack& st, std::span<const double> z0, int upto_block,
                          std::span<double> xi, double& logdet);

/// Sequential inverse: recovers z0 and the forward logdet at the preimage.
/// Returns false if xi is outside the flow's image (cannot happen: the map is
/// a bijection of R^d, kept for interface symmetry).
void stack_inverse(const FlowStack& st, std::span<const double> xi, int upto_block,
                   std::span<double> z0, double& logdet);

/// Exact log-density of the flow at an arbitrary point (via stack_inverse).
double log_q_at(const FlowStack& st, std::span<const double> xi, int upto_block);

// --- graph binding -----------------------------------------------------------

/// A stack bound to a graph: active blocks' parameters are tracked, frozen
/// blocks enter as constants (structurally zero gradients).
struct BoundStack {
  const FlowStack* stack = nullptr;
  diff::Graph* graph = nullptr;
  std::vector<diff::Scalar> params;

  void forward(std::span<const double> z0, int upto_block, std::vector<diff::Scalar>& xi,
               diff::Scalar& logdet, StackWork<diff::Scalar>& w) const;
};

BoundStack bind(const FlowStack& st, diff::Graph& g, const std::vector<bool>& active_blocks);

/// Re-pushes the lift layout of bind() onto a cleared graph so an existing
/// BoundStack's node ids stay valid. Must be called with the same stack and
/// mask the BoundStack was built from.
void rebind(const FlowStack& st, diff::Graph& g, const std::vector<bool>& active_blocks);

}  // namespace atvi::flow
