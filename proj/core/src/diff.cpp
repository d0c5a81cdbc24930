#include "atvi/diff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace atvi::diff {

double GradientMap::at_node(std::uint32_t node) const {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), node);
  if (it == nodes_.end() || *it != node) return 0.0;
  return vals_[static_cast<std::size_t>(it - nodes_.begin())];
}

std::int32_t Graph::close_node() {
  head_.push_back(static_cast<std::uint32_t>(par_.size()));
  return static_cast<std::int32_t>(head_.size() - 2);
}

Scalar Graph::lift(double value, bool as_parameter) {
  if (!std::isfinite(value)) throw std::invalid_argument("diff: lift of non-finite value");
  Scalar s;
  s.v = value;
  s.node = close_node();
  s.g = this;
  if (as_parameter) params_.push_back(static_cast<std::uint32_t>(s.node));
  return s;
}

Scalar Graph::make_unary(const Scalar& x, double v, double dx) {
  if (!x.tracked()) return Scalar{v};
  par_.push_back(static_cast<std::uint32_t>(x.node));
  pd_.push_back(dx);
  Scalar s;
  s.v = v;
  s.node = close_node();
  s.g = this;
  return s;
}

Scalar Graph::make_binary(const Scalar& x, const Scalar& y, double v, double dx, double dy) {
  if (x.tracked()) {
    par_.push_back(static_cast<std::uint32_t>(x.node));
    pd_.push_back(dx);
  }
  if (y.tracked()) {
    par_.push_back(static_cast<std::uint32_t>(y.node));
    pd_.push_back(dy);
  }
  Scalar s;
  s.v = v;
  s.node = close_node();
  s.g = this;
  return s;
}

Scalar Graph::make_nary(std::span<const Scalar> xs, double v, std::span<const double> dxs) {
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].tracked()) continue;
    par_.push_back(static_cast<std::uint32_t>(xs[i].node));
    pd_.push_back(dxs[i]);
  }
  Scalar s;
  s.v = v;
  s.node = close_node();
  s.g = this;
  return s;
}

Scalar Graph::make_dot(std::span<const Scalar> a, std::span<const Scalar> b, double v) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].tracked()) {
      par_.push_back(static_cast<std::uint32_t>(a[i].node));
      pd_.push_back(b[i].v);
    }
    if (b[i].tracked()) {
      par_.push_back(static_cast<std::uint32_t>(b[i].node));
      pd_.push_back(a[i].v);
    }
  }
  Scalar s;
  s.v = v;
  s.node = close_node();
  s.g = this;
  return s;
}

std::int32_t Graph::lift_block(std::span<const double> values, bool as_parameter) {
  for (const double v : values)
    if (!std::isfinite(v)) throw std::invalid_argument("diff: lift of non-finite value");
  const auto first = static_cast<std::int32_t>(head_.size() - 1);
  head_.insert(head_.end(), values.size(), static_cast<std::uint32_t>(par_.size()));
  if (as_parameter) {
    params_.reserve(params_.size() + values.size());
    for (std::size_t i = 0; i < values.size(); ++i)
      params_.push_back(static_cast<std::uint32_t>(first) + static_cast<std::uint32_t>(i));
  }
  return first;
}

void Graph::sweep(const Scalar& output) {
  if (!output.tracked() || output.g != this)
    throw std::invalid_argument("diff: backward on output not attached to this graph");
  const std::size_t n = node_count();
  adj_.assign(n, 0.0);
  adj_[static_cast<std::size_t>(output.node)] = 1.0;
  for (std::int64_t i = output.node; i >= 0; --i) {
    const double a = adj_[static_cast<std::size_t>(i)];
    if (a == 0.0) continue;
    const std::uint32_t b = head_[static_cast<std::size_t>(i)];
    const std::uint32_t e = head_[static_cast<std::size_t>(i) + 1];
    for (std::uint32_t k = b; k < e; ++k) adj_[par_[k]] += a * pd_[k];
  }
}

GradientMap Graph::backward(const Scalar& output) {
  sweep(output);
  std::vector<double> vals(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) vals[i] = adj_[params_[i]];
  return GradientMap{params_, std::move(vals)};
}

void Graph::backward_accumulate(const Scalar& output, double scale, std::span<double> dst) {
  if (dst.size() != params_.size())
    throw std::invalid_argument("diff: accumulator size must match registered parameter count");
  sweep(output);
  for (std::size_t i = 0; i < params_.size(); ++i) dst[i] += scale * adj_[params_[i]];
}

void Graph::clear() {
  head_.assign(1, 0);
  par_.clear();
  pd_.clear();
  params_.clear();
}

namespace {

Graph* graph_of(const Scalar& x, const Scalar& y) { return x.tracked() ? x.g : y.g; }

}  // namespace

Scalar operator+(const Scalar& x, const Scalar& y) {
  const double v = x.v + y.v;
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  return graph_of(x, y)->make_binary(x, y, v, 1.0, 1.0);
}

Scalar operator-(const Scalar& x, const Scalar& y) {
  const double v = x.v - y.v;
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  return graph_of(x, y)->make_binary(x, y, v, 1.0, -1.0);
}

Scalar operator*(const Scalar& x, const Scalar& y) {
  const double v = x.v * y.v;
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  return graph_of(x, y)->make_binary(x, y, v, y.v, x.v);
}

Scalar operator/(const Scalar& x, const Scalar& y) {
  const double v = x.v / y.v;
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  return graph_of(x, y)->make_binary(x, y, v, 1.0 / y.v, -v / y.v);
}

Scalar operator-(const Scalar& x) {
  if (!x.tracked()) return Scalar{-x.v};
  return x.g->make_unary(x, -x.v, -1.0);
}

Scalar exp(const Scalar& x) {
  const double v = std::exp(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, v);
}

Scalar log(const Scalar& x) {
  const double v = std::log(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, 1.0 / x.v);
}

Scalar pow(const Scalar& x, double p) {
  const double v = std::pow(x.v, p);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, p * std::pow(x.v, p - 1.0));
}

Scalar pow(const Scalar& x, const Scalar& p) {
  if (!p.tracked()) return pow(x, p.v);
  const double v = std::pow(x.v, p.v);
  return graph_of(x, p)->make_binary(x, p, v, p.v * std::pow(x.v, p.v - 1.0), v * std::log(x.v));
}

Scalar sqrt(const Scalar& x) {
  const double v = std::sqrt(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, 0.5 / v);
}

Scalar tanh(const Scalar& x) {
  const double v = std::tanh(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, 1.0 - v * v);
}

Scalar sin(const Scalar& x) {
  if (!x.tracked()) return Scalar{std::sin(x.v)};
  return x.g->make_unary(x, std::sin(x.v), std::cos(x.v));
}

Scalar cos(const Scalar& x) {
  if (!x.tracked()) return Scalar{std::cos(x.v)};
  return x.g->make_unary(x, std::cos(x.v), -std::sin(x.v));
}

Scalar abs(const Scalar& x) {
  const double d = x.v > 0.0 ? 1.0 : (x.v < 0.0 ? -1.0 : 0.0);
  if (!x.tracked()) return Scalar{std::abs(x.v)};
  return x.g->make_unary(x, std::abs(x.v), d);
}

Scalar max(const Scalar& x, const Scalar& y) {
  const double v = std::max(x.v, y.v);
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  double dx = 0.0, dy = 0.0;
  if (x.v > y.v)
    dx = 1.0;
  else if (y.v > x.v)
    dy = 1.0;
  return graph_of(x, y)->make_binary(x, y, v, dx, dy);
}

Scalar min(const Scalar& x, const Scalar& y) {
  const double v = std::min(x.v, y.v);
  if (!x.tracked() && !y.tracked()) return Scalar{v};
  double dx = 0.0, dy = 0.0;
  if (x.v < y.v)
    dx = 1.0;
  else if (y.v < x.v)
    dy = 1.0;
  return graph_of(x, y)->make_binary(x, y, v, dx, dy);
}

Scalar lgamma(const Scalar& x) {
  const double v = std::lgamma(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, digamma(x.v));
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

Scalar sigmoid(const Scalar& x) {
  const double v = sigmoid(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, v * (1.0 - v));
}

Scalar softplus(const Scalar& x) {
  const double v = softplus(x.v);
  if (!x.tracked()) return Scalar{v};
  return x.g->make_unary(x, v, sigmoid(x.v));
}

Scalar sum(std::span<const Scalar> xs) {
  double v = 0.0;
  Graph* g = nullptr;
  for (const auto& x : xs) {
    v += x.v;
    if (!g && x.tracked()) g = x.g;
  }
  if (!g) return Scalar{v};
  std::vector<double> ones(xs.size(), 1.0);
  return g->make_nary(xs, v, ones);
}

Scalar log_sum_exp(std::span<const Scalar> xs) {
  double m = -std::numeric_limits<double>::infinity();
  Graph* g = nullptr;
  for (const auto& x : xs) {
    m = std::max(m, x.v);
    if (!g && x.tracked()) g = x.g;
  }
  double s = 0.0;
  for (const auto& x : xs) s += std::exp(x.v - m);
  const double v = m + std::log(s);
  if (!g) return Scalar{v};
  std::vector<double> dxs(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) dxs[i] = std::exp(xs[i].v - v);
  return g->make_nary(xs, v, dxs);
}

Scalar dot(std::span<const Scalar> a, std::span<const Scalar> b) {
  double v = 0.0;
  Graph* g = nullptr;
  for (std::size_t i = 0; i < a.size(); ++i) {
    v += a[i].v * b[i].v;
    if (!g && a[i].tracked()) g = a[i].g;
    if (!g && b[i].tracked()) g = b[i].g;
  }
  if (!g) return Scalar{v};
  return g->make_dot(a, b, v);
}

double digamma(double x) {
  // Recurrence up to the asymptotic regime, then the standard expansion.
  double r = 0.0;
  while (x < 6.0) {
    r -= 1.0 / x;
    x += 1.0;
  }
  const double f = 1.0 / (x * x);
  return r + std::log(x) - 0.5 / x +
         f * (-1.0 / 12.0 + f * (1.0 / 120.0 + f * (-1.0 / 252.0 + f * (1.0 / 240.0 + f * (-1.0 / 132.0)))));
}

double grad_check(const DiffFn& f, std::span<const double> point, double step) {
  const std::size_t n = point.size();
  Graph g;
  std::vector<Scalar> params(n);
  for (std::size_t i = 0; i < n; ++i) params[i] = g.lift(point[i], /*as_parameter=*/true);
  const Scalar out = f(g, params);
  if (!std::isfinite(out.v)) throw std::runtime_error("grad_check: non-finite value at point");
  const GradientMap gm = g.backward(out);

  // Value-only probes: constants build no nodes.
  Graph probe;
  std::vector<Scalar> c(n);
  auto eval = [&](std::span<const double> p) {
    for (std::size_t i = 0; i < n; ++i) c[i] = Scalar{p[i]};
    const Scalar r = f(probe, c);
    if (!std::isfinite(r.v)) throw std::runtime_error("grad_check: non-finite value at probe point");
    return r.v;
  };

  std::vector<double> p(point.begin(), point.end());
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double x0 = p[i];
    p[i] = x0 + step;
    const double fp = eval(p);
    p[i] = x0 - step;
    const double fm = eval(p);
    p[i] = x0;
    const double fd = (fp - fm) / (2.0 * step);
    const double an = gm.at(params[i]);
    const double err = std::abs(an - fd) / std::max(1.0, std::abs(an));
    worst = std::max(worst, err);
  }
  return worst;
}

}  // namespace atvi::diff
