#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace atvi::diff {

class Graph;

/// Double-precision scalar tracked on a reverse-mode graph.
/// node < 0 marks a constant: it contributes zero adjoint everywhere.
struct Scalar {
  double v = 0.0;
  std::int32_t node = -1;
  Graph* g = nullptr;

  Scalar() = default;
  Scalar(double value) : v(value) {}  // NOLINT: implicit constant lift
  bool tracked() const { return node >= 0; }
};

inline double value_of(double x) { return x; }
inline double value_of(const Scalar& s) { return s.v; }

/// Adjoints of registered parameters after a backward pass.
/// Every parameter registered on the graph has an entry (possibly zero);
/// constants and unregistered nodes read as 0.
class GradientMap {
 public:
  GradientMap() = default;
  GradientMap(std::vector<std::uint32_t> nodes, std::vector<double> vals)
      : nodes_(std::move(nodes)), vals_(std::move(vals)) {}

  double at(const Scalar& p) const {
    if (p.node < 0) return 0.0;
    return at_node(static_cast<std::uint32_t>(p.node));
  }
  double at_node(std::uint32_t node) const;
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<std::uint32_t> nodes_;  // ascending
  std::vector<double> vals_;
};

/// Append-only tape of scalar operations. Creation order is topological
/// order (parents precede children). Single writer; concurrent forward
/// passes must use disjoint graphs.
class Graph {
 public:
  /// Records a leaf. Parameters are remembered for gradient extraction.
  /// Rejects non-finite values.
  Scalar lift(double value, bool as_parameter = false);

  /// Bulk leaf registration; returns the node id of the first value. The
  /// values become consecutive nodes (parameters in registration order).
  std::int32_t lift_block(std::span<const double> values, bool as_parameter);

  /// Reverse sweep from `output`. The adjoint buffer is zeroed on entry,
  /// so repeated calls on the same graph give identical results.
  /// Throws if `output` is not attached to this graph.
  GradientMap backward(const Scalar& output);

  /// Reverse sweep that adds scale * adjoint of every registered parameter
  /// into dst (dst is ordered by parameter registration).
  void backward_accumulate(const Scalar& output, double scale, std::span<double> dst);

  /// Drops all nodes but keeps arena capacity for reuse.
  void clear();

  std::size_t node_count() const { return head_.size() - 1; }

  // -- node construction (used by the operator library) --
  Scalar make_unary(const Scalar& x, double v, double dx);
  Scalar make_binary(const Scalar& x, const Scalar& y, double v, double dx, double dy);
  Scalar make_nary(std::span<const Scalar> xs, double v, std::span<const double> dxs);
  /// One node for v = sum_i a_i*b_i (partials b_i w.r.t. a_i and vice versa).
  Scalar make_dot(std::span<const Scalar> a, std::span<const Scalar> b, double v);

 private:
  std::int32_t close_node();
  void sweep(const Scalar& output);

  std::vector<std::uint32_t> head_{0};  // CSR offsets, node i's parents in [head_[i], head_[i+1])
  std::vector<std::uint32_t> par_;
  std::vector<double> pd_;
  std::vector<std::uint32_t> params_;
  std::vector<double> adj_;  // scratch for backward
};

// Arithmetic. Mixed Scalar/double overloads resolve through the implicit
// constant constructor; ops on two constants fold to a constant.
Scalar operator+(const Scalar& x, const Scalar& y);
Scalar operator-(const Scalar& x, const Scalar& y);
Scalar operator*(const Scalar& x, const Scalar& y);
Scalar operator/(const Scalar& x, const Scalar& y);
Scalar operator-(const Scalar& x);
inline Scalar& operator+=(Scalar& x, const Scalar& y) { return x = x + y; }
inline Scalar& operator-=(Scalar& x, const Scalar& y) { return x = x - y; }
inline Scalar& operator*=(Scalar& x, const Scalar& y) { return x = x * y; }
inline Scalar& operator/=(Scalar& x, const Scalar& y) { return x = x / y; }

Scalar exp(const Scalar& x);
Scalar log(const Scalar& x);
Scalar pow(const Scalar& x, double p);
Scalar pow(const Scalar& x, const Scalar& p);  // requires x > 0 when p is tracked
Scalar sqrt(const Scalar& x);
Scalar tanh(const Scalar& x);
Scalar sin(const Scalar& x);
Scalar cos(const Scalar& x);
Scalar abs(const Scalar& x);                  // subgradient 0 at 0
Scalar max(const Scalar& x, const Scalar& y); // subgradient 0 at ties
Scalar min(const Scalar& x, const Scalar& y);
Scalar lgamma(const Scalar& x);               // derivative: digamma

// Numerically stable sigmoid/softplus, usable from templates on either
// scalar type.
double sigmoid(double x);
double softplus(double x);
Scalar sigmoid(const Scalar& x);
Scalar softplus(const Scalar& x);

Scalar sum(std::span<const Scalar> xs);
Scalar log_sum_exp(std::span<const Scalar> xs);
Scalar dot(std::span<const Scalar> a, std::span<const Scalar> b);

double digamma(double x);

/// A differentiable function of a parameter vector, built on the supplied
/// graph. Used by grad_check and test oracles.
using DiffFn = std::function<Scalar(Graph&, std::span<const Scalar>)>;

/// Max over coordinates of |analytic - central difference| / max(1, |analytic|).
/// Throws on non-finite probe values.
double grad_check(const DiffFn& f, std::span<const double> point, double step);

}  // namespace atvi::diff
