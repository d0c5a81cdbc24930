#include "atvi/diff.hpp"

#include <cmath>
#include <numbers>
#include <vector>

#include "atvi/rng.hpp"
#include "doctest.h"

using atvi::Rng;
using namespace atvi::diff;

TEST_SUITE_BEGIN("diff");

TEST_CASE("lift identity and power rule") {
  Graph g;
  Scalar x = g.lift(0.0, true);
  auto gm = g.backward(x);
  CHECK(gm.at(x) == 1.0);

  g.clear();
  x = g.lift(2.0, true);
  Scalar y = x * x;
  gm = g.backward(y);
  CHECK(gm.at(x) == 4.0);
}

TEST_CASE("lift rejects non-finite") {
  Graph g;
  CHECK_THROWS(g.lift(std::numeric_limits<double>::infinity()));
  CHECK_THROWS(g.lift(std::nan("")));
}

TEST_CASE("softplus gradient matches central differences") {
  Graph g;
  Scalar x = g.lift(1.5, true);
  Scalar y = softplus(x);
  auto gm = g.backward(y);
  const double h = 1e-6;
  const double fd = (softplus(1.5 + h) - softplus(1.5 - h)) / (2.0 * h);
  CHECK(gm.at(x) == doctest::Approx(fd).epsilon(1e-9));
  CHECK(gm.at(x) == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))).epsilon(1e-12));
}

TEST_CASE("backward: product rule and inverse composition") {
  Graph g;
  Scalar x = g.lift(3.0, true);
  Scalar y = g.lift(5.0, true);
  auto gm = g.backward(x * y);
  CHECK(gm.at(x) == 5.0);
  CHECK(gm.at(y) == 3.0);

  g.clear();
  x = g.lift(0.7, true);
  Scalar z = log(exp(x));
  gm = g.backward(z);
  CHECK(gm.at(x) == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("backward is idempotent and errors on detached output") {
  Graph g;
  Scalar x = g.lift(1.2, true);
  Scalar y = tanh(x) * x;
  const double g1 = g.backward(y).at(x);
  const double g2 = g.backward(y).at(x);
  CHECK(g1 == g2);

  Scalar c{4.0};
  CHECK_THROWS(g.backward(c));
}

TEST_CASE("constants contribute zero adjoint") {
  Graph g;
  Scalar x = g.lift(2.0, true);
  Scalar c{10.0};
  Scalar y = x * c + c;
  auto gm = g.backward(y);
  CHECK(gm.at(x) == 10.0);
  CHECK(gm.at(c) == 0.0);
}

TEST_CASE("grad_check: constant gradient of sum") {
  DiffFn f = [](Graph&, std::span<const Scalar> x) {
    return sum(x);
  };
  // Linear function: the only central-difference error is fp rounding, so a
  // coarse step keeps it far below 1e-12.
  std::vector<double> p{0.3, -1.2, 4.0};
  CHECK(grad_check(f, p, 1e-2) <= 1e-12);
}

TEST_CASE("grad_check: trig product") {
  DiffFn f = [](Graph&, std::span<const Scalar> x) { return sin(x[0]) * cos(x[1]); };
  std::vector<double> p{0.3, 1.1};
  CHECK(grad_check(f, p, 1e-5) < 1e-7);
}

TEST_CASE("grad_check rejects non-finite probes") {
  DiffFn f = [](Graph&, std::span<const Scalar> x) { return log(x[0]); };
  std::vector<double> p{1e-7};  // x - step < 0 -> log gives NaN
  CHECK_THROWS(grad_check(f, p, 1e-5));
}

TEST_CASE("dot node matches unfused product sum") {
  Graph g;
  std::vector<Scalar> a, b;
  for (int i = 0; i < 5; ++i) {
    a.push_back(g.lift(0.3 * i - 0.7, true));
    b.push_back(g.lift(1.1 - 0.2 * i, true));
  }
  Scalar d = dot(a, b);
  double ref = 0.0;
  for (int i = 0; i < 5; ++i) ref += a[i].v * b[i].v;
  CHECK(d.v == doctest::Approx(ref).epsilon(1e-15));
  auto gm = g.backward(d);
  for (int i = 0; i < 5; ++i) {
    CHECK(gm.at(a[i]) == b[i].v);
    CHECK(gm.at(b[i]) == a[i].v);
  }
}

TEST_CASE("log_sum_exp partials are the softmax") {
  Graph g;
  std::vector<Scalar> xs{g.lift(0.1, true), g.lift(2.0, true), g.lift(-1.0, true)};
  Scalar l = log_sum_exp(xs);
  auto gm = g.backward(l);
  double s = 0.0;
  for (const auto& x : xs) s += std::exp(x.v - l.v);
  CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto& x : xs) CHECK(gm.at(x) == doctest::Approx(std::exp(x.v - l.v)).epsilon(1e-14));
}

TEST_CASE("subgradient conventions at kinks") {
  Graph g;
  Scalar x = g.lift(0.0, true);
  CHECK(g.backward(abs(x)).at(x) == 0.0);

  g.clear();
  x = g.lift(1.0, true);
  Scalar y = g.lift(1.0, true);
  auto gm = g.backward(max(x, y));
  CHECK(gm.at(x) == 0.0);
  CHECK(gm.at(y) == 0.0);
  gm = g.backward(min(x, y));
  CHECK(gm.at(x) == 0.0);
  CHECK(gm.at(y) == 0.0);
}

TEST_CASE("lgamma derivative is digamma (finite-difference oracle)") {
  for (double x : {0.4, 1.3, 2.0, 7.9, 40.0}) {
    const double h = 1e-6;
    const double fd = (std::lgamma(x + h) - std::lgamma(x - h)) / (2.0 * h);
    CHECK(digamma(x) == doctest::Approx(fd).epsilon(1e-7));
  }
  Graph g;
  Scalar x = g.lift(3.7, true);
  CHECK(g.backward(lgamma(x)).at(x) == digamma(3.7));
}

TEST_CASE("linearity of gradients on a fixed graph") {
  Graph g;
  Scalar x = g.lift(0.8, true);
  Scalar f1 = sin(x) * x;
  Scalar f2 = exp(x) / (x + 2.0);
  const double a = 2.5, b = -1.75;
  Scalar combo = Scalar{a} * f1 + Scalar{b} * f2;
  const double gc = g.backward(combo).at(x);
  const double g1 = g.backward(f1).at(x);
  const double g2 = g.backward(f2).at(x);
  CHECK(std::abs(gc - (a * g1 + b * g2)) <= 1e-12);
}

// Chain-rule property: random compositions of depth <= 10, checked against
// central differences.
namespace {

Scalar random_composition(Rng& rng, Graph&, std::span<const Scalar> xs, int depth) {
  std::vector<Scalar> pool(xs.begin(), xs.end());
  for (int d = 0; d < depth; ++d) {
    const Scalar a = pool[rng.integer(pool.size())];
    const Scalar b = pool[rng.integer(pool.size())];
    Scalar r;
    switch (rng.integer(10)) {
      case 0: r = a + b; break;
      case 1: r = a - b; break;
      case 2: r = a * b; break;
      case 3: r = a / (softplus(b) + 0.5); break;
      case 4: r = tanh(a); break;
      case 5: r = sigmoid(a + b); break;
      case 6: r = log(softplus(a) + 0.1); break;
      case 7: r = sqrt(softplus(a) + 0.2); break;
      case 8: r = sin(a) * cos(b); break;
      default: r = exp(Scalar{0.3} * a); break;
    }
    pool.push_back(r);
  }
  return sum(pool);
}

}  // namespace

TEST_CASE("chain rule over random compositions") {
  Rng seeds(20240811);
  for (int trial = 0; trial < 40; ++trial) {
    const std::uint64_t s = seeds.bits();
    std::vector<double> point(3);
    {
      Rng r(s);
      for (auto& p : point) p = r.uniform(-1.5, 1.5);
    }
    DiffFn f = [s](Graph& g, std::span<const Scalar> x) {
      Rng r(s);
      for (int i = 0; i < 3; ++i) (void)r.uniform(-1.5, 1.5);  // re-sync stream
      return random_composition(r, g, x, 10);
    };
    CHECK(grad_check(f, point, 1e-5) < 1e-4);
  }
}

TEST_CASE("determinism: identical graphs give bit-identical gradients") {
  auto run = [] {
    Graph g;
    Scalar x = g.lift(0.37, true);
    Scalar y = g.lift(-1.2, true);
    Scalar out = sigmoid(x * y) + softplus(x - y) * tanh(y);
    auto gm = g.backward(out);
    return std::pair{gm.at(x), gm.at(y)};
  };
  auto [a1, b1] = run();
  auto [a2, b2] = run();
  CHECK(a1 == a2);
  CHECK(b1 == b2);
}

TEST_SUITE_END();
