#include "atvi/flow.hpp"

#include <fstream>

#include "atvi/rng.hpp"
#include "json.hpp"

namespace atvi::flow {

namespace {

constexpr const char* kCheckpointVersion = "atvi-flow-1";

}  // namespace

FlowStack::FlowStack(FlowConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.dim < 1 || cfg_.knots < 2 || cfg_.layers_per_block < 1 || cfg_.hidden < 1 || cfg_.blocks < 1)
    throw std::invalid_argument("FlowStack: invalid configuration");
  std::size_t per_layer = 2 * static_cast<std::size_t>(cfg_.dim);
  for (int i = 0; i < cfg_.dim; ++i) per_layer += cond_size(i);
  const std::size_t per_block = per_layer * static_cast<std::size_t>(cfg_.layers_per_block);
  block_off_.resize(static_cast<std::size_t>(cfg_.blocks) + 1);
  for (int b = 0; b <= cfg_.blocks; ++b) block_off_[static_cast<std::size_t>(b)] = per_block * static_cast<std::size_t>(b);
  params_.assign(block_off_.back(), 0.0);

  // Hidden layers: small deterministic init so gradients can reach them once
  // the (zero) final layer moves. Final layer and the first dimension's free
  // vector stay zero: every block is the exact identity at construction.
  Rng rng = Rng::sub(seed, "flow-init");
  const auto h = static_cast<std::size_t>(cfg_.hidden);
  for (int b = 0; b < cfg_.blocks; ++b) {
    for (int l = 0; l < cfg_.layers_per_block; ++l) {
      for (int i = 1; i < cfg_.dim; ++i) {
        double* p = params_.data() + cond_offset(b, l, i);
        const double s1 = 1.0 / std::sqrt(static_cast<double>(i));
        for (std::size_t j = 0; j < h * static_cast<std::size_t>(i); ++j) p[j] = rng.uniform(-s1, s1);
        double* w2 = p + h * static_cast<std::size_t>(i) + h;  // skip b1
        const double s2 = 1.0 / std::sqrt(static_cast<double>(cfg_.hidden));
        for (std::size_t j = 0; j < h * h; ++j) w2[j] = rng.uniform(-s2, s2);
        // b2, W3, b3 stay zero.
      }
    }
  }
}

std::size_t FlowStack::cond_size(int dim) const {
  const int nraw = 3 * cfg_.knots - 1;
  if (dim == 0) return static_cast<std::size_t>(nraw);
  return mlp_size(dim, cfg_.hidden, nraw);
}

std::size_t FlowStack::affine_offset(int block, int layer) const {
  std::size_t per_layer = 2 * static_cast<std::size_t>(cfg_.dim);
  for (int i = 0; i < cfg_.dim; ++i) per_layer += cond_size(i);
  return block_off_[static_cast<std::size_t>(block)] + static_cast<std::size_t>(layer) * per_layer;
}

std::size_t FlowStack::cond_offset(int block, int layer, int dim) const {
  std::size_t off = affine_offset(block, layer) + 2 * static_cast<std::size_t>(cfg_.dim);
  for (int i = 0; i < dim; ++i) off += cond_size(i);
  return off;
}

std::string FlowStack::param_name(std::size_t flat) const {
  for (int b = 0; b < cfg_.blocks; ++b) {
    if (flat >= block_end(b)) continue;
    for (int l = 0; l < cfg_.layers_per_block; ++l) {
      const std::size_t aoff = affine_offset(b, l);
      if (flat >= aoff && flat < aoff + 2 * static_cast<std::size_t>(cfg_.dim)) {
        const std::size_t r = flat - aoff;
        return "b" + std::to_string(b) + ".l" + std::to_string(l) + ".d" + std::to_string(r / 2) +
               (r % 2 == 0 ? ".aff_s" : ".aff_b");
      }
      for (int i = 0; i < cfg_.dim; ++i) {
        const std::size_t off = cond_offset(b, l, i);
        const std::size_t sz = cond_size(i);
        if (flat < off || flat >= off + sz) continue;
        std::size_t r = flat - off;
        std::string base = "b" + std::to_string(b) + ".l" + std::to_string(l) + ".d" + std::to_string(i);
        if (i == 0) return base + ".free[" + std::to_string(r) + "]";
        const auto h = static_cast<std::size_t>(cfg_.hidden);
        const std::size_t sizes[6] = {h * static_cast<std::size_t>(i), h, h * h, h,
                                      static_cast<std::size_t>(3 * cfg_.knots - 1) * h,
                                      static_cast<std::size_t>(3 * cfg_.knots - 1)};
        static const char* names[6] = {"W1", "b1", "W2", "b2", "W3", "b3"};
        for (int part = 0; part < 6; ++part) {
          if (r < sizes[part]) return base + "." + names[part] + "[" + std::to_string(r) + "]";
          r -= sizes[part];
        }
      }
    }
  }
  throw std::out_of_range("FlowStack::param_name: index out of range");
}

void FlowStack::save_checkpoint(const std::string& path) const {
  nlohmann::json j;
  j["version"] = kCheckpointVersion;
  j["dim"] = cfg_.dim;
  j["knots"] = cfg_.knots;
  j["layers_per_block"] = cfg_.layers_per_block;
  j["hidden"] = cfg_.hidden;
  j["blocks"] = cfg_.blocks;
  nlohmann::json params = nlohmann::json::object();
  for (std::size_t i = 0; i < params_.size(); ++i) params[param_name(i)] = params_[i];
  j["params"] = std::move(params);
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << j.dump(1) << "\n";
}

void FlowStack::load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  nlohmann::json j;
  in >> j;
  if (j.value("version", "") != kCheckpointVersion)
    throw std::runtime_error("checkpoint version mismatch in " + path);
  if (j["dim"] != cfg_.dim || j["knots"] != cfg_.knots || j["layers_per_block"] != cfg_.layers_per_block ||
      j["hidden"] != cfg_.hidden || j["blocks"] != cfg_.blocks)
    throw std::runtime_error("checkpoint shape mismatch in " + path);
  const auto& params = j.at("params");
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i] = params.at(param_name(i)).get<double>();
}

double rqs_invert(const Knots<double>& kn, double y) {
  if (y < -kTail || y > kTail) return y;
  const int K = static_cast<int>(kn.y.size()) - 1;
  int k = K - 1;
  for (int i = 0; i < K; ++i) {
    if (y < kn.y[static_cast<std::size_t>(i) + 1]) {
      k = i;
      break;
    }
  }
  const auto ku = static_cast<std::size_t>(k);
  const double w = kn.x[ku + 1] - kn.x[ku];
  const double hgt = kn.y[ku + 1] - kn.y[ku];
  const double s = hgt / w;
  const double dsum = kn.d[ku + 1] + kn.d[ku] - 2.0 * s;
  // Same nearest-to-zero anchoring as rqs_apply (the solved quadratic is
  // symmetric under t -> 1-t with the derivative endpoints swapped).
  if (std::abs(kn.y[ku + 1]) < std::abs(kn.y[ku])) {
    const double dy = kn.y[ku + 1] - y;
    const double a = hgt * (s - kn.d[ku + 1]) + dy * dsum;
    const double b = hgt * kn.d[ku + 1] - dy * dsum;
    const double c = -s * dy;
    const double disc = b * b - 4.0 * a * c;
    const double u = 2.0 * c / (-b - std::sqrt(std::max(disc, 0.0)));
    return kn.x[ku + 1] - u * w;
  }
  const double dy = y - kn.y[ku];
  const double a = hgt * (s - kn.d[ku]) + dy * dsum;
  const double b = hgt * kn.d[ku] - dy * dsum;
  const double c = -s * dy;
  const double disc = b * b - 4.0 * a * c;
  const double t = 2.0 * c / (-b - std::sqrt(std::max(disc, 0.0)));
  return kn.x[ku] + t * w;
}

void stack_forward_values(const FlowStack& st, std::span<const double> z0, int upto_block,
                          std::span<double> xi, double& logdet) {
  StackWork<double> w;
  stack_forward<double>(st, st.params(), z0, upto_block, xi, logdet, w);
}

void stack_inverse(const FlowStack& st, std::span<const double> xi, int upto_block,
                   std::span<double> z0, double& logdet) {
  const auto& cfg = st.config();
  if (upto_block < 1 || upto_block > cfg.blocks) throw std::invalid_argument("stack_inverse: block index out of range");
  StackWork<double> w;
  std::vector<double> cur(xi.begin(), xi.end());
  std::vector<double> inp(cur.size());
  const int nraw = 3 * cfg.knots - 1;
  logdet = 0.0;
  for (int b = upto_block - 1; b >= 0; --b) {
    for (int l = cfg.layers_per_block - 1; l >= 0; --l) {
      // Recover the layer input dimension by dimension; the conditioner sees
      // only already-recovered prefix entries.
      const std::size_t aff = st.affine_offset(b, l);
      for (int i = 0; i < cfg.dim; ++i) {
        const auto iu = static_cast<std::size_t>(i);
        const auto p = std::span<const double>(st.params()).subspan(st.cond_offset(b, l, i), st.cond_size(i));
        conditioner_eval<double>(p, i, cfg.hidden, nraw,
                                 std::span<const double>(inp).first(iu), w);
        knots_from_raw<double>(w.raw, cfg.knots, w.knots);
        const double s_aff = st.params()[aff + 2 * iu];
        const double b_aff = st.params()[aff + 2 * iu + 1];
        const double x = rqs_invert(w.knots, cur[iu]);
        inp[iu] = (x - b_aff) / std::exp(s_aff);
        double yv = 0.0, dld = 0.0;
        rqs_apply<double>(w.knots, x, yv, dld);
        logdet += s_aff + dld;
      }
      std::swap(cur, inp);
    }
  }
  for (std::size_t i = 0; i < z0.size(); ++i) z0[i] = cur[i];
}

double log_q_at(const FlowStack& st, std::span<const double> xi, int upto_block) {
  std::vector<double> z0(xi.size());
  double logdet = 0.0;
  stack_inverse(st, xi, upto_block, z0, logdet);
  return log_q<double>(z0, logdet);
}

void BoundStack::forward(std::span<const double> z0, int upto_block, std::vector<diff::Scalar>& xi,
                         diff::Scalar& logdet, StackWork<diff::Scalar>& w) const {
  std::vector<diff::Scalar> z(z0.size());
  for (std::size_t i = 0; i < z0.size(); ++i) z[i] = diff::Scalar{z0[i]};
  xi.assign(z0.size(), diff::Scalar{0.0});
  logdet = diff::Scalar{0.0};
  stack_forward<diff::Scalar>(*stack, params, z, upto_block, xi, logdet, w);
}

BoundStack bind(const FlowStack& st, diff::Graph& g, const std::vector<bool>& active_blocks) {
  if (active_blocks.size() != static_cast<std::size_t>(st.config().blocks))
    throw std::invalid_argument("bind: active mask size mismatch");
  BoundStack b;
  b.stack = &st;
  b.graph = &g;
  b.params.resize(st.param_count());
  const auto vals = st.params();
  for (int k = 0; k < st.config().blocks; ++k) {
    const std::size_t begin = st.block_begin(k), end = st.block_end(k);
    if (active_blocks[static_cast<std::size_t>(k)]) {
      const std::int32_t first = g.lift_block(vals.subspan(begin, end - begin), /*as_parameter=*/true);
      for (std::size_t i = begin; i < end; ++i) {
        diff::Scalar s;
        s.v = vals[i];
        s.node = first + static_cast<std::int32_t>(i - begin);
        s.g = &g;
        b.params[i] = s;
      }
    } else {
      for (std::size_t i = begin; i < end; ++i) b.params[i] = diff::Scalar{vals[i]};
    }
  }
  return b;
}

void rebind(const FlowStack& st, diff::Graph& g, const std::vector<bool>& active_blocks) {
  if (g.node_count() != 0) throw std::invalid_argument("rebind: graph must be cleared first");
  const auto vals = st.params();
  for (int k = 0; k < st.config().blocks; ++k) {
    if (!active_blocks[static_cast<std::size_t>(k)]) continue;
    const std::size_t begin = st.block_begin(k), end = st.block_end(k);
    (void)g.lift_block(vals.subspan(begin, end - begin), /*as_parameter=*/true);
  }
}

}  // namespace atvi::flow
