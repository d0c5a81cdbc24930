#include "atvi/runner.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "atvi/mcmc.hpp"
#include "atvi/post.hpp"
#include "json.hpp"

namespace atvi::runner {

namespace fs = std::filesystem;

namespace {

surject::ParamBox override_box(const surject::ParamBox& fallback, const config::RunConfig& cfg) {
  if (cfg.box_lo.empty()) return fallback;
  return surject::ParamBox::bounded(cfg.box_lo, cfg.box_hi);
}

}  // namespace

TargetBundle build_target(const config::RunConfig& cfg, bool require_data) {
  TargetBundle out;
  switch (cfg.target) {
    case config::TargetKind::sir: {
      models::SirConfig mc;
      mc.box = override_box(mc.box, cfg);
      out.needs_data = true;
      if (cfg.data_path.empty()) {
        if (require_data) throw config::ConfigError("target.data is required to fit the sir target");
        out.target = std::make_unique<models::SirTarget>(mc);
      } else {
        out.target = std::make_unique<models::SirTarget>(mc, TimeSeriesData::read_csv(cfg.data_path));
      }
      return out;
    }
    case config::TargetKind::msir: {
      models::MsirConfig mc;
      mc.box = override_box(mc.box, cfg);
      mc.births = cfg.msir_births;
      if (!cfg.msir_pop.empty()) {
        if (cfg.msir_pop.size() != 6) throw config::ConfigError("target.pop must have 6 entries");
        for (int i = 0; i < 6; ++i) mc.pop[static_cast<std::size_t>(i)] = cfg.msir_pop[static_cast<std::size_t>(i)];
      }
      out.needs_data = true;
      if (cfg.data_path.empty()) {
        if (require_data) throw config::ConfigError("target.data is required to fit the msir target");
        out.target = std::make_unique<models::MsirTarget>(mc);
      } else {
        out.target = std::make_unique<models::MsirTarget>(mc, TimeSeriesData::read_csv(cfg.data_path));
      }
      return out;
    }
    case config::TargetKind::gaussian: {
      models::GaussianSpec spec;
      spec.mean = cfg.gaussian_mean.empty() ? std::vector<double>{0.0} : cfg.gaussian_mean;
      spec.sd = cfg.gaussian_sd.empty() ? std::vector<double>(spec.mean.size(), 1.0) : cfg.gaussian_sd;
      if (!cfg.box_lo.empty()) spec.box = surject::ParamBox::bounded(cfg.box_lo, cfg.box_hi);
      out.target = models::make_synthetic_target(spec);
      return out;
    }
    case config::TargetKind::boundary: {
      out.target = models::make_synthetic_target(models::BoundarySpec{cfg.boundary_c});
      return out;
    }
    case config::TargetKind::bimodal: {
      models::BimodalSpec spec;
      spec.m1 = cfg.bimodal_m1;
      spec.s1 = cfg.bimodal_s1;
      spec.w1 = cfg.bimodal_w1;
      spec.m2 = cfg.bimodal_m2;
      spec.s2 = cfg.bimodal_s2;
      spec.w2 = cfg.bimodal_w2;
      out.target = models::make_synthetic_target(spec);
      return out;
    }
  }
  throw config::ConfigError("unknown target kind");
}

FitSetup build_fit(const config::RunConfig& cfg, const Target& target, int threads) {
  FitSetup fit;
  const bool annealed = cfg.method == config::Method::atvi;
  fit.ladder.temps = annealed ? cfg.ladder : std::vector<double>{1.0};
  fit.ladder.validate();

  flow::FlowConfig fc;
  fc.dim = target.dim();
  fc.knots = cfg.flow_knots;
  fc.layers_per_block = cfg.flow_layers_per_block;
  fc.hidden = cfg.flow_hidden;
  fc.blocks = fit.ladder.size();
  fit.stack = std::make_unique<flow::FlowStack>(fc, cfg.seed);

  auto surj = surject::SurjectorConfig::defaults(target.box(), cfg.surj_r_frac);
  if (cfg.surj_r) {
    for (auto& r : surj.r) r = *cfg.surj_r;
    for (std::size_t i = 0; i < surj.r.size(); ++i) {
      surj.b_lo[i] = std::log(99.0) / surj.r[i];
      surj.b_hi[i] = surj.b_lo[i];
    }
  }
  if (cfg.surj_slope) {
    for (auto& b : surj.b_lo) b = *cfg.surj_slope;
    for (auto& b : surj.b_hi) b = *cfg.surj_slope;
  }
  surj.eps = cfg.surj_eps;
  bool any_bound = false;
  for (int i = 0; i < target.box().dim(); ++i) any_bound = any_bound || !target.box().unconstrained(i);
  if (any_bound) surj.validate(target.box());

  fit.problem.stack = fit.stack.get();
  fit.problem.target = &target;
  fit.problem.surj = std::move(surj);
  fit.problem.map = cfg.method == config::Method::nfvi ? anneal::BoundaryMap::logistic
                                                       : anneal::BoundaryMap::surjection;
  if (!any_bound) fit.problem.map = anneal::BoundaryMap::none;

  fit.train = cfg.train;
  if (cfg.method != config::Method::atvi) fit.train.finetune_iters = 0;
  fit.train.threads = threads;
  return fit;
}

std::vector<std::vector<double>> draw_posterior(const anneal::Problem& prob, int n, Rng& rng) {
  const int d = prob.target->dim();
  const int upto = prob.stack->config().blocks;
  std::vector<std::vector<double>> out;
  out.reserve(static_cast<std::size_t>(n));
  flow::StackWork<double> work;
  std::vector<double> z(static_cast<std::size_t>(d)), xi(static_cast<std::size_t>(d)), theta;
  long escapes = 0;
  const long cap = 10L * n;
  while (static_cast<int>(out.size()) < n) {
    for (auto& v : z) v = rng.normal();
    double logdet = 0.0;
    flow::stack_forward<double>(*prob.stack, prob.stack->params(), z, upto, xi, logdet, work);
    try {
      (void)anneal::boundary_map_term<double>(prob, xi, theta);
      out.push_back(theta);
    } catch (const surject::EscapeError&) {
      if (++escapes > cap) throw anneal::TrainingError("posterior sampling: persistent preimage escapes", upto);
    }
  }
  return out;
}

double marginal_density_1d(const anneal::Problem& prob, double theta) {
  if (prob.target->dim() != 1) throw std::invalid_argument("marginal_density_1d needs a 1-d target");
  const auto& box = prob.target->box();
  const double a = box.lo[0], b = box.hi[0];
  const int upto = prob.stack->config().blocks;
  double loc = 0.0, scale = 1.0;
  anneal::latent_affine(box, prob.map, 0, loc, scale);
  // Density of the affinely mapped flow output at a physical latent point.
  auto q_xi = [&](double xp) {
    const std::vector<double> xi{(xp - loc) / scale};
    return std::exp(flow::log_q_at(*prob.stack, xi, upto)) / scale;
  };
  switch (prob.map) {
    case anneal::BoundaryMap::none:
      return q_xi(theta);
    case anneal::BoundaryMap::surjection: {
      double q = q_xi(theta);
      const bool lo_fin = std::isfinite(a), hi_fin = std::isfinite(b);
      const double mid = lo_fin && hi_fin ? 0.5 * (a + b) : 0.0;
      // Reflected preimages: only those inside the reflecting region fold
      // back onto theta.
      if (lo_fin && (!hi_fin || theta < mid)) q += q_xi(2.0 * a - theta);
      if (hi_fin && (!lo_fin || theta > mid)) q += q_xi(2.0 * b - theta);
      return q;
    }
    case anneal::BoundaryMap::logistic: {
      if (!std::isfinite(a) || !std::isfinite(b)) throw std::invalid_argument("logistic map needs a bounded box");
      const double p = (theta - a) / (b - a);
      const double xi = std::log(p / (1.0 - p));
      const double jac = (b - a) * p * (1.0 - p);
      return q_xi(xi) / jac;
    }
  }
  throw std::logic_error("marginal_density_1d: bad map");
}

int threads_from_env() {
  const char* env = std::getenv("ATVI_THREADS");
  if (!env) return 1;
  const int n = std::atoi(env);
  if (n < 1) throw config::ConfigError("ATVI_THREADS must be a positive integer");
  return n;
}

FitArtifacts run_fit(const config::RunConfig& cfg, const std::string& out_dir, int threads) {
  fs::create_directories(out_dir);
  TargetBundle bundle = build_target(cfg, /*require_data=*/true);
  FitSetup fit = build_fit(cfg, *bundle.target, threads);

  anneal::Trace trace = cfg.method == config::Method::atvi
                            ? anneal::run_atvi(fit.problem, fit.ladder, fit.train)
                            : anneal::run_tvi(fit.problem, fit.train);

  Rng rng = Rng::sub(cfg.seed, "posterior-samples");
  const auto samples = draw_posterior(fit.problem, cfg.output_samples, rng);

  FitArtifacts art;
  art.samples_csv = (fs::path(out_dir) / "samples.csv").string();
  art.summary_json = (fs::path(out_dir) / "summary.json").string();
  art.trace_csv = (fs::path(out_dir) / "trace.csv").string();
  art.resolved_config = (fs::path(out_dir) / "config_resolved.toml").string();

  mcmc::write_samples_csv(art.samples_csv, samples, bundle.target->param_names());
  trace.write_csv(art.trace_csv);
  {
    std::ofstream out(art.resolved_config);
    if (!out) throw std::runtime_error("cannot write " + art.resolved_config);
    out << cfg.to_toml();
  }

  const auto summary = post::summarize(samples, bundle.target->param_names());
  std::vector<std::pair<std::string, double>> extras;
  double final_elbo = std::numeric_limits<double>::quiet_NaN();
  for (auto it = trace.rows.rbegin(); it != trace.rows.rend(); ++it)
    if (std::isfinite(it->elbo)) {
      final_elbo = it->elbo;
      break;
    }
  extras.emplace_back("final_objective", final_elbo);
  extras.emplace_back("trace_rows", static_cast<double>(trace.rows.size()));

  if (bundle.target->dim() == 1) {
    // Plot-ready fitted marginal density over the box.
    const auto& box = bundle.target->box();
    const double lo = std::isfinite(box.lo[0]) ? box.lo[0] : -5.0;
    const double hi = std::isfinite(box.hi[0]) ? box.hi[0] : 5.0;
    std::ofstream dens((fs::path(out_dir) / "density.csv").string());
    dens << "theta,density\n";
    char buf[80];
    const int grid = 513;
    for (int g = 0; g < grid; ++g) {
      double x = lo + (hi - lo) * static_cast<double>(g) / (grid - 1);
      if (g == 0) x = lo + 1e-9 * (hi - lo);
      if (g == grid - 1) x = hi - 1e-9 * (hi - lo);
      std::snprintf(buf, sizeof(buf), "%.17g,%.17g\n", x, marginal_density_1d(fit.problem, x));
      dens << buf;
    }
    extras.emplace_back("density_near_lower_bound",
                        marginal_density_1d(fit.problem, lo + 0.02 * (hi - lo)));
  }
  post::write_summary_json(art.summary_json, summary, {}, extras);
  return art;
}

void run_mcmc(const config::RunConfig& cfg, const std::string& out_dir) {
  fs::create_directories(out_dir);
  TargetBundle bundle = build_target(cfg, /*require_data=*/true);
  const auto chain = mcmc::run_chain(*bundle.target, cfg.mcmc_iters, cfg.mcmc_burn_in, cfg.mcmc_thin, cfg.seed);
  mcmc::write_samples_csv((fs::path(out_dir) / "samples.csv").string(), chain.samples,
                          bundle.target->param_names());
  mcmc::write_acceptance_csv((fs::path(out_dir) / "acceptance.csv").string(), chain.accepted);
  const auto e = mcmc::ess(chain.samples);
  nlohmann::json j;
  j["acceptance_rate"] = chain.acceptance_rate;
  nlohmann::json per = nlohmann::json::object();
  const auto names = bundle.target->param_names();
  for (std::size_t i = 0; i < e.size(); ++i) per[names[i]] = e[i];
  j["ess"] = std::move(per);
  std::ofstream out((fs::path(out_dir) / "ess.json").string());
  out << j.dump(1) << "\n";
}

void run_simulate(const config::RunConfig& cfg, std::span<const double> theta, std::uint64_t seed,
                  const std::string& out_csv) {
  TargetBundle bundle = build_target(cfg, /*require_data=*/false);
  if (!bundle.target->can_simulate()) throw config::ConfigError("target does not support simulation");
  if (static_cast<int>(theta.size()) != bundle.target->dim())
    throw config::ConfigError("theta has the wrong dimension for the target");
  Rng rng = Rng::sub(seed, "simulate");
  const auto data = bundle.target->simulate(theta, rng);
  data.write_csv(out_csv);

  nlohmann::json side;
  side["seed"] = seed;
  const auto names = bundle.target->param_names();
  nlohmann::json th = nlohmann::json::object();
  for (std::size_t i = 0; i < names.size(); ++i) th[names[i]] = theta[i];
  side["theta"] = std::move(th);
  const char* tnames[] = {"sir", "msir", "gaussian", "boundary", "bimodal"};
  side["target"] = tnames[static_cast<int>(cfg.target)];
  std::ofstream out(out_csv + ".json");
  if (!out) throw std::runtime_error("cannot write sidecar for " + out_csv);
  out << side.dump(1) << "\n";
}

std::vector<std::vector<double>> read_samples_csv(const std::string& path, int expect_dim) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read samples: " + path);
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty samples file: " + path);
  std::vector<std::vector<double>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (static_cast<int>(row.size()) != expect_dim)
      throw std::runtime_error("samples row has the wrong dimension in " + path);
    out.push_back(std::move(row));
  }
  return out;
}

void run_diagnose(const config::RunConfig& cfg, const std::string& samples_csv,
                  const std::string& heldout_csv, const std::string& out_json, bool sum_channels) {
  TargetBundle bundle = build_target(cfg, /*require_data=*/false);
  const auto samples = read_samples_csv(samples_csv, bundle.target->dim());
  const auto held_out = TimeSeriesData::read_csv(heldout_csv);
  Rng rng = Rng::sub(cfg.seed, "diagnose");
  const auto metrics = post::predictive_metrics(samples, *bundle.target, held_out, 500, rng, sum_channels);
  nlohmann::json j;
  j["coverage"] = metrics.coverage;
  j["ail"] = metrics.ail;
  j["mspe"] = metrics.mspe;
  j["failures"] = metrics.failures;
  std::ofstream out(out_json);
  if (!out) throw std::runtime_error("cannot write metrics: " + out_json);
  out << j.dump(1) << "\n";
}

}  // namespace atvi::runner
