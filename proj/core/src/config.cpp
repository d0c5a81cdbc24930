#include "atvi/config.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace atvi::config {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

Toml::Value parse_scalar(const std::string& tok, int lineno) {
  if (tok.size() >= 2 && tok.front() == '"' && tok.back() == '"') return tok.substr(1, tok.size() - 2);
  if (tok == "true") return true;
  if (tok == "false") return false;
  try {
    std::size_t used = 0;
    const double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config line " + std::to_string(lineno) + ": cannot parse value '" + tok + "'");
  }
}

std::vector<std::string> split_array(const std::string& body, int lineno) {
  std::vector<std::string> out;
  std::string cur;
  bool in_string = false;
  for (const char c : body) {
    if (c == '"') in_string = !in_string;
    if (c == ',' && !in_string) {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  const std::string last = trim(cur);
  if (!last.empty()) out.push_back(last);
  for (const auto& t : out)
    if (t.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty array element");
  return out;
}

}  // namespace

Toml Toml::parse(const std::string& text) {
  Toml t;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int lineno = 0;
  while (std::getline(in, raw)) {
    ++lineno;
    const std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty section name");
      t.sections_[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key.empty() || val.empty())
      throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": key outside any section");
    if (val.front() == '[') {
      if (val.back() != ']') throw ConfigError("config line " + std::to_string(lineno) + ": malformed array");
      const auto toks = split_array(val.substr(1, val.size() - 2), lineno);
      bool strings = !toks.empty() && toks.front().front() == '"';
      if (strings) {
        std::vector<std::string> arr;
        for (const auto& tok : toks) arr.push_back(std::get<std::string>(parse_scalar(tok, lineno)));
        t.sections_[section][key] = std::move(arr);
      } else {
        std::vector<double> arr;
        for (const auto& tok : toks) arr.push_back(std::get<double>(parse_scalar(tok, lineno)));
        t.sections_[section][key] = std::move(arr);
      }
      continue;
    }
    t.sections_[section][key] = parse_scalar(val, lineno);
  }
  return t;
}

Toml Toml::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

bool Toml::has_section(const std::string& section) const { return sections_.count(section) > 0; }

bool Toml::has(const std::string& section, const std::string& key) const {
  const auto it = sections_.find(section);
  return it != sections_.end() && it->second.count(key) > 0;
}

namespace {

const Toml::Value& fetch(const std::map<std::string, std::map<std::string, Toml::Value>>& sections,
                         const std::string& section, const std::string& key) {
  const auto sit = sections.find(section);
  if (sit == sections.end()) throw ConfigError("missing config section [" + section + "]");
  const auto kit = sit->second.find(key);
  if (kit == sit->second.end()) throw ConfigError("missing config key " + section + "." + key);
  return kit->second;
}

template <class T>
T typed(const Toml::Value& v, const std::string& where) {
  if (const T* p = std::get_if<T>(&v)) return *p;
  throw ConfigError("config key " + where + " has the wrong type");
}

}  // namespace

double Toml::number(const std::string& section, const std::string& key) const {
  return typed<double>(fetch(sections_, section, key), section + "." + key);
}
double Toml::number_or(const std::string& section, const std::string& key, double fallback) const {
  return has(section, key) ? number(section, key) : fallback;
}
bool Toml::boolean_or(const std::string& section, const std::string& key, bool fallback) const {
  if (!has(section, key)) return fallback;
  return typed<bool>(fetch(sections_, section, key), section + "." + key);
}
std::string Toml::text(const std::string& section, const std::string& key) const {
  return typed<std::string>(fetch(sections_, section, key), section + "." + key);
}
std::string Toml::text_or(const std::string& section, const std::string& key, std::string fallback) const {
  return has(section, key) ? text(section, key) : fallback;
}
std::vector<double> Toml::numbers(const std::string& section, const std::string& key) const {
  return typed<std::vector<double>>(fetch(sections_, section, key), section + "." + key);
}
std::vector<double> Toml::numbers_or(const std::string& section, const std::string& key,
                                     std::vector<double> fallback) const {
  return has(section, key) ? numbers(section, key) : fallback;
}

namespace {

int int_of(double v, const std::string& where) {
  if (v != std::floor(v)) throw ConfigError("config key " + where + " must be an integer");
  return static_cast<int>(v);
}

const std::map<std::string, std::vector<std::string>> kSchema = {
    {"target",
     {"name", "data", "box_lo", "box_hi", "c", "mean", "sd", "m1", "s1", "w1", "m2", "s2", "w2", "pop",
      "births", "days", "weeks"}},
    {"method", {"name"}},
    {"flow", {"knots", "layers_per_block", "hidden"}},
    {"surjection", {"r_frac", "r", "slope", "eps"}},
    {"ladder", {"temperatures"}},
    {"train",
     {"m", "lr", "max_iters", "window", "tol", "finetune_samples", "finetune_iters",
      "finetune_all_blocks"}},
    {"seed", {"value"}},
    {"mcmc", {"n_iter", "burn_in", "thin"}},
    {"output", {"samples"}},
};

void check_schema(const Toml& t) {
  for (const auto& [section, keys] : t.sections()) {
    const auto it = kSchema.find(section);
    if (it == kSchema.end()) throw ConfigError("unknown config section [" + section + "]");
    for (const auto& [key, value] : keys) {
      if (std::find(it->second.begin(), it->second.end(), key) == it->second.end())
        throw ConfigError("unknown config key " + section + "." + key);
    }
  }
}

}  // namespace

RunConfig RunConfig::from_toml(const Toml& t) {
  check_schema(t);
  RunConfig c;

  const std::string target = t.text_or("target", "name", "sir");
  if (target == "sir")
    c.target = TargetKind::sir;
  else if (target == "msir")
    c.target = TargetKind::msir;
  else if (target == "gaussian")
    c.target = TargetKind::gaussian;
  else if (target == "boundary")
    c.target = TargetKind::boundary;
  else if (target == "bimodal")
    c.target = TargetKind::bimodal;
  else
    throw ConfigError("unknown target.name '" + target + "'");
  c.data_path = t.text_or("target", "data", "");
  c.box_lo = t.numbers_or("target", "box_lo", {});
  c.box_hi = t.numbers_or("target", "box_hi", {});
  if (c.box_lo.size() != c.box_hi.size()) throw ConfigError("target.box_lo and target.box_hi sizes differ");
  c.boundary_c = t.number_or("target", "c", 5.0);
  c.gaussian_mean = t.numbers_or("target", "mean", {});
  c.gaussian_sd = t.numbers_or("target", "sd", {});
  c.bimodal_m1 = t.number_or("target", "m1", c.bimodal_m1);
  c.bimodal_s1 = t.number_or("target", "s1", c.bimodal_s1);
  c.bimodal_w1 = t.number_or("target", "w1", c.bimodal_w1);
  c.bimodal_m2 = t.number_or("target", "m2", c.bimodal_m2);
  c.bimodal_s2 = t.number_or("target", "s2", c.bimodal_s2);
  c.bimodal_w2 = t.number_or("target", "w2", c.bimodal_w2);
  c.msir_pop = t.numbers_or("target", "pop", {});
  c.msir_births = t.number_or("target", "births", 1000.0);

  const std::string method = t.text_or("method", "name", "atvi");
  if (method == "atvi")
    c.method = Method::atvi;
  else if (method == "tvi")
    c.method = Method::tvi;
  else if (method == "nf-vi")
    c.method = Method::nfvi;
  else
    throw ConfigError("unknown method.name '" + method + "'");

  c.flow_knots = int_of(t.number_or("flow", "knots", 8), "flow.knots");
  c.flow_layers_per_block = int_of(t.number_or("flow", "layers_per_block", 10), "flow.layers_per_block");
  c.flow_hidden = int_of(t.number_or("flow", "hidden", 32), "flow.hidden");
  if (c.flow_knots < 2 || c.flow_layers_per_block < 1 || c.flow_hidden < 1)
    throw ConfigError("invalid [flow] settings");

  c.surj_r_frac = t.number_or("surjection", "r_frac", 0.05);
  if (t.has("surjection", "r")) c.surj_r = t.number("surjection", "r");
  if (t.has("surjection", "slope")) c.surj_slope = t.number("surjection", "slope");
  c.surj_eps = t.number_or("surjection", "eps", 0.01);

  c.ladder = t.numbers_or("ladder", "temperatures", {3.0, 1.0});
  anneal::TemperatureLadder ladder{c.ladder};
  ladder.validate();

  c.train.batch = int_of(t.number_or("train", "m", 100), "train.m");
  c.train.lr = t.number_or("train", "lr", 3e-3);
  c.train.max_iters = int_of(t.number_or("train", "max_iters", 2000), "train.max_iters");
  c.train.window = int_of(t.number_or("train", "window", 50), "train.window");
  c.train.tol = t.number_or("train", "tol", 1e-3);
  c.train.finetune_samples = int_of(t.number_or("train", "finetune_samples", 2000), "train.finetune_samples");
  c.train.finetune_iters = int_of(t.number_or("train", "finetune_iters", 500), "train.finetune_iters");
  c.train.finetune_all_blocks = t.boolean_or("train", "finetune_all_blocks", false);
  c.train.validate();

  const double seed = t.number_or("seed", "value", 1.0);
  if (seed < 0 || seed != std::floor(seed)) throw ConfigError("seed.value must be a non-negative integer");
  c.seed = static_cast<std::uint64_t>(seed);
  c.train.seed = c.seed;

  c.mcmc_iters = int_of(t.number_or("mcmc", "n_iter", 50000), "mcmc.n_iter");
  c.mcmc_burn_in = int_of(t.number_or("mcmc", "burn_in", 10000), "mcmc.burn_in");
  c.mcmc_thin = int_of(t.number_or("mcmc", "thin", 10), "mcmc.thin");
  if (c.mcmc_iters <= c.mcmc_burn_in) throw ConfigError("mcmc.n_iter must exceed mcmc.burn_in");
  if (c.mcmc_thin < 1) throw ConfigError("mcmc.thin must be >= 1");

  c.output_samples = int_of(t.number_or("output", "samples", 4000), "output.samples");
  if (c.output_samples < 200) throw ConfigError("output.samples must be at least 200");
  return c;
}

RunConfig RunConfig::from_file(const std::string& path) { return from_toml(Toml::parse_file(path)); }

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt(const std::vector<double>& v) {
  std::string s = "[";
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + fmt(v[i]);
  return s + "]";
}

}  // namespace

std::string RunConfig::to_toml() const {
  std::ostringstream out;
  out << "[target]\n";
  const char* names[] = {"sir", "msir", "gaussian", "boundary", "bimodal"};
  out << "name = \"" << names[static_cast<int>(target)] << "\"\n";
  if (!data_path.empty()) out << "data = \"" << data_path << "\"\n";
  if (!box_lo.empty()) {
    out << "box_lo = " << fmt(box_lo) << "\n";
    out << "box_hi = " << fmt(box_hi) << "\n";
  }
  if (target == TargetKind::boundary) out << "c = " << fmt(boundary_c) << "\n";
  if (target == TargetKind::gaussian && !gaussian_mean.empty()) {
    out << "mean = " << fmt(gaussian_mean) << "\n";
    out << "sd = " << fmt(gaussian_sd) << "\n";
  }
  if (target == TargetKind::bimodal) {
    out << "m1 = " << fmt(bimodal_m1) << "\ns1 = " << fmt(bimodal_s1) << "\nw1 = " << fmt(bimodal_w1) << "\n";
    out << "m2 = " << fmt(bimodal_m2) << "\ns2 = " << fmt(bimodal_s2) << "\nw2 = " << fmt(bimodal_w2) << "\n";
  }
  if (target == TargetKind::msir) {
    if (!msir_pop.empty()) out << "pop = " << fmt(msir_pop) << "\n";
    out << "births = " << fmt(msir_births) << "\n";
  }
  const char* mnames[] = {"atvi", "tvi", "nf-vi"};
  out << "\n[method]\nname = \"" << mnames[static_cast<int>(method)] << "\"\n";
  out << "\n[flow]\nknots = " << flow_knots << "\nlayers_per_block = " << flow_layers_per_block
      << "\nhidden = " << flow_hidden << "\n";
  out << "\n[surjection]\nr_frac = " << fmt(surj_r_frac) << "\n";
  if (surj_r) out << "r = " << fmt(*surj_r) << "\n";
  if (surj_slope) out << "slope = " << fmt(*surj_slope) << "\n";
  out << "eps = " << fmt(surj_eps) << "\n";
  out << "\n[ladder]\ntemperatures = " << fmt(ladder) << "\n";
  out << "\n[train]\nm = " << train.batch << "\nlr = " << fmt(train.lr) << "\nmax_iters = " << train.max_iters
      << "\nwindow = " << train.window << "\ntol = " << fmt(train.tol)
      << "\nfinetune_samples = " << train.finetune_samples << "\nfinetune_iters = " << train.finetune_iters
      << "\nfinetune_all_blocks = " << (train.finetune_all_blocks ? "true" : "false") << "\n";
  out << "\n[seed]\nvalue = " << seed << "\n";
  out << "\n[mcmc]\nn_iter = " << mcmc_iters << "\nburn_in = " << mcmc_burn_in << "\nthin = " << mcmc_thin
      << "\n";
  out << "\n[output]\nsamples = " << output_samples << "\n";
  return out.str();
}

}  // namespace atvi::config
