#pragma once

// JSON experiment configuration: strict parsing, canonical hashing, and the
// translation into grids, regions, systems and initial data.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <memory>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "cascade_lab/dynamics.hpp"
#include "cascade_lab/error.hpp"
#include "cascade_lab/geometry.hpp"
#include "cascade_lab/operators.hpp"

namespace cascade_lab {

using json = nlohmann::json;

struct RegionConfig {
  std::vector<Box> parts;
};

struct CouplingConfig {
  int row = 1, col = 2;
  RegionConfig region;
};

struct ControlConfig {
  int component = 1;
  std::string kind;  // "distributed" | "boundary"
  RegionConfig region;
  End end = End::Right;
  double gain = 1.0;
};

struct InitialConfig {
  int component = 1;
  // hyperbolic: "position" or "velocity"; dissipative: "state"
  std::string field = "position";
  std::vector<std::pair<int, double>> modes;  // (1-based mode index, coefficient)
  std::optional<double> random_norm;
  std::uint64_t random_seed = 0;
};

struct GccConfig {
  std::optional<double> T;
  std::size_t n_rays = 4096;
  double dt_ray = 1e-3;
  std::size_t n_directions = 0;
};

struct CheckConfig {
  std::size_t n_samples = 100;
  std::size_t a2_samples = 8;
  std::vector<int> levels{50, 100, 200};
};

struct ObservabilityConfig {
  std::string which = "B*";
  std::vector<double> T_list;
  std::size_t max_seed_dimension = 400;
  std::optional<RegionConfig> pi_support;
};

struct ExperimentConfig {
  std::vector<double> extents;
  std::vector<int> n;
  Family family = Family::Hyperbolic;
  double theta = 0.0;
  int N = 1;
  int p = 0;
  std::vector<CouplingConfig> coupling;
  std::vector<ControlConfig> control;
  std::optional<double> T;
  std::optional<double> dt;
  std::size_t dissipative_steps = 1000;
  Eigen::Index k_filter = 10;
  std::optional<Eigen::Index> spectral_modes;  // defaults to all nodes
  std::size_t dense_limit = 2000;
  double epsilon = 0.0;
  std::vector<double> epsilons;
  double cg_tol = 1e-10;
  std::size_t max_iter = 500;
  std::string krylov = "conjugate_residual";
  std::vector<InitialConfig> initial;
  std::string output = "out";
  std::uint64_t seed = 1;
  int kalman_K = 10;
  GccConfig gcc;
  CheckConfig check;
  ObservabilityConfig observability;

  json raw;  // the parsed document, for echo and hashing
};

namespace detail {

inline void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw InvalidArgument("config: " + where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw InvalidArgument("config: unknown key '" + it.key() + "' in " + where);
}

template <typename T>
T get(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw InvalidArgument("config: missing '" + std::string(key) + "' in " + where);
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw InvalidArgument("config: bad value for '" + std::string(key) + "' in " + where + ": " + e.what());
  }
}

template <typename T>
void get_opt(const json& j, const char* key, T& out, const std::string& where) {
  if (j.contains(key)) out = get<T>(j, key, where);
}

inline double positive(double x, const char* what) {
  if (!(x > 0.0) || !std::isfinite(x)) throw InvalidArgument(std::string("config: ") + what + " must be positive");
  return x;
}

inline RegionConfig parse_region(const json& j, std::size_t dim, const std::string& where) {
  if (!j.is_array() || j.empty()) throw InvalidArgument("config: " + where + " needs a non-empty 'parts' array");
  RegionConfig r;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string w = where + ".parts[" + std::to_string(i) + "]";
    check_keys(j[i], {"lo", "hi", "amplitude"}, w);
    const auto lo = get<std::vector<double>>(j[i], "lo", w);
    const auto hi = get<std::vector<double>>(j[i], "hi", w);
    if (lo.size() != dim || hi.size() != dim) throw InvalidArgument("config: " + w + " bounds must have one entry per axis");
    Box b;
    for (std::size_t a = 0; a < dim; ++a) {
      b.lo[a] = lo[a];
      b.hi[a] = hi[a];
    }
    if (dim == 1) b.hi[1] = 1.0;
    b.amplitude = j[i].value("amplitude", 1.0);
    if (!(b.amplitude >= 0.0)) throw InvalidArgument("config: " + w + " amplitude must be nonnegative");
    r.parts.push_back(b);
  }
  return r;
}

}  // namespace detail

inline ExperimentConfig parse_config(const json& j) {
  using namespace detail;
  check_keys(j,
             {"domain", "family", "theta", "N", "p", "coupling", "control", "T", "dt", "dissipative_steps", "K_filter",
              "spectral_modes", "dense_limit", "epsilon", "epsilons", "cg_tol", "max_iter", "krylov", "initial",
              "output", "seed", "kalman_K", "gcc", "check", "observability", "$schema", "description"},
             "top level");
  ExperimentConfig c;
  c.raw = j;
  const json& dom = j.contains("domain") ? j["domain"] : throw InvalidArgument("config: missing 'domain'");
  check_keys(dom, {"extents", "n"}, "domain");
  c.extents = get<std::vector<double>>(dom, "extents", "domain");
  c.n = get<std::vector<int>>(dom, "n", "domain");
  build_grid(c.extents, c.n);  // validates
  const std::size_t dim = c.extents.size();

  const auto fam = get<std::string>(j, "family", "top level");
  if (fam == "hyperbolic") c.family = Family::Hyperbolic;
  else if (fam == "dissipative") c.family = Family::Dissipative;
  else throw InvalidArgument("config: family must be 'hyperbolic' or 'dissipative'");
  get_opt(j, "theta", c.theta, "top level");
  if (c.family == Family::Hyperbolic && c.theta != 0.0) throw InvalidArgument("config: theta applies to the dissipative family only");
  c.N = get<int>(j, "N", "top level");
  c.p = get<int>(j, "p", "top level");
  if (c.N < 1) throw InvalidArgument("config: N must be positive");

  if (j.contains("coupling")) {
    if (!j["coupling"].is_array()) throw InvalidArgument("config: 'coupling' must be an array");
    for (std::size_t i = 0; i < j["coupling"].size(); ++i) {
      const std::string w = "coupling[" + std::to_string(i) + "]";
      const json& e = j["coupling"][i];
      check_keys(e, {"row", "col", "parts"}, w);
      CouplingConfig cc;
      cc.row = get<int>(e, "row", w);
      cc.col = get<int>(e, "col", w);
      if (cc.row < 1 || cc.row > c.N || cc.col < 1 || cc.col > c.N) throw InvalidArgument("config: " + w + " component out of range");
      cc.region = parse_region(e.contains("parts") ? e["parts"] : json(), dim, w);
      c.coupling.push_back(cc);
    }
  }
  if (!j.contains("control") || !j["control"].is_array()) throw InvalidArgument("config: 'control' array required");
  for (std::size_t i = 0; i < j["control"].size(); ++i) {
    const std::string w = "control[" + std::to_string(i) + "]";
    const json& e = j["control"][i];
    ControlConfig cc;
    cc.kind = get<std::string>(e, "kind", w);
    if (cc.kind == "distributed") {
      check_keys(e, {"component", "kind", "parts"}, w);
      cc.region = parse_region(e.contains("parts") ? e["parts"] : json(), dim, w);
    } else if (cc.kind == "boundary") {
      check_keys(e, {"component", "kind", "end", "gain"}, w);
      const auto end = get<std::string>(e, "end", w);
      if (end == "left") cc.end = End::Left;
      else if (end == "right") cc.end = End::Right;
      else throw InvalidArgument("config: " + w + " end must be 'left' or 'right'");
      get_opt(e, "gain", cc.gain, w);
    } else {
      throw InvalidArgument("config: " + w + " kind must be 'distributed' or 'boundary'");
    }
    cc.component = get<int>(e, "component", w);
    if (cc.component < 1 || cc.component > c.N) throw InvalidArgument("config: " + w + " component out of range");
    for (const auto& prev : c.control)
      if (prev.component == cc.component) throw InvalidArgument("config: component " + std::to_string(cc.component) + " has two controls");
    c.control.push_back(cc);
  }

  if (j.contains("T")) c.T = positive(get<double>(j, "T", "top level"), "T");
  if (j.contains("dt")) c.dt = positive(get<double>(j, "dt", "top level"), "dt");
  get_opt(j, "dissipative_steps", c.dissipative_steps, "top level");
  if (c.dissipative_steps < 1) throw InvalidArgument("config: dissipative_steps must be positive");
  get_opt(j, "K_filter", c.k_filter, "top level");
  if (c.k_filter < 1) throw InvalidArgument("config: K_filter must be positive");
  if (j.contains("spectral_modes")) c.spectral_modes = get<Eigen::Index>(j, "spectral_modes", "top level");
  get_opt(j, "dense_limit", c.dense_limit, "top level");
  get_opt(j, "epsilon", c.epsilon, "top level");
  if (!(c.epsilon >= 0.0)) throw InvalidArgument("config: epsilon must be nonnegative");
  get_opt(j, "epsilons", c.epsilons, "top level");
  if (j.contains("cg_tol")) c.cg_tol = positive(get<double>(j, "cg_tol", "top level"), "cg_tol");
  get_opt(j, "max_iter", c.max_iter, "top level");
  if (c.max_iter < 1) throw InvalidArgument("config: max_iter must be positive");
  get_opt(j, "krylov", c.krylov, "top level");
  if (c.krylov != "conjugate_residual" && c.krylov != "conjugate_gradient")
    throw InvalidArgument("config: krylov must be 'conjugate_residual' or 'conjugate_gradient'");
  get_opt(j, "output", c.output, "top level");
  get_opt(j, "seed", c.seed, "top level");
  get_opt(j, "kalman_K", c.kalman_K, "top level");

  if (j.contains("initial")) {
    if (!j["initial"].is_array()) throw InvalidArgument("config: 'initial' must be an array");
    for (std::size_t i = 0; i < j["initial"].size(); ++i) {
      const std::string w = "initial[" + std::to_string(i) + "]";
      const json& e = j["initial"][i];
      check_keys(e, {"component", "field", "modes", "random"}, w);
      InitialConfig ic;
      ic.component = get<int>(e, "component", w);
      if (ic.component < 1 || ic.component > c.N) throw InvalidArgument("config: " + w + " component out of range");
      ic.field = e.value("field", c.family == Family::Hyperbolic ? "position" : "state");
      const bool ok = c.family == Family::Hyperbolic ? (ic.field == "position" || ic.field == "velocity") : ic.field == "state";
      if (!ok) throw InvalidArgument("config: " + w + " field must be position/velocity (hyperbolic) or state (dissipative)");
      if (e.contains("modes") == e.contains("random")) throw InvalidArgument("config: " + w + " needs exactly one of 'modes' or 'random'");
      if (e.contains("modes")) {
        for (const auto& m : e["modes"]) {
          if (!m.is_array() || m.size() != 2) throw InvalidArgument("config: " + w + " modes are [index, coefficient] pairs");
          const int k = m[0].get<int>();
          if (k < 1) throw InvalidArgument("config: " + w + " mode indices start at 1");
          ic.modes.emplace_back(k, m[1].get<double>());
        }
      } else {
        const json& r = e["random"];
        check_keys(r, {"norm", "seed"}, w + ".random");
        ic.random_norm = get<double>(r, "norm", w + ".random");
        if (!(*ic.random_norm >= 0.0)) throw InvalidArgument("config: random norm must be nonnegative");
        ic.random_seed = get<std::uint64_t>(r, "seed", w + ".random");
      }
      c.initial.push_back(ic);
    }
  }

  if (j.contains("gcc")) {
    const json& g = j["gcc"];
    check_keys(g, {"T", "n_rays", "dt_ray", "n_directions"}, "gcc");
    if (g.contains("T")) c.gcc.T = positive(get<double>(g, "T", "gcc"), "gcc.T");
    get_opt(g, "n_rays", c.gcc.n_rays, "gcc");
    get_opt(g, "dt_ray", c.gcc.dt_ray, "gcc");
    get_opt(g, "n_directions", c.gcc.n_directions, "gcc");
  }
  if (j.contains("check")) {
    const json& g = j["check"];
    check_keys(g, {"n_samples", "a2_samples", "levels"}, "check");
    get_opt(g, "n_samples", c.check.n_samples, "check");
    get_opt(g, "a2_samples", c.check.a2_samples, "check");
    get_opt(g, "levels", c.check.levels, "check");
  }
  if (j.contains("observability")) {
    const json& g = j["observability"];
    check_keys(g, {"which", "T_list", "max_seed_dimension", "pi_support"}, "observability");
    get_opt(g, "which", c.observability.which, "observability");
    if (c.observability.which != "B*" && c.observability.which != "Pi_p")
      throw InvalidArgument("config: observability.which must be 'B*' or 'Pi_p'");
    get_opt(g, "T_list", c.observability.T_list, "observability");
    get_opt(g, "max_seed_dimension", c.observability.max_seed_dimension, "observability");
    if (g.contains("pi_support")) c.observability.pi_support = parse_region(g["pi_support"], dim, "observability.pi_support");
  }
  return c;
}

inline ExperimentConfig parse_config_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidArgument(std::string("config: JSON parse error: ") + e.what());
  }
  return parse_config(j);
}

/// Sorted-key compact dump; nlohmann objects are ordered maps, so key order in
/// the input file does not matter.
inline std::string canonical_dump(const json& j) { return j.dump(); }

inline std::string config_hash(const json& j) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : canonical_dump(j)) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

// ---------------------------------------------------------------------------

inline Grid config_grid(const ExperimentConfig& c) { return build_grid(c.extents, c.n); }

inline Region config_region(const RegionConfig& r, const Grid& g) { return Region(r.parts, g); }

inline std::vector<Region> coupling_regions(const ExperimentConfig& c, const Grid& g) {
  std::vector<Region> out;
  for (const auto& e : c.coupling) out.push_back(config_region(e.region, g));
  return out;
}

inline std::vector<Region> control_regions(const ExperimentConfig& c, const Grid& g) {
  std::vector<Region> out;
  for (const auto& e : c.control)
    if (e.kind == "distributed") out.push_back(config_region(e.region, g));
  return out;
}

/// Worst 1D hitting time of a union of intervals in [0, L]: the longest gap
/// a ray can cross, counting the reflection at the walls.
inline double region_gcc_time_1d(const Region& r) {
  const double L = r.extents()[0];
  std::vector<std::pair<double, double>> iv;
  for (const auto& b : r.parts()) iv.emplace_back(b.lo[0], b.hi[0]);
  std::sort(iv.begin(), iv.end());
  double worst = 2.0 * iv.front().first;
  double reach = iv.front().second;
  for (const auto& [a, b] : iv) {
    worst = std::max(worst, a - reach);
    reach = std::max(reach, b);
  }
  return std::max(worst, 2.0 * (L - reach));
}

/// Default horizon: 1.5 x the sum of per-region GCC times over the coupling
/// regions and the control sets (a boundary end in 1D counts 2L).
inline double default_horizon(const ExperimentConfig& c) {
  const Grid g = config_grid(c);
  double sum = 0.0;
  auto region_time = [&](const Region& r) {
    if (g.dim == 1) return region_gcc_time_1d(r);
    GccOptions opt;
    opt.n_rays = 1024;
    opt.dt_ray = std::min(1e-2, 0.5 * r.smallest_width());
    const double horizon = 20.0 * std::max(g.extents[0], g.extents[1]);
    const GccReport rep = gcc_check(r, horizon, opt);
    if (!rep.pass) throw InvalidArgument("config: T unset and a region fails GCC; set T explicitly");
    return rep.max_hit_time_among_hitters;
  };
  for (const auto& r : coupling_regions(c, g)) sum += region_time(r);
  for (const auto& e : c.control) {
    if (e.kind == "distributed") sum += region_time(config_region(e.region, g));
    else sum += 2.0 * g.extents[0];
  }
  if (!(sum > 0.0)) throw InvalidArgument("config: cannot derive a default T");
  return 1.5 * sum;
}

inline double horizon(const ExperimentConfig& c) { return c.T ? *c.T : default_horizon(c); }

/// Hyperbolic: largest step <= 0.5 x CFL that divides T. Dissipative: T / dissipative_steps.
inline double time_step(const ExperimentConfig& c, const EllipticOperator& op, double T) {
  if (c.dt) {
    step_count(T, *c.dt);
    return *c.dt;
  }
  if (c.family == Family::Dissipative) return T / static_cast<double>(c.dissipative_steps);
  const double limit = 0.9 * 2.0 / std::sqrt(op.lambda_max());
  const double K = std::ceil(T / (0.5 * limit));
  return T / K;
}

struct BuiltExperiment {
  Grid grid;
  EllipticOperator op;
  std::shared_ptr<const SpectralBasis> basis;
  CascadeSystem sys;
  double T = 0.0;
  double dt = 0.0;
};

inline CouplingSpec config_coupling(const ExperimentConfig& c, const Grid& g) {
  CouplingSpec cs;
  cs.N = c.N;
  for (const auto& e : c.coupling) cs.entries.push_back({e.row, e.col, config_region(e.region, g)});
  return cs;
}

inline ControlSpec config_control(const ExperimentConfig& c, const Grid& g) {
  ControlSpec cs;
  cs.components.assign(static_cast<std::size_t>(c.N), NoControl{});
  for (const auto& e : c.control) {
    auto& slot = cs.components[static_cast<std::size_t>(e.component - 1)];
    if (e.kind == "distributed") slot = Distributed{config_region(e.region, g)};
    else slot = BoundaryEnd{e.end, e.gain};
  }
  return cs;
}

inline BuiltExperiment build_experiment(const ExperimentConfig& c) {
  BuiltExperiment b;
  b.grid = config_grid(c);
  b.op = assemble_operator(b.grid);
  const auto nodes = static_cast<Eigen::Index>(b.grid.node_count());
  const Eigen::Index modes = c.spectral_modes ? *c.spectral_modes : nodes;
  if (modes < c.k_filter) throw InvalidArgument("config: spectral_modes must be at least K_filter");
  SpectralOptions so;
  so.dense_limit = c.dense_limit;
  b.basis = std::make_shared<const SpectralBasis>(spectral_basis(b.op, modes, so));
  b.sys = make_system(c.family, c.theta, b.op, b.basis, c.N, c.p, config_coupling(c, b.grid), config_control(c, b.grid));
  b.T = horizon(c);
  b.dt = time_step(c, b.op, b.T);
  return b;
}

/// Initial state from the mode lists / seeded random specs. Random data fills
/// the first K_filter modes with Gaussian coefficients scaled to the given L2 norm.
template <typename Scalar>
SystemState<Scalar> initial_state(const ExperimentConfig& c, const CascadeSystem& sys) {
  auto s = SystemState<Scalar>::zero(sys);
  const SpectralBasis& basis = *sys.basis;
  for (const auto& ic : c.initial) {
    const auto comp = static_cast<std::size_t>(ic.component - 1);
    auto& target = ic.field == "velocity" ? s.w_prime[comp] : s.w[comp];
    if (ic.random_norm) {
      std::mt19937_64 rng(ic.random_seed);
      std::normal_distribution<double> normal;
      const Eigen::Index K = std::min<Eigen::Index>(c.k_filter, basis.size());
      Field<Scalar> coeff(K);
      for (Eigen::Index j = 0; j < K; ++j) coeff[j] = Scalar(normal(rng));
      const double nrm = coeff.norm();
      if (nrm > 0.0) coeff *= Scalar(*ic.random_norm / nrm);
      target += basis.synthesize(coeff);
    } else {
      for (const auto& [k, v] : ic.modes) {
        if (k > basis.size()) throw InvalidArgument("config: initial mode index exceeds the spectral basis");
        target += (v * basis.mode(k - 1)).template cast<Scalar>();
      }
    }
  }
  return s;
}

}  // namespace cascade_lab
