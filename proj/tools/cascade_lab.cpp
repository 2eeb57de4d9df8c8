// Command-line front end: one experiment per invocation.
//
// Exit codes: 0 pass, 2 verdict fail, 1 usage or configuration error.

#include <complex>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "cascade_lab/cascade_lab.hpp"
#include "demo_config.hpp"

namespace fs = std::filesystem;
using namespace cascade_lab;

namespace {

constexpr int kPass = 0;
constexpr int kUsage = 1;
constexpr int kFail = 2;

struct Options {
  std::string config;
  std::string output;
  std::size_t snapshots = 0;
  std::string replay_dir;
};

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw InvalidArgument("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::ofstream open_out(const fs::path& p) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw InvalidArgument("cannot write " + p.string());
  return out;
}

json versions() {
  return {{"cascade_lab", "0.1.0"},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"compiler", __VERSION__}};
}

struct Run {
  ExperimentConfig cfg;
  fs::path dir;
  json report;
  std::vector<std::string> artifacts;

  Run(ExperimentConfig c, const std::string& override_dir) : cfg(std::move(c)) {
    dir = override_dir.empty() ? fs::path(cfg.output) : fs::path(override_dir);
    fs::create_directories(dir);
    report["config"] = cfg.raw;
    report["config_hash"] = config_hash(cfg.raw);
    report["versions"] = versions();
  }

  fs::path artifact(const std::string& name) {
    artifacts.push_back(name);
    return dir / name;
  }

  void finish(const std::string& command, bool pass) {
    report["command"] = command;
    report["verdict"] = pass ? "pass" : "fail";
    report["artifacts"] = artifacts;
    auto out = open_out(dir / "report.json");
    out << report.dump(2) << '\n';
  }
};

ExperimentConfig load(const std::string& path) { return parse_config_text(read_file(path)); }

HypothesisReport basic_hypotheses(const ExperimentConfig& c, const BuiltExperiment& b, std::size_t samples) {
  HypothesisReport h;
  h.omega_A1 = verify_A1(*b.basis);
  h.a1_pass = h.omega_A1 > 0.0;
  h.a4_pass = true;
  for (std::size_t i = 0; i < c.coupling.size(); ++i) {
    HypothesisReport::CouplingCheck cc;
    cc.row = c.coupling[i].row;
    cc.col = c.coupling[i].col;
    cc.a4 = verify_A4(b.sys.coupling.entries[i].region, b.grid, samples, c.seed + i);
    h.a4_pass = h.a4_pass && cc.a4.pass;
    h.couplings.push_back(cc);
  }
  h.a2_pass = true;
  return h;
}

void write_initial_csv(std::ostream& os, const SystemState<double>& s) {
  os << "component,part,index,value_re,value_im\n";
  auto dump = [&](const std::vector<RealField>& f, int part) {
    for (std::size_t i = 0; i < f.size(); ++i)
      for (Eigen::Index r = 0; r < f[i].size(); ++r) {
        os << (i + 1) << ',' << part << ',' << r << ',';
        detail::write_value(os, f[i][r]);
        os << '\n';
      }
  };
  dump(s.w, 0);
  dump(s.w_prime, 1);
}

template <typename Scalar>
void write_initial_csv(std::ostream& os, const SystemState<Scalar>& s) {
  os << "component,part,index,value_re,value_im\n";
  for (std::size_t i = 0; i < s.w.size(); ++i)
    for (Eigen::Index r = 0; r < s.w[i].size(); ++r) {
      os << (i + 1) << ",0," << r << ',';
      detail::write_value(os, s.w[i][r]);
      os << '\n';
    }
}

template <typename Scalar>
SystemState<Scalar> read_initial_csv(std::istream& is, const CascadeSystem& sys) {
  auto s = SystemState<Scalar>::zero(sys);
  std::string line;
  if (!std::getline(is, line) || line.rfind("component,part,index", 0) != 0)
    throw InvalidArgument("initial csv: missing header");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok[5];
    for (auto& t : tok)
      if (!std::getline(ls, t, ',')) throw InvalidArgument("initial csv: malformed row: " + line);
    try {
      const int comp = std::stoi(tok[0]);
      const int part = std::stoi(tok[1]);
      const long r = std::stol(tok[2]);
      const double re = std::stod(tok[3]), im = std::stod(tok[4]);
      auto& target = part == 0 ? s.w : s.w_prime;
      if (comp < 1 || comp > static_cast<int>(target.size()) || (part != 0 && part != 1) || r < 0 ||
          r >= target[static_cast<std::size_t>(comp - 1)].size())
        throw InvalidArgument("initial csv: index out of range: " + line);
      if constexpr (std::is_same_v<Scalar, double>) {
        target[static_cast<std::size_t>(comp - 1)][r] = re;
        (void)im;
      } else {
        target[static_cast<std::size_t>(comp - 1)][r] = Scalar(re, im);
      }
    } catch (const std::logic_error& e) {
      throw InvalidArgument(std::string("initial csv: ") + e.what());
    }
    ++rows;
  }
  if (rows == 0) throw InvalidArgument("initial csv: no data rows");
  return s;
}

HumOptions hum_options(const ExperimentConfig& c) {
  HumOptions o;
  o.cg_tol = c.cg_tol;
  o.max_iter = c.max_iter;
  o.method = c.krylov == "conjugate_gradient" ? KrylovMethod::ConjugateGradient : KrylovMethod::ConjugateResidual;
  return o;
}

/// Calls f.template operator()<Scalar>() with the arithmetic the family needs.
template <typename F>
int dispatch(const ExperimentConfig& c, F&& f) {
  if (c.family == Family::Dissipative && c.theta != 0.0) return f.template operator()<std::complex<double>>();
  return f.template operator()<double>();
}

// ---------------------------------------------------------------------------

int cmd_gcc(const Options& o) {
  Run run(load(o.config), o.output);
  const auto& c = run.cfg;
  const Grid g = config_grid(c);
  const double T = c.gcc.T ? *c.gcc.T : horizon(c);
  GccOptions opt;
  opt.n_rays = c.gcc.n_rays;
  opt.dt_ray = c.gcc.dt_ray;
  opt.n_directions = c.gcc.n_directions;

  json regions = json::array();
  bool pass = true;
  std::size_t failed = 0;
  auto check = [&](const Region& r, const std::string& role) {
    const GccReport rep = gcc_check(r, T, opt);
    json j = to_json(rep, r);
    j["role"] = role;
    if (g.dim == 1) j["exact_1d_time"] = region_gcc_time_1d(r);
    regions.push_back(j);
    pass = pass && rep.pass;
    failed += rep.pass ? 0 : 1;
  };
  const auto cr = coupling_regions(c, g);
  for (std::size_t i = 0; i < cr.size(); ++i)
    check(cr[i], "coupling(" + std::to_string(c.coupling[i].row) + "," + std::to_string(c.coupling[i].col) + ")");
  for (const auto& e : c.control)
    if (e.kind == "distributed") check(config_region(e.region, g), "control(" + std::to_string(e.component) + ")");
  if (regions.empty()) throw InvalidArgument("gcc: no regions to check");
  run.report["gcc"] = regions;
  run.report["note"] = "per-region verdicts; no joint control time is inferred";
  run.finish("gcc", pass);
  std::cout << "gcc: " << regions.size() << " region(s), " << failed << " failing at T = " << T << " -> "
            << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kPass : kFail;
}

int cmd_check(const Options& o) {
  Run run(load(o.config), o.output);
  const auto& c = run.cfg;
  const BuiltExperiment b = build_experiment(c);
  HypothesisReport h = basic_hypotheses(c, b, c.check.n_samples);
  json a2 = json::array();
  if (b.grid.dim == 1) {
    AdmissibilityOptions ao;
    ao.n_samples = c.check.a2_samples;
    ao.T = b.T;
    ao.seed = c.seed;
    for (int k : b.sys.control.controlled_components()) {
      const auto& kind = b.sys.control.at(k);
      const auto levels = admissibility_ratio(kind, b.grid.extents[0], c.check.levels, ao);
      double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
      json lj = json::array();
      for (const auto& l : levels) {
        h.a2_ratio_samples.insert(h.a2_ratio_samples.end(), l.ratios.begin(), l.ratios.end());
        lo = std::min(lo, l.max_ratio);
        hi = std::max(hi, l.max_ratio);
        lj.push_back(to_json(l));
      }
      bool ok;
      if (const auto* d = std::get_if<Distributed>(&kind)) {
        const double bound = d->region.max_amplitude() * d->region.max_amplitude();
        ok = hi <= bound * (1.0 + 1e-10);
      } else {
        ok = lo > 0.0 && hi / lo - 1.0 < 0.5;
      }
      h.a2_pass = h.a2_pass && ok;
      a2.push_back({{"component", k}, {"levels", lj}, {"pass", ok}});
    }
  }
  run.report["hypotheses"] = to_json(h);
  run.report["admissibility"] = a2;
  if (b.grid.dim == 2) run.report["admissibility_note"] = "A2 ratios are computed for 1D configurations only";
  const bool pass = h.a1_pass && h.a4_pass && h.a2_pass;
  run.finish("check", pass);
  std::cout << "check: omega_A1 = " << h.omega_A1 << ", A4 " << (h.a4_pass ? "ok" : "violated") << ", A2 "
            << (h.a2_pass ? "ok" : "violated") << " -> " << (pass ? "PASS" : "FAIL") << '\n';
  return pass ? kPass : kFail;
}

int cmd_control(const Options& o, ExperimentConfig cfg, const std::string& label = "control") {
  Run run(std::move(cfg), o.output);
  const auto& c = run.cfg;
  const BuiltExperiment b = build_experiment(c);
  run.report["hypotheses"] = to_json(basic_hypotheses(c, b, 16));
  {
    auto out = open_out(run.artifact("config.json"));
    out << c.raw.dump(2) << '\n';
  }
  return dispatch(c, [&]<typename Scalar>() {
    const auto Y0 = initial_state<Scalar>(c, b.sys);
    const auto r = synthesize_control<Scalar>(b.sys, Y0, b.T, b.dt, c.k_filter, c.epsilon, hum_options(c));
    run.report["control"] = to_json(r);
    {
      auto out = open_out(run.artifact("control.csv"));
      write_control_csv(out, b.sys, r.control);
    }
    {
      auto out = open_out(run.artifact("initial.csv"));
      write_initial_csv(out, Y0);
    }
    if (o.snapshots > 0) {
      SolveOptions so;
      so.snapshot_stride = o.snapshots;
      ForwardResult<Scalar> fr;
      if constexpr (std::is_same_v<Scalar, double>) {
        if (b.sys.family == Family::Hyperbolic) fr = solve_hyperbolic(b.sys, Y0, &r.control, b.T, b.dt, nullptr, so);
        else fr = solve_dissipative<Scalar>(b.sys, Y0, &r.control, b.T, b.dt, nullptr, so);
      } else {
        fr = solve_dissipative<Scalar>(b.sys, Y0, &r.control, b.T, b.dt, nullptr, so);
      }
      auto out = open_out(run.artifact("trajectory.csv"));
      write_trajectory_csv(out, fr.snapshots);
    }
    const bool pass = r.success();
    run.finish(label, pass);
    const double ratio = r.initial_energy_filtered > 0 ? r.terminal_energy_filtered / r.initial_energy_filtered : 0.0;
    std::cout << label << ": " << to_string(r.status) << " after " << r.cg_iterations
              << " iterations, filtered terminal/initial energy = " << ratio << " -> " << (pass ? "PASS" : "FAIL")
              << '\n';
    return pass ? kPass : kFail;
  });
}

int cmd_observability(const Options& o) {
  Run run(load(o.config), o.output);
  const auto& c = run.cfg;
  const BuiltExperiment b = build_experiment(c);
  std::vector<double> Ts = c.observability.T_list;
  if (Ts.empty()) Ts.push_back(b.T);
  ObservabilityOptions opt;
  opt.max_seed_dimension = static_cast<Eigen::Index>(c.observability.max_seed_dimension);
  if (c.observability.pi_support) opt.pi_support = config_region(*c.observability.pi_support, b.grid);
  const auto which = c.observability.which == "Pi_p" ? ObservationKind::CouplingVelocity : ObservationKind::ControlAdjoint;

  return dispatch(c, [&]<typename Scalar>() {
    json reps = json::array(), curve = json::array();
    bool pass = true;
    ObservabilityReport last;
    for (double T : Ts) {
      const double dt = time_step(c, b.op, T);
      last = observability_constants<Scalar>(b.sys, T, dt, c.k_filter, which, opt);
      reps.push_back(to_json(last));
      curve.push_back({{"T", T}, {"C_est", last.c_est}});
      pass = pass && last.c_est > 1e-10 * std::abs(last.eigenvalues.back());
    }
    {
      auto out = open_out(run.artifact("spectra.csv"));
      out << "index,eigenvalue\n";
      for (std::size_t i = 0; i < last.eigenvalues.size(); ++i) {
        out << i << ',';
        detail::write_number(out, last.eigenvalues[i]);
        out << '\n';
      }
    }
    run.report["observability"] = reps;
    run.report["C_est_vs_T"] = curve;
    run.finish("observability", pass);
    std::cout << "observability: " << to_string(which) << " C_est = " << last.c_est << " at T = " << last.T
              << " (K_filter " << c.k_filter << ") -> " << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? kPass : kFail;
  });
}

int cmd_kalman(const Options& o) {
  Run run(load(o.config), o.output);
  const auto& c = run.cfg;
  const Grid g = config_grid(c);
  const EllipticOperator op(g);
  const SpectralBasis basis = spectral_basis(op, c.kalman_K);
  const KalmanReport rep = kalman_mode_test(config_coupling(c, g), config_control(c, g), basis, c.kalman_K);
  run.report["kalman"] = to_json(rep);
  run.finish("kalman", rep.pass);
  std::cout << "kalman: " << rep.modes.size() << " modes, "
            << (rep.pass ? "full rank everywhere" : "rank deficient at mode " + std::to_string(*rep.first_deficient_mode))
            << " -> " << (rep.pass ? "PASS" : "FAIL") << '\n';
  return rep.pass ? kPass : kFail;
}

int cmd_sweep(const Options& o) {
  Run run(load(o.config), o.output);
  const auto& c = run.cfg;
  if (c.family != Family::Dissipative) throw InvalidArgument("sweep-eps: needs a dissipative configuration");
  const BuiltExperiment b = build_experiment(c);
  const std::vector<double> eps = c.epsilons.empty() ? std::vector<double>{1e-2, 1e-3, 1e-4, 1e-5, 1e-6} : c.epsilons;
  return dispatch(c, [&]<typename Scalar>() {
    const auto Y0 = initial_state<Scalar>(c, b.sys);
    const auto s = epsilon_sweep<Scalar>(b.sys, Y0, b.T, b.dt, c.k_filter, eps, hum_options(c));
    run.report["sweep"] = to_json(s);
    const bool pass = !s.partial;
    run.finish("sweep-eps", pass);
    std::cout << "sweep-eps: slope " << s.slope << " over " << eps.size() << " values, |Y(T)| at smallest eps = "
              << s.terminal_norms.back() << (s.partial ? " (partial)" : "") << " -> " << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? kPass : kFail;
  });
}

bool close_rel(double a, double b, double tol) {
  if (a == b) return true;
  return std::abs(a - b) <= tol * std::max(std::abs(a), std::abs(b));
}

int cmd_replay(const Options& o) {
  const fs::path dir(o.replay_dir);
  for (const char* f : {"config.json", "initial.csv", "control.csv", "report.json"})
    if (!fs::exists(dir / f)) throw InvalidArgument(std::string("replay: missing ") + f + " in " + dir.string());
  ExperimentConfig c = parse_config_text(read_file(dir / "config.json"));
  json stored;
  try {
    stored = json::parse(read_file(dir / "report.json"));
  } catch (const json::exception& e) {
    throw InvalidArgument(std::string("replay: corrupt report.json: ") + e.what());
  }
  if (!stored.contains("control")) throw InvalidArgument("replay: report.json holds no control result");
  const BuiltExperiment b = build_experiment(c);
  return dispatch(c, [&]<typename Scalar>() {
    std::ifstream ini(dir / "initial.csv"), ctl(dir / "control.csv");
    const auto Y0 = read_initial_csv<Scalar>(ini, b.sys);
    const auto v = read_control_csv<Scalar>(ctl, b.sys, b.T, b.dt);
    SystemState<Scalar> Y;
    if constexpr (std::is_same_v<Scalar, double>) {
      if (b.sys.family == Family::Hyperbolic) Y = solve_hyperbolic(b.sys, Y0, &v, b.T, b.dt).terminal;
      else Y = solve_dissipative<Scalar>(b.sys, Y0, &v, b.T, b.dt).terminal;
    } else {
      Y = solve_dissipative<Scalar>(b.sys, Y0, &v, b.T, b.dt).terminal;
    }
    const SeedSpace<Scalar> S(b.sys, c.k_filter);
    const double ef = S.energy(Y), ea = S.energy(Y, b.basis->size());
    double sf, sa;
    try {
      sf = stored["control"].at("terminal_energy_filtered").get<double>();
      sa = stored["control"].at("terminal_energy_full").get<double>();
    } catch (const json::exception& e) {
      throw InvalidArgument(std::string("replay: report.json lacks terminal energies: ") + e.what());
    }
    const bool pass = close_rel(ef, sf, 1e-9) && close_rel(ea, sa, 1e-9);
    json out = {{"recomputed_terminal_energy_filtered", ef},
                {"recomputed_terminal_energy_full", ea},
                {"stored_terminal_energy_filtered", sf},
                {"stored_terminal_energy_full", sa},
                {"tolerance", 1e-9},
                {"verdict", pass ? "pass" : "fail"}};
    auto f = open_out(dir / "replay.json");
    f << out.dump(2) << '\n';
    std::cout << "replay: filtered " << ef << " vs stored " << sf << ", full " << ea << " vs stored " << sa << " -> "
              << (pass ? "PASS" : "FAIL (mismatch)") << '\n';
    return pass ? kPass : kFail;
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cascade_lab: null control of cascade-coupled PDE systems"};
  app.require_subcommand(1);
  Options o;

  auto with_config = [&](CLI::App* sub) {
    sub->add_option("-c,--config", o.config, "experiment JSON")->required()->check(CLI::ExistingFile);
    sub->add_option("-o,--output", o.output, "output directory (overrides the config)");
  };
  auto* gcc = app.add_subcommand("gcc", "Geometric Control Condition ray check per region");
  with_config(gcc);
  auto* check = app.add_subcommand("check", "certify A1, A4 and admissibility ratios");
  with_config(check);
  auto* control = app.add_subcommand("control", "synthesize a HUM control and re-simulate");
  with_config(control);
  control->add_option("--snapshots", o.snapshots, "write trajectory.csv every N steps");
  auto* obs = app.add_subcommand("observability", "filtered observability constants");
  with_config(obs);
  auto* kal = app.add_subcommand("kalman", "per-mode Kalman rank test (constant global couplings)");
  with_config(kal);
  auto* sweep = app.add_subcommand("sweep-eps", "penalized HUM over a decreasing epsilon list");
  with_config(sweep);
  auto* replay = app.add_subcommand("replay", "re-simulate a control run directory");
  replay->add_option("dir", o.replay_dir, "directory written by `control`")->required();
  auto* demo = app.add_subcommand("demo", "disjoint coupling/control regions wave cascade");
  demo->add_option("-o,--output", o.output, "output directory")->default_val("out/demo");
  demo->add_option("--snapshots", o.snapshots, "write trajectory.csv every N steps");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  try {
    if (*gcc) return cmd_gcc(o);
    if (*check) return cmd_check(o);
    if (*control) return cmd_control(o, load(o.config));
    if (*obs) return cmd_observability(o);
    if (*kal) return cmd_kalman(o);
    if (*sweep) return cmd_sweep(o);
    if (*replay) return cmd_replay(o);
    if (*demo) return cmd_control(o, parse_config_text(kDemoConfig), "demo");
  } catch (const NotApplicable& e) {
    std::cerr << "not applicable: " << e.what() << '\n';
    return kUsage;
  } catch (const InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsage;
  }
  return kUsage;
}
