#pragma once

// Forward and adjoint time integration of cascade systems.
//
// Hyperbolic family: y'' + M y = g, integrated with Stormer-Verlet (the
// velocity form of leapfrog). The pair (forward with M, adjoint with M^T)
// preserves the bilinear form <y', phi> - <y, phi'> exactly, and each forced
// half-kick adds dt/2 <g, phi>, so
//     <y'(T), phi(T)> - <y(T), phi'(T)> = sum_m w_m <g^m, phi^m>
// holds to round-off with trapezoidal weights w_m.
//
// Dissipative family: e^{i theta} y' + M y = g, integrated with Crank-Nicolson.
// The adjoint runs CN backward with M^T and the conjugate step; the forcing
// sample g^m pairs with e^{i theta} times a three-point average of the
// adjoint trajectory, again exactly.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <numbers>
#include <ostream>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include "cascade_lab/error.hpp"
#include "cascade_lab/geometry.hpp"
#include "cascade_lab/operators.hpp"

namespace cascade_lab {

enum class Family { Hyperbolic, Dissipative };

inline const char* to_string(Family f) { return f == Family::Hyperbolic ? "hyperbolic" : "dissipative"; }

/// Discretized N-component cascade system. Immutable once built.
struct CascadeSystem {
  Family family = Family::Hyperbolic;
  double theta = 0.0;
  EllipticOperator op;
  std::shared_ptr<const SpectralBasis> basis;
  int N = 1;
  int p = 0;
  CouplingSpec coupling;
  ControlSpec control;
  bool transposed = false;

  std::vector<RealField> coupling_fields;  // c 1_O at the nodes, parallel to coupling.entries
  std::vector<RealField> control_fields;   // b 1_omega for distributed components, else empty

  const Grid& grid() const { return op.grid(); }
  std::size_t nodes() const { return op.size(); }

  /// |theta| = pi/2 is implemented but sits on the closed end of the admissible range.
  bool theta_at_endpoint() const {
    return family == Family::Dissipative && std::abs(std::abs(theta) - std::numbers::pi / 2) < 1e-14;
  }
};

inline CascadeSystem make_system(Family family, double theta, const EllipticOperator& op,
                                 std::shared_ptr<const SpectralBasis> basis, int N, int p, CouplingSpec coupling,
                                 ControlSpec control, bool transposed = false) {
  if (N < 1) throw InvalidArgument("make_system: N must be positive");
  if (p < 0 || p > N - 1) throw InvalidArgument("make_system: p must lie in 0..N-1");
  if (family == Family::Dissipative && !(std::abs(theta) <= std::numbers::pi / 2 + 1e-15))
    throw InvalidArgument("make_system: theta must lie in [-pi/2, pi/2]");
  if (!basis) throw InvalidArgument("make_system: spectral basis required");
  if (!(basis->grid() == op.grid())) throw InvalidArgument("make_system: basis built on a different grid");
  coupling.N = N;
  coupling.validate(transposed);
  control.validate(N, p, op.grid().dim);

  CascadeSystem s;
  s.family = family;
  s.theta = family == Family::Dissipative ? theta : 0.0;
  s.op = op;
  s.basis = std::move(basis);
  s.N = N;
  s.p = p;
  s.coupling = std::move(coupling);
  s.control = std::move(control);
  s.transposed = transposed;
  for (const auto& e : s.coupling.entries) {
    if (e.region.dim() != s.grid().dim) throw InvalidArgument("make_system: coupling region dimension mismatch");
    s.coupling_fields.push_back(indicator_vector(e.region, s.grid()).values);
  }
  s.control_fields.resize(static_cast<std::size_t>(N));
  for (int k = 1; k <= N; ++k)
    if (const auto* d = std::get_if<Distributed>(&s.control.at(k)))
      s.control_fields[static_cast<std::size_t>(k - 1)] = indicator_vector(d->region, s.grid()).values;
  return s;
}

// ---------------------------------------------------------------------------

template <typename Scalar>
struct SystemState {
  std::vector<Field<Scalar>> w;        // positions (hyperbolic) or states (dissipative)
  std::vector<Field<Scalar>> w_prime;  // velocities; empty for the dissipative family
  double t = 0.0;

  static SystemState zero(const CascadeSystem& sys) {
    SystemState s;
    const auto n = static_cast<Eigen::Index>(sys.nodes());
    s.w.assign(static_cast<std::size_t>(sys.N), Field<Scalar>::Zero(n));
    if (sys.family == Family::Hyperbolic) s.w_prime.assign(static_cast<std::size_t>(sys.N), Field<Scalar>::Zero(n));
    return s;
  }
};

template <typename Scalar>
void check_state(const CascadeSystem& sys, const SystemState<Scalar>& s, const char* who) {
  const auto n = static_cast<Eigen::Index>(sys.nodes());
  const bool hyper = sys.family == Family::Hyperbolic;
  bool ok = s.w.size() == static_cast<std::size_t>(sys.N) &&
            s.w_prime.size() == (hyper ? static_cast<std::size_t>(sys.N) : 0u);
  for (const auto& f : s.w) ok = ok && f.size() == n;
  for (const auto& f : s.w_prime) ok = ok && f.size() == n;
  if (!ok) throw InvalidArgument(std::string(who) + ": state does not match the system");
}

/// Time-sampled controls on the uniform grid t_m = m dt, m = 0..K, with trapezoidal weights.
template <typename Scalar>
struct ControlSignal {
  double T = 0.0;
  double dt = 0.0;
  std::vector<int> components;  // controlled components (1-based), ascending
  // Per controlled component: rows = field length (distributed) or 1 (boundary), cols = samples.
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> values;

  std::size_t samples() const { return values.empty() ? 0 : static_cast<std::size_t>(values.front().cols()); }

  Eigen::VectorXd weights() const {
    const auto n = static_cast<Eigen::Index>(samples());
    Eigen::VectorXd w = Eigen::VectorXd::Constant(n, dt);
    if (n > 0) {
      w[0] *= 0.5;
      w[n - 1] *= 0.5;
    }
    return w;
  }

  std::size_t slot(int component) const {
    for (std::size_t i = 0; i < components.size(); ++i)
      if (components[i] == component) return i;
    throw InvalidArgument("ControlSignal: component " + std::to_string(component) + " not present");
  }

  static ControlSignal zero(const CascadeSystem& sys, double T, double dt, std::size_t samples) {
    ControlSignal c;
    c.T = T;
    c.dt = dt;
    for (int k : sys.control.controlled_components()) {
      c.components.push_back(k);
      const bool bd = std::holds_alternative<BoundaryEnd>(sys.control.at(k));
      const auto rows = bd ? Eigen::Index{1} : static_cast<Eigen::Index>(sys.nodes());
      c.values.push_back(Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, static_cast<Eigen::Index>(samples)));
    }
    return c;
  }

  /// sum_m w_m <v^m, u^m> with h^d spatial weights for distributed components.
  Scalar inner(const ControlSignal& other, const Grid& grid) const {
    const Eigen::VectorXd w = weights();
    Scalar s{0};
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double space = values[i].rows() == 1 && other.values[i].rows() == 1 ? 1.0 : grid.cell_volume();
      for (Eigen::Index m = 0; m < values[i].cols(); ++m)
        s += w[m] * space * other.values[i].col(m).dot(values[i].col(m));
    }
    return s;
  }

  double l2_norm_squared(const Grid& grid) const { return std::real(inner(*this, grid)); }
};

/// K = T / dt, insisting the time grid closes on T.
inline std::size_t step_count(double T, double dt) {
  if (!(T > 0.0) || !(dt > 0.0)) throw InvalidArgument("time grid: T and dt must be positive");
  const double k = T / dt;
  const auto K = static_cast<std::size_t>(std::llround(k));
  if (K == 0 || std::abs(static_cast<double>(K) * dt - T) > 1e-9 * std::max(1.0, T))
    throw InvalidArgument("time grid: T is not an integer multiple of dt");
  return K;
}

inline double cfl_limit(const CascadeSystem& sys) { return 0.9 * 2.0 / std::sqrt(sys.op.lambda_max()); }

// ---------------------------------------------------------------------------

struct EnergyReport {
  std::vector<double> per_component;
  double total = 0.0;
};

/// Hyperbolic: e_1 = (|A^{1/2} w|^2 + |w'|^2) / 2 per component. Dissipative: |w|^2 / 2.
template <typename Scalar>
EnergyReport energy(const CascadeSystem& sys, const SystemState<Scalar>& s) {
  check_state(sys, s, "energy");
  EnergyReport r;
  for (int i = 0; i < sys.N; ++i) {
    const auto& w = s.w[static_cast<std::size_t>(i)];
    double e;
    if (sys.family == Family::Hyperbolic) {
      const double pos = fractional_norm(*sys.basis, w, 1).value;
      const double vel = l2_norm(sys.grid(), s.w_prime[static_cast<std::size_t>(i)]);
      e = 0.5 * (pos * pos + vel * vel);
    } else {
      const double nrm = l2_norm(sys.grid(), w);
      e = 0.5 * nrm * nrm;
    }
    r.per_component.push_back(e);
    r.total += e;
  }
  return r;
}

/// Quadratic invariant of Stormer-Verlet for an uncoupled component:
/// (|v|^2 + <A y, y> - dt^2/4 |A y|^2) / 2.
inline double verlet_energy(const EllipticOperator& op, const RealField& y, const RealField& v, double dt) {
  const Grid& g = op.grid();
  const RealField Ay = op.apply(y);
  return 0.5 * g.cell_volume() * (v.squaredNorm() + Ay.dot(y) - 0.25 * dt * dt * Ay.squaredNorm());
}

namespace detail {

/// out_i = A y_i + sum over entries with row i of c_e y_col.
template <typename Scalar>
void apply_M(const CascadeSystem& sys, const std::vector<Field<Scalar>>& y, std::vector<Field<Scalar>>& out) {
  for (int i = 0; i < sys.N; ++i) sys.op.apply_into(y[static_cast<std::size_t>(i)], out[static_cast<std::size_t>(i)]);
  for (std::size_t e = 0; e < sys.coupling.entries.size(); ++e) {
    const auto& ent = sys.coupling.entries[e];
    out[static_cast<std::size_t>(ent.row - 1)] +=
        sys.coupling_fields[e].cast<Scalar>().cwiseProduct(y[static_cast<std::size_t>(ent.col - 1)]);
  }
}

template <typename Scalar>
using Source = std::function<void(std::size_t, std::vector<Field<Scalar>>&)>;

/// Adds the forcing produced by a control signal at sample m.
template <typename Scalar>
Source<Scalar> control_source(const CascadeSystem& sys, const ControlSignal<Scalar>& c) {
  return [&sys, &c](std::size_t m, std::vector<Field<Scalar>>& g) {
    const auto mi = static_cast<Eigen::Index>(m);
    for (std::size_t slot = 0; slot < c.components.size(); ++slot) {
      const int k = c.components[slot];
      auto& gk = g[static_cast<std::size_t>(k - 1)];
      const auto& ctl = sys.control.at(k);
      if (std::holds_alternative<Distributed>(ctl)) {
        gk += sys.control_fields[static_cast<std::size_t>(k - 1)].cast<Scalar>().cwiseProduct(c.values[slot].col(mi));
      } else {
        // Dirichlet value gain*v at the end, lifted into the adjacent interior row.
        const auto& be = std::get<BoundaryEnd>(ctl);
        const double h = sys.grid().h[0];
        const Eigen::Index node = be.end == End::Left ? 0 : gk.size() - 1;
        gk[node] += be.gain * c.values[slot](0, mi) / (h * h);
      }
    }
  };
}

template <typename Scalar>
void check_control(const CascadeSystem& sys, const ControlSignal<Scalar>& c, double dt, std::size_t K) {
  if (c.values.empty()) return;
  if (c.samples() != K + 1) throw InvalidArgument("control signal: sample count does not match T/dt + 1");
  if (std::abs(c.dt - dt) > 1e-12 * dt) throw InvalidArgument("control signal: time step differs from the solver step");
  for (std::size_t s = 0; s < c.components.size(); ++s) {
    if (!sys.control.controlled(c.components[s])) throw InvalidArgument("control signal: component carries no control");
    if (!c.values[s].allFinite()) throw InvalidArgument("control signal: non-finite values");
  }
}

/// Stormer-Verlet with signed step `dt` (negative runs backward). The observer
/// sees (step index s, y, v) for s = 0..K; the source is queried with s too.
template <typename Observer>
void verlet(const CascadeSystem& sys, std::vector<RealField>& y, std::vector<RealField>& v, std::size_t K, double dt,
            const Source<double>* source, Observer&& observer) {
  const auto n = static_cast<Eigen::Index>(sys.nodes());
  const auto N = static_cast<std::size_t>(sys.N);
  std::vector<RealField> a(N, RealField(n)), g(N, RealField::Zero(n));
  auto accel = [&](std::size_t s) {
    apply_M(sys, y, a);
    for (std::size_t i = 0; i < N; ++i) a[i] = -a[i];
    if (source) {
      for (auto& gi : g) gi.setZero();
      (*source)(s, g);
      for (std::size_t i = 0; i < N; ++i) a[i] += g[i];
    }
  };
  accel(0);
  observer(std::size_t{0}, y, v);
  const double half = 0.5 * dt;
  for (std::size_t s = 0; s < K; ++s) {
    for (std::size_t i = 0; i < N; ++i) {
      v[i] += half * a[i];
      y[i] += dt * v[i];
    }
    accel(s + 1);
    for (std::size_t i = 0; i < N; ++i) v[i] += half * a[i];
    observer(s + 1, y, v);
  }
}

/// Solver for (I + z A) x = rhs. Tridiagonal elimination in 1D, sparse LU in 2D.
template <typename Scalar>
class ShiftedSolver {
 public:
  ShiftedSolver(const EllipticOperator& op, Scalar z) : grid_(op.grid()) {
    if (grid_.dim == 1) {
      const double ih2 = 1.0 / (grid_.h[0] * grid_.h[0]);
      const Scalar diag = Scalar(1.0) + 2.0 * z * ih2;
      off_ = -z * ih2;
      const int n = grid_.n[0];
      cprime_.resize(n);
      denom_.resize(n);
      Scalar prev_c{0};
      for (int i = 0; i < n; ++i) {
        const Scalar d = diag - (i > 0 ? off_ * prev_c : Scalar(0));
        if (std::abs(d) < 1e-300) throw SolverError("Crank-Nicolson: singular tridiagonal pivot");
        denom_[i] = d;
        prev_c = cprime_[i] = off_ / d;
      }
    } else {
      Eigen::SparseMatrix<Scalar> m = (z * op.sparse().template cast<Scalar>());
      Eigen::SparseMatrix<Scalar> id(m.rows(), m.cols());
      id.setIdentity();
      m += id;
      m.makeCompressed();
      lu_.compute(m);
      if (lu_.info() != Eigen::Success) throw SolverError("Crank-Nicolson: sparse LU factorization failed");
    }
  }

  void solve(const Field<Scalar>& rhs, Field<Scalar>& x) {
    if (grid_.dim == 1) {
      const auto n = rhs.size();
      x.resize(n);
      Scalar prev{0};
      for (Eigen::Index i = 0; i < n; ++i) prev = x[i] = (rhs[i] - (i > 0 ? off_ * prev : Scalar(0))) / denom_[i];
      for (Eigen::Index i = n - 2; i >= 0; --i) x[i] -= cprime_[i] * x[i + 1];
      return;
    }
    x = lu_.solve(rhs);
    if (lu_.info() != Eigen::Success) throw SolverError("Crank-Nicolson: sparse solve failed");
  }

 private:
  Grid grid_;
  Scalar off_{0};
  Field<Scalar> cprime_, denom_;
  Eigen::SparseLU<Eigen::SparseMatrix<Scalar>> lu_;
};

/// Crank-Nicolson for y' = -(1/(dt/2)) z (M y - g) written as
/// (I + z M) y^{m+1} = (I - z M) y^m + z (g^m + g^{m+1}), z = dt/2 e^{-i theta}
/// (or its conjugate for the adjoint). Components are solved in dependency order.
template <typename Scalar, typename Observer>
void crank_nicolson(const CascadeSystem& sys, std::vector<Field<Scalar>>& y, std::size_t K, Scalar z,
                    const Source<Scalar>* source, Observer&& observer) {
  const auto n = static_cast<Eigen::Index>(sys.nodes());
  const auto N = static_cast<std::size_t>(sys.N);
  ShiftedSolver<Scalar> solver(sys.op, z);
  std::vector<Field<Scalar>> My(N, Field<Scalar>(n)), g_prev(N, Field<Scalar>::Zero(n)),
      g_next(N, Field<Scalar>::Zero(n)), y_new = y;
  Field<Scalar> rhs(n);
  if (source) (*source)(0, g_prev);
  observer(std::size_t{0}, y);

  // Dependency order: forward cascades feed row < col, so solve high to low.
  std::vector<int> order(N);
  for (std::size_t i = 0; i < N; ++i) order[i] = sys.transposed ? static_cast<int>(i) : static_cast<int>(N - 1 - i);

  for (std::size_t s = 0; s < K; ++s) {
    if (source) {
      for (auto& gi : g_next) gi.setZero();
      (*source)(s + 1, g_next);
    }
    apply_M(sys, y, My);
    for (int i : order) {
      const auto ui = static_cast<std::size_t>(i);
      rhs = y[ui] - z * My[ui];
      if (source) rhs += z * (g_prev[ui] + g_next[ui]);
      for (std::size_t e = 0; e < sys.coupling.entries.size(); ++e) {
        const auto& ent = sys.coupling.entries[e];
        if (ent.row - 1 != i) continue;
        rhs -= z * sys.coupling_fields[e].cast<Scalar>().cwiseProduct(y_new[static_cast<std::size_t>(ent.col - 1)]);
      }
      solver.solve(rhs, y_new[ui]);
    }
    std::swap(y, y_new);
    if (source) std::swap(g_prev, g_next);
    observer(s + 1, y);
  }
}

template <typename Scalar>
Scalar cn_coefficient(const CascadeSystem& sys, double dt) {
  if constexpr (std::is_same_v<Scalar, double>) {
    if (sys.theta != 0.0) throw InvalidArgument("solve_dissipative: theta != 0 needs complex arithmetic");
    return 0.5 * dt;
  } else {
    return 0.5 * dt * std::polar(1.0, -sys.theta);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

template <typename Scalar>
struct Snapshot {
  double t = 0.0;
  std::vector<Field<Scalar>> w;
};

template <typename Scalar>
struct ForwardResult {
  SystemState<Scalar> terminal;
  std::vector<Snapshot<Scalar>> snapshots;  // only when a stride was requested
};

/// General forcing f (one nodal field per component and sample) as a source.
template <typename Scalar>
struct Forcing {
  // per component: nodes x samples; empty matrix = no forcing
  std::vector<Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>> fields;

  detail::Source<Scalar> source() const {
    return [this](std::size_t m, std::vector<Field<Scalar>>& g) {
      for (std::size_t i = 0; i < fields.size(); ++i)
        if (fields[i].size() > 0) g[i] += fields[i].col(static_cast<Eigen::Index>(m));
    };
  }
};

struct SolveOptions {
  std::size_t snapshot_stride = 0;  // 0 = no snapshots
};

/// Leapfrog (Stormer-Verlet) solve of y'' + M y = B v with the given initial state.
inline ForwardResult<double> solve_hyperbolic(const CascadeSystem& sys, const SystemState<double>& initial,
                                              const ControlSignal<double>* control, double T, double dt,
                                              const Forcing<double>* forcing = nullptr, const SolveOptions& opt = {}) {
  if (sys.family != Family::Hyperbolic) throw InvalidArgument("solve_hyperbolic: system is not hyperbolic");
  check_state(sys, initial, "solve_hyperbolic");
  const double limit = cfl_limit(sys);
  if (dt > limit)
    throw CflViolation("solve_hyperbolic: dt " + std::to_string(dt) + " exceeds the CFL limit " + std::to_string(limit),
                       limit);
  const std::size_t K = step_count(T, dt);
  if (control) detail::check_control(sys, *control, dt, K);
  if (forcing)
    for (const auto& f : forcing->fields)
      if (f.size() > 0 && static_cast<std::size_t>(f.cols()) != K + 1)
        throw InvalidArgument("solve_hyperbolic: forcing sample count mismatch");

  detail::Source<double> src;
  if (control && forcing) {
    auto a = detail::control_source(sys, *control);
    auto b = forcing->source();
    src = [a, b](std::size_t m, std::vector<RealField>& g) {
      a(m, g);
      b(m, g);
    };
  } else if (control) {
    src = detail::control_source(sys, *control);
  } else if (forcing) {
    src = forcing->source();
  }

  ForwardResult<double> out;
  auto y = initial.w;
  auto v = initial.w_prime;
  detail::verlet(sys, y, v, K, dt, src ? &src : nullptr,
                 [&](std::size_t s, const std::vector<RealField>& ys, const std::vector<RealField>&) {
                   if (opt.snapshot_stride && (s % opt.snapshot_stride == 0 || s == K))
                     out.snapshots.push_back({static_cast<double>(s) * dt, ys});
                 });
  out.terminal.w = std::move(y);
  out.terminal.w_prime = std::move(v);
  out.terminal.t = T;
  return out;
}

/// Crank-Nicolson solve of e^{i theta} y' + M y = B v.
template <typename Scalar>
ForwardResult<Scalar> solve_dissipative(const CascadeSystem& sys, const SystemState<Scalar>& initial,
                                        const ControlSignal<Scalar>* control, double T, double dt,
                                        const Forcing<Scalar>* forcing = nullptr, const SolveOptions& opt = {}) {
  if (sys.family != Family::Dissipative) throw InvalidArgument("solve_dissipative: system is not dissipative");
  if (!(std::abs(sys.theta) <= std::numbers::pi / 2 + 1e-15)) throw InvalidArgument("solve_dissipative: theta out of range");
  check_state(sys, initial, "solve_dissipative");
  const std::size_t K = step_count(T, dt);
  if (control) detail::check_control(sys, *control, dt, K);
  const Scalar z = detail::cn_coefficient<Scalar>(sys, dt);

  detail::Source<Scalar> src;
  if (control && forcing) {
    auto a = detail::control_source(sys, *control);
    auto b = forcing->source();
    src = [a, b](std::size_t m, std::vector<Field<Scalar>>& g) {
      a(m, g);
      b(m, g);
    };
  } else if (control) {
    src = detail::control_source(sys, *control);
  } else if (forcing) {
    src = forcing->source();
  }

  ForwardResult<Scalar> out;
  auto y = initial.w;
  detail::crank_nicolson<Scalar>(sys, y, K, z, src ? &src : nullptr,
                                 [&](std::size_t s, const std::vector<Field<Scalar>>& ys) {
                                   if (opt.snapshot_stride && (s % opt.snapshot_stride == 0 || s == K))
                                     out.snapshots.push_back({static_cast<double>(s) * dt, ys});
                                 });
  out.terminal.w = std::move(y);
  out.terminal.t = T;
  return out;
}

// ---------------------------------------------------------------------------
// Adjoint

/// Which adjoint field the observation reads. In the bounded setting the
/// integrated field plays the role of the velocity of the seed trajectory; in
/// the unbounded (boundary) setting it is the seed trajectory itself.
enum class ObservationSetting { Bounded, Unbounded };

inline ObservationSetting observation_setting(const CascadeSystem& sys) {
  return sys.control.any_boundary() ? ObservationSetting::Unbounded : ObservationSetting::Bounded;
}

/// Sign s with <g, kernel> = s <v, observation>: +1 distributed, -1 boundary.
inline double duality_sign(const ControlSpec& spec, int k) {
  return std::holds_alternative<BoundaryEnd>(spec.at(k)) ? -1.0 : 1.0;
}

/// Streams the adjoint kernel kappa^m (m = K down to 0): the field each forcing
/// sample g^m pairs with. Hyperbolic: kappa^m = phi^m, seed = (phi(T), phi'(T)).
/// Dissipative: kappa^m = e^{i theta} x three-point average of phi, seed = phi(T).
/// Returns the adjoint state at t = 0.
template <typename Scalar, typename Sink>
SystemState<Scalar> adjoint_kernel(const CascadeSystem& sys_t, const SystemState<Scalar>& seed, double T, double dt,
                                   Sink&& sink) {
  if (!sys_t.transposed) throw InvalidArgument("solve_adjoint: system must be the transposed (adjoint) system");
  check_state(sys_t, seed, "solve_adjoint");
  const std::size_t K = step_count(T, dt);
  SystemState<Scalar> at_zero;
  at_zero.t = 0.0;

  if (sys_t.family == Family::Hyperbolic) {
    if constexpr (std::is_same_v<Scalar, double>) {
      const double limit = cfl_limit(sys_t);
      if (dt > limit) throw CflViolation("solve_adjoint: dt exceeds the CFL limit", limit);
      auto y = seed.w;
      auto v = seed.w_prime;
      detail::verlet(sys_t, y, v, K, -dt, nullptr,
                     [&](std::size_t s, const std::vector<RealField>& ys, const std::vector<RealField>&) {
                       sink(K - s, ys);
                     });
      at_zero.w = std::move(y);
      at_zero.w_prime = std::move(v);
    } else {
      throw InvalidArgument("solve_adjoint: hyperbolic systems are real");
    }
    return at_zero;
  }

  const Scalar z = detail::cn_coefficient<Scalar>(sys_t, dt);
  const Scalar zc = [&] {
    if constexpr (std::is_same_v<Scalar, double>) return z;
    else return std::conj(z);
  }();
  const Scalar rot = [&] {
    if constexpr (std::is_same_v<Scalar, double>) return 1.0;
    else return std::polar(1.0, sys_t.theta);
  }();
  const auto N = static_cast<std::size_t>(sys_t.N);
  std::vector<Field<Scalar>> prev, prev2, kappa(N);  // phi^{m+1}, phi^{m+2}
  auto y = seed.w;
  detail::crank_nicolson<Scalar>(sys_t, y, K, zc, nullptr, [&](std::size_t s, const std::vector<Field<Scalar>>& ys) {
    const std::size_t m = K - s;  // ys = phi^m
    if (s == 1) {
      for (std::size_t i = 0; i < N; ++i) kappa[i] = rot * 0.5 * (prev[i] + ys[i]);
      sink(K, kappa);
    } else if (s >= 2) {
      for (std::size_t i = 0; i < N; ++i) kappa[i] = rot * 0.25 * (prev2[i] + 2.0 * prev[i] + ys[i]);
      sink(m + 1, kappa);
    }
    if (s == K) {
      for (std::size_t i = 0; i < N; ++i) kappa[i] = rot * 0.5 * (prev.empty() ? ys[i] : (prev[i] + ys[i]).eval());
      sink(std::size_t{0}, kappa);
    }
    prev2 = std::move(prev);
    prev = ys;
  });
  at_zero.w = std::move(y);
  return at_zero;
}

template <typename Scalar>
struct AdjointResult {
  ControlSignal<Scalar> observations;  // B* of the adjoint kernel at every sample
  SystemState<Scalar> initial;         // adjoint state at t = 0
};

/// Integrates the transposed cascade backward from the seed and records the
/// observation of every controlled component at every time sample.
template <typename Scalar>
AdjointResult<Scalar> solve_adjoint(const CascadeSystem& sys_t, const SystemState<Scalar>& seed, double T, double dt) {
  const std::size_t K = step_count(T, dt);
  AdjointResult<Scalar> out;
  out.observations = ControlSignal<Scalar>::zero(sys_t, T, dt, K + 1);
  const Grid& grid = sys_t.grid();
  out.initial = adjoint_kernel<Scalar>(sys_t, seed, T, dt, [&](std::size_t m, const std::vector<Field<Scalar>>& kappa) {
    const auto mi = static_cast<Eigen::Index>(m);
    for (std::size_t slot = 0; slot < out.observations.components.size(); ++slot) {
      const int k = out.observations.components[slot];
      const auto& f = kappa[static_cast<std::size_t>(k - 1)];
      const bool dist = std::holds_alternative<Distributed>(sys_t.control.at(k));
      // Distributed observation reads the velocity slot, boundary the position slot.
      if (dist) {
        out.observations.values[slot].col(mi) =
            sys_t.control_fields[static_cast<std::size_t>(k - 1)].cast<Scalar>().cwiseProduct(f);
      } else {
        out.observations.values[slot].col(mi) = observe<Scalar>(sys_t.control, k, f, f, grid);
      }
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// CSV export

namespace detail {
inline void write_number(std::ostream& os, double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  os << buf;
}
template <typename Scalar>
void write_value(std::ostream& os, const Scalar& v) {
  write_number(os, std::real(v));
  os << ',';
  write_number(os, std::imag(std::complex<double>(v)));
}
}  // namespace detail

/// Columns: t, component, index, value_re, value_im. Distributed controls
/// list only the nodes of their support; boundary controls use index 0.
template <typename Scalar>
void write_control_csv(std::ostream& os, const CascadeSystem& sys, const ControlSignal<Scalar>& c) {
  os << "t,component,index,value_re,value_im\n";
  for (std::size_t slot = 0; slot < c.components.size(); ++slot) {
    const int k = c.components[slot];
    const auto& vals = c.values[slot];
    const bool dist = std::holds_alternative<Distributed>(sys.control.at(k));
    const RealField* b = dist ? &sys.control_fields[static_cast<std::size_t>(k - 1)] : nullptr;
    for (Eigen::Index m = 0; m < vals.cols(); ++m) {
      for (Eigen::Index r = 0; r < vals.rows(); ++r) {
        if (b && (*b)[r] == 0.0) continue;
        detail::write_number(os, static_cast<double>(m) * c.dt);
        os << ',' << k << ',' << r << ',';
        detail::write_value(os, vals(r, m));
        os << '\n';
      }
    }
  }
}

template <typename Scalar>
ControlSignal<Scalar> read_control_csv(std::istream& is, const CascadeSystem& sys, double T, double dt) {
  const std::size_t K = step_count(T, dt);
  auto c = ControlSignal<Scalar>::zero(sys, T, dt, K + 1);
  std::string line;
  if (!std::getline(is, line) || line.rfind("t,component,index", 0) != 0)
    throw InvalidArgument("control csv: missing header");
  std::size_t rows = 0;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string tok[5];
    for (auto& t : tok)
      if (!std::getline(ls, t, ',')) throw InvalidArgument("control csv: malformed row: " + line);
    try {
      const double t = std::stod(tok[0]);
      const int k = std::stoi(tok[1]);
      const long r = std::stol(tok[2]);
      const double re = std::stod(tok[3]);
      const double im = std::stod(tok[4]);
      const auto m = static_cast<Eigen::Index>(std::llround(t / dt));
      const std::size_t slot = c.slot(k);
      if (r < 0 || r >= c.values[slot].rows() || m < 0 || m >= c.values[slot].cols())
        throw InvalidArgument("control csv: index out of range: " + line);
      if constexpr (std::is_same_v<Scalar, double>) {
        c.values[slot](r, m) = re;
        (void)im;
      } else {
        c.values[slot](r, m) = Scalar(re, im);
      }
    } catch (const std::logic_error& e) {
      throw InvalidArgument(std::string("control csv: ") + e.what());
    }
    ++rows;
  }
  if (rows == 0) throw InvalidArgument("control csv: no data rows");
  return c;
}

template <typename Scalar>
void write_trajectory_csv(std::ostream& os, const std::vector<Snapshot<Scalar>>& snaps) {
  os << "t,component,index,value_re,value_im\n";
  for (const auto& s : snaps)
    for (std::size_t i = 0; i < s.w.size(); ++i)
      for (Eigen::Index r = 0; r < s.w[i].size(); ++r) {
        detail::write_number(os, s.t);
        os << ',' << (i + 1) << ',' << r << ',';
        detail::write_value(os, s.w[i][r]);
        os << '\n';
      }
}

}  // namespace cascade_lab
