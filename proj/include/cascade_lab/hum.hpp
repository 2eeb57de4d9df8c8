#pragma once

// Hilbert Uniqueness Method on a spectrally filtered seed space.
//
// Seeds are modal coordinates of the adjoint terminal data, K_filter modes per
// component. `lift` turns a seed into adjoint terminal data, `represent` maps a
// forward terminal state to seed coordinates, and the two are dual through the
// exact discrete pairing of the integrators:
//     <represent(Y), Psi>_S = pairing(Y, lift(Psi)).
// Hence G Phi = represent(forward(zero, v = L* Phi)) satisfies
// <G Phi, Psi>_S = int <obs(Phi), obs(Psi)> dt and is S-self-adjoint.

#include <atomic>
#include <chrono>
#include <cmath>
#include <complex>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_lab/cg.hpp"
#include "cascade_lab/dynamics.hpp"
#include "cascade_lab/error.hpp"
#include "cascade_lab/operators.hpp"

namespace cascade_lab {

/// Mirror of the cascade: entry (i, j) becomes (j, i); controls become observations.
inline CascadeSystem adjoint_system(const CascadeSystem& sys) {
  if (sys.transposed) throw InvalidArgument("adjoint_system: system is already transposed");
  CouplingSpec c;
  c.N = sys.N;
  for (const auto& e : sys.coupling.entries) c.entries.push_back({e.col, e.row, e.region});
  return make_system(sys.family, sys.theta, sys.op, sys.basis, sys.N, sys.p, std::move(c), sys.control, true);
}

enum class SeedWeighting { Bounded, Unbounded, L2 };

inline const char* to_string(SeedWeighting w) {
  switch (w) {
    case SeedWeighting::Bounded: return "bounded: seed (psi, psi') with e_1 weights, integrated field psi'";
    case SeedWeighting::Unbounded: return "unbounded: seed (phi, phi') with e_1 weights";
    case SeedWeighting::L2: return "L2";
  }
  return "unknown";
}

/// Filtered modal coordinates of adjoint terminal data.
template <typename Scalar>
class SeedSpace {
 public:
  using Vec = Field<Scalar>;

  SeedSpace(const CascadeSystem& sys, Eigen::Index k_filter) : basis_(sys.basis), N_(sys.N), K_(k_filter) {
    if (k_filter < 1 || k_filter > basis_->size())
      throw InvalidArgument("SeedSpace: K_filter must lie in 1..basis size (" + std::to_string(basis_->size()) + ")");
    if (sys.family == Family::Hyperbolic) {
      parts_ = 2;
      weighting_ = observation_setting(sys) == ObservationSetting::Bounded ? SeedWeighting::Bounded
                                                                            : SeedWeighting::Unbounded;
    } else {
      parts_ = 1;
      weighting_ = SeedWeighting::L2;
    }
    weights_.resize(dimension());
    for (int i = 0; i < N_; ++i)
      for (int part = 0; part < parts_; ++part)
        for (Eigen::Index j = 0; j < K_; ++j)
          weights_[index(i, part, j)] = (parts_ == 2 && part == 0) ? basis_->eigenvalue(j) : 1.0;
  }

  Eigen::Index dimension() const { return static_cast<Eigen::Index>(N_) * parts_ * K_; }
  Eigen::Index k_filter() const { return K_; }
  int components() const { return N_; }
  int parts() const { return parts_; }
  SeedWeighting weighting() const { return weighting_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  const SpectralBasis& basis() const { return *basis_; }

  Eigen::Index index(int component0, int part, Eigen::Index mode) const {
    return (static_cast<Eigen::Index>(component0) * parts_ + part) * K_ + mode;
  }

  /// <x, y>_S = sum S_i x_i conj(y_i).
  Scalar inner(const Vec& x, const Vec& y) const { return y.dot(weights_.cast<Scalar>().cwiseProduct(x)); }
  double norm(const Vec& x) const { return std::sqrt(std::real(inner(x, x))); }

  /// Adjoint terminal data for a seed.
  SystemState<Scalar> lift(const Vec& phi) const {
    check(phi);
    SystemState<Scalar> s;
    for (int i = 0; i < N_; ++i) {
      const Vec a = phi.segment(index(i, 0, 0), K_);
      if (parts_ == 1) {
        s.w.push_back(basis_->synthesize(a));
        continue;
      }
      const Vec b = phi.segment(index(i, 1, 0), K_);
      if (weighting_ == SeedWeighting::Bounded) {
        // phi(T) = psi'(T), phi'(T) = -A psi(T)
        s.w.push_back(basis_->synthesize(b));
        s.w_prime.push_back(basis_->synthesize(Vec(-(basis_->eigenvalues().head(K_).template cast<Scalar>().cwiseProduct(a)))));
      } else {
        s.w.push_back(basis_->synthesize(a));
        s.w_prime.push_back(basis_->synthesize(b));
      }
    }
    return s;
  }

  /// Seed-space representation of a forward state, using the first `modes` modes
  /// (defaults to the filter; pass the basis size for the unfiltered version).
  Vec represent(const SystemState<Scalar>& y, Eigen::Index modes = -1) const {
    if (modes < 0) modes = K_;
    Vec out(static_cast<Eigen::Index>(N_) * parts_ * modes);
    auto idx = [&](int i, int part, Eigen::Index j) { return (static_cast<Eigen::Index>(i) * parts_ + part) * modes + j; };
    for (int i = 0; i < N_; ++i) {
      const auto ui = static_cast<std::size_t>(i);
      const Vec yc = basis_->coefficients(y.w[ui], modes);
      if (parts_ == 1) {
        out.segment(idx(i, 0, 0), modes) = yc;
        continue;
      }
      const Vec vc = basis_->coefficients(y.w_prime[ui], modes);
      if (weighting_ == SeedWeighting::Bounded) {
        out.segment(idx(i, 0, 0), modes) = yc;
        out.segment(idx(i, 1, 0), modes) = vc;
      } else {
        out.segment(idx(i, 0, 0), modes) =
            vc.cwiseQuotient(basis_->eigenvalues().head(modes).template cast<Scalar>());
        out.segment(idx(i, 1, 0), modes) = -yc;
      }
    }
    return out;
  }

  /// Natural energy (|represent(y)|_S^2 / 2) per component over the first `modes` modes.
  std::vector<double> component_energies(const SystemState<Scalar>& y, Eigen::Index modes = -1) const {
    if (modes < 0) modes = K_;
    const Vec r = represent(y, modes);
    std::vector<double> e(static_cast<std::size_t>(N_), 0.0);
    for (int i = 0; i < N_; ++i)
      for (int part = 0; part < parts_; ++part)
        for (Eigen::Index j = 0; j < modes; ++j) {
          const double w = (parts_ == 2 && part == 0) ? basis_->eigenvalue(j) : 1.0;
          e[static_cast<std::size_t>(i)] += 0.5 * w * std::norm(r[(static_cast<Eigen::Index>(i) * parts_ + part) * modes + j]);
        }
    return e;
  }

  double energy(const SystemState<Scalar>& y, Eigen::Index modes = -1) const {
    const auto e = component_energies(y, modes);
    return std::accumulate(e.begin(), e.end(), 0.0);
  }

  Vec unit(Eigen::Index i) const {
    Vec e = Vec::Zero(dimension());
    e[i] = Scalar(1);
    return e;
  }

 private:
  void check(const Vec& phi) const {
    if (phi.size() != dimension()) throw InvalidArgument("SeedSpace: seed has the wrong dimension");
    if (!phi.allFinite()) throw InvalidArgument("SeedSpace: seed is not finite");
  }

  std::shared_ptr<const SpectralBasis> basis_;
  int N_;
  Eigen::Index K_;
  int parts_ = 2;
  SeedWeighting weighting_ = SeedWeighting::Bounded;
  Eigen::VectorXd weights_;
};

/// Matrix-free HUM Gramian on the filtered seed space.
template <typename Scalar>
class GramianOperator {
 public:
  using Vec = Field<Scalar>;

  GramianOperator(const CascadeSystem& sys, double T, double dt, Eigen::Index k_filter, double eps = 0.0)
      : sys_(sys), sys_t_(adjoint_system(sys)), seeds_(sys, k_filter), T_(T), dt_(dt), eps_(eps) {
    step_count(T, dt);
    if (!(eps >= 0.0)) throw InvalidArgument("GramianOperator: epsilon must be nonnegative");
    if (sys.family == Family::Hyperbolic && !std::is_same_v<Scalar, double>)
      throw InvalidArgument("GramianOperator: hyperbolic systems use real seeds");
    if (sys.control.any_boundary() && sys.control.any_distributed())
      throw InvalidArgument("GramianOperator: mixed boundary and distributed controls are not supported by HUM");
  }

  const CascadeSystem& system() const { return sys_; }
  const CascadeSystem& adjoint() const { return sys_t_; }
  const SeedSpace<Scalar>& seeds() const { return seeds_; }
  double T() const { return T_; }
  double dt() const { return dt_; }
  double epsilon() const { return eps_; }
  std::size_t apply_count() const { return applies_.load(); }

  /// Observations of the adjoint trajectory started from the seed.
  ControlSignal<Scalar> observe(const Vec& phi) const {
    return solve_adjoint<Scalar>(sys_t_, seeds_.lift(phi), T_, dt_).observations;
  }

  /// v = L* phi: the observation with the duality sign of each control kind.
  ControlSignal<Scalar> control_from(const Vec& phi) const {
    ControlSignal<Scalar> v = observe(phi);
    for (std::size_t s = 0; s < v.components.size(); ++s)
      v.values[s] *= Scalar(duality_sign(sys_.control, v.components[s]));
    return v;
  }

  ForwardResult<Scalar> forward(const SystemState<Scalar>& initial, const ControlSignal<Scalar>* v) const {
    if constexpr (std::is_same_v<Scalar, double>) {
      if (sys_.family == Family::Hyperbolic) return solve_hyperbolic(sys_, initial, v, T_, dt_);
    }
    return solve_dissipative<Scalar>(sys_, initial, v, T_, dt_);
  }

  /// G phi (+ eps phi).
  Vec apply(const Vec& phi) const {
    ++applies_;
    if (phi.isZero(0.0)) return Vec::Zero(phi.size());
    const ControlSignal<Scalar> v = control_from(phi);
    Vec out = seeds_.represent(forward(SystemState<Scalar>::zero(sys_), &v).terminal);
    if (eps_ > 0.0) out += eps_ * phi;
    return out;
  }

  /// Dense matrix of G (without eps) in seed coordinates, one column per probe.
  Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> assemble() const {
    const Eigen::Index D = seeds_.dimension();
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> G(D, D);
    const GramianOperator plain(sys_, T_, dt_, seeds_.k_filter(), 0.0);
    parallel_for(static_cast<std::size_t>(D), [&](std::size_t j) {
      G.col(static_cast<Eigen::Index>(j)) = plain.apply(seeds_.unit(static_cast<Eigen::Index>(j)));
    });
    applies_ += static_cast<std::size_t>(D);
    return G;
  }

 private:
  CascadeSystem sys_;
  CascadeSystem sys_t_;
  SeedSpace<Scalar> seeds_;
  double T_, dt_, eps_;
  mutable std::atomic<std::size_t> applies_{0};
};

enum class KrylovMethod { ConjugateResidual, ConjugateGradient };

inline const char* to_string(KrylovMethod m) {
  return m == KrylovMethod::ConjugateResidual ? "conjugate_residual" : "conjugate_gradient";
}

template <typename Scalar>
struct HumResult {
  ControlSignal<Scalar> control;
  CgStatus status = CgStatus::MaxIterations;
  std::size_t cg_iterations = 0;
  std::vector<double> residual_history;
  std::size_t gramian_applies = 0;

  double initial_energy = 0.0;           // natural energy of Y0, all basis modes
  double initial_energy_filtered = 0.0;  // ... first K_filter modes
  double projection_residual = 0.0;      // sqrt(1 - filtered / full) of Y0
  double free_energy_filtered = 0.0;     // uncontrolled evolution at T
  double free_energy_full = 0.0;
  double terminal_energy_filtered = 0.0;
  double terminal_energy_full = 0.0;
  std::vector<double> terminal_component_filtered;
  std::vector<double> free_component_filtered;
  double terminal_l2_norm = 0.0;  // |Y(T)| in the discrete L2 norm (positions for hyperbolic)
  double free_l2_norm = 0.0;

  double control_norm_squared = 0.0;  // int |v|^2
  double gram_energy = 0.0;           // <G X, X>_S
  double epsilon = 0.0;
  double T = 0.0, dt = 0.0;
  Eigen::Index k_filter = 0;
  SeedWeighting weighting = SeedWeighting::Bounded;
  double wall_seconds = 0.0;
  KrylovMethod method = KrylovMethod::ConjugateResidual;
  bool theta_endpoint = false;

  Field<Scalar> seed;  // CG solution X
  SystemState<Scalar> terminal;

  bool converged() const { return status == CgStatus::Converged || status == CgStatus::ZeroRhs; }
  bool success() const { return converged() && terminal_energy_filtered <= initial_energy_filtered; }
};

struct HumOptions {
  KrylovMethod method = KrylovMethod::ConjugateResidual;
  double cg_tol = 1e-10;
  std::size_t max_iter = 500;
  std::size_t stagnation_window = 20;
  double plateau_factor = 0.999;
};

namespace detail {
template <typename Scalar>
double state_l2(const CascadeSystem& sys, const SystemState<Scalar>& y) {
  double s = 0.0;
  for (const auto& w : y.w) s += std::pow(l2_norm(sys.grid(), w), 2);
  return std::sqrt(s);
}
}  // namespace detail

/// Minimal-norm control driving the filtered part of Y(T) to zero (eps = 0),
/// or penalized HUM (eps > 0), followed by an independent re-simulation.
template <typename Scalar>
HumResult<Scalar> synthesize_control(const CascadeSystem& sys, const SystemState<Scalar>& Y0, double T, double dt,
                                     Eigen::Index k_filter, double eps, const HumOptions& opt = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  if (sys.family == Family::Dissipative && !(eps > 0.0))
    throw InvalidArgument("synthesize_control: the dissipative family requires eps > 0 (penalized HUM)");
  if (!(opt.cg_tol > 0.0)) throw InvalidArgument("synthesize_control: cg_tol must be positive");
  check_state(sys, Y0, "synthesize_control");

  const GramianOperator<Scalar> G(sys, T, dt, k_filter, eps);
  const auto& S = G.seeds();
  const Eigen::Index all = sys.basis->size();

  HumResult<Scalar> r;
  r.epsilon = eps;
  r.T = T;
  r.dt = dt;
  r.k_filter = k_filter;
  r.weighting = S.weighting();
  r.method = opt.method;
  r.theta_endpoint = sys.theta_at_endpoint();
  r.initial_energy = S.energy(Y0, all);
  r.initial_energy_filtered = S.energy(Y0);
  r.projection_residual =
      r.initial_energy > 0.0 ? std::sqrt(std::max(0.0, 1.0 - r.initial_energy_filtered / r.initial_energy)) : 0.0;

  const auto free = G.forward(Y0, nullptr).terminal;
  r.free_energy_filtered = S.energy(free);
  r.free_energy_full = S.energy(free, all);
  r.free_component_filtered = S.component_energies(free);
  r.free_l2_norm = detail::state_l2(sys, free);
  const Field<Scalar> b = -S.represent(free);

  CgOptions cg;
  cg.tolerance = opt.cg_tol;
  cg.max_iterations = opt.max_iter;
  cg.window = opt.stagnation_window;
  cg.plateau_factor = opt.plateau_factor;
  auto apply = [&](const Field<Scalar>& x) { return G.apply(x); };
  auto product = [&](const Field<Scalar>& x, const Field<Scalar>& y) { return S.inner(x, y); };
  auto solved = opt.method == KrylovMethod::ConjugateResidual ? conjugate_residual(apply, b, product, cg)
                                                             : conjugate_gradient(apply, b, product, cg);
  r.status = solved.status;
  r.cg_iterations = solved.iterations;
  r.residual_history = std::move(solved.residual_history);
  r.seed = std::move(solved.x);

  r.control = r.status == CgStatus::ZeroRhs ? ControlSignal<Scalar>::zero(sys, T, dt, step_count(T, dt) + 1)
                                            : G.control_from(r.seed);
  r.control_norm_squared = r.control.l2_norm_squared(sys.grid());
  const GramianOperator<Scalar> plain(sys, T, dt, k_filter, 0.0);
  r.gram_energy = r.seed.isZero(0.0) ? 0.0 : std::real(S.inner(plain.apply(r.seed), r.seed));

  r.terminal = G.forward(Y0, &r.control).terminal;
  r.terminal_energy_filtered = S.energy(r.terminal);
  r.terminal_energy_full = S.energy(r.terminal, all);
  r.terminal_component_filtered = S.component_energies(r.terminal);
  r.terminal_l2_norm = detail::state_l2(sys, r.terminal);
  r.gramian_applies = G.apply_count() + plain.apply_count();
  r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

template <typename Scalar>
struct SweepResult {
  std::vector<double> epsilons;
  std::vector<HumResult<Scalar>> runs;
  std::vector<double> terminal_norms;  // |Y(T)| per eps
  double slope = 0.0;                  // least-squares slope of log |Y(T)| vs log eps
  double intercept = 0.0;
  bool partial = false;
};

/// Least-squares line through (x_i, y_i).
inline std::pair<double, double> fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const auto n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  const double slope = sxy / sxx;
  return {slope, my - slope * mx};
}

template <typename Scalar>
SweepResult<Scalar> epsilon_sweep(const CascadeSystem& sys, const SystemState<Scalar>& Y0, double T, double dt,
                                  Eigen::Index k_filter, const std::vector<double>& epsilons,
                                  const HumOptions& opt = {}) {
  if (sys.family != Family::Dissipative) throw InvalidArgument("epsilon_sweep: needs a dissipative system");
  if (epsilons.size() < 3) throw InvalidArgument("epsilon_sweep: need at least three epsilon values");
  for (std::size_t i = 0; i < epsilons.size(); ++i) {
    if (!(epsilons[i] > 0.0)) throw InvalidArgument("epsilon_sweep: epsilon values must be positive");
    if (i > 0 && !(epsilons[i] < epsilons[i - 1])) throw InvalidArgument("epsilon_sweep: list must be strictly decreasing");
  }
  SweepResult<Scalar> out;
  out.epsilons = epsilons;
  std::vector<double> lx, ly;
  for (double eps : epsilons) {
    auto run = synthesize_control<Scalar>(sys, Y0, T, dt, k_filter, eps, opt);
    if (!run.converged()) out.partial = true;
    out.terminal_norms.push_back(run.terminal_l2_norm);
    lx.push_back(std::log(eps));
    ly.push_back(std::log(run.terminal_l2_norm));
    out.runs.push_back(std::move(run));
  }
  std::tie(out.slope, out.intercept) = fit_line(lx, ly);
  return out;
}

}  // namespace cascade_lab
