#pragma once

// Observability constants on filtered subspaces, modal Kalman rank tests and
// admissibility ratios.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_lab/dynamics.hpp"
#include "cascade_lab/error.hpp"
#include "cascade_lab/hum.hpp"
#include "cascade_lab/operators.hpp"

namespace cascade_lab {

enum class ObservationKind { ControlAdjoint, CouplingVelocity };  // B* or Pi_p w'

inline const char* to_string(ObservationKind k) { return k == ObservationKind::ControlAdjoint ? "B*" : "Pi_p"; }

struct ObservabilityReport {
  double T = 0.0;
  double dt = 0.0;
  Eigen::Index k_filter = 0;
  ObservationKind kind = ObservationKind::ControlAdjoint;
  std::string assembly = "dense column probes";
  SeedWeighting weighting = SeedWeighting::Bounded;
  Eigen::Index seed_dimension = 0;
  double c_est = 0.0;                // smallest eigenvalue of the filtered Gramian
  std::vector<double> eigenvalues;   // ascending
  double asymmetry = 0.0;            // |S G - (S G)^H| / |S G| before symmetrization
};

struct ObservabilityOptions {
  Eigen::Index max_seed_dimension = 400;
  std::optional<Region> pi_support;  // Pi_p = 1_O; defaults to the first coupling region
};

/// Symmetric spectrum of a Gramian assembled in S-weighted coordinates.
template <typename Scalar>
std::vector<double> weighted_spectrum(const Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>& G,
                                      const Eigen::VectorXd& weights, double* asymmetry = nullptr) {
  using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::VectorXd sq = weights.cwiseSqrt();
  // H = S^{1/2} G S^{-1/2} is Hermitian when G is S-self-adjoint.
  Mat H = sq.cast<Scalar>().asDiagonal() * G * sq.cwiseInverse().cast<Scalar>().asDiagonal();
  if (asymmetry) *asymmetry = (H - H.adjoint()).norm() / std::max(H.norm(), 1e-300);
  H = (0.5 * (H + H.adjoint())).eval();
  Eigen::SelfAdjointEigenSolver<Mat> es(H);
  if (es.info() != Eigen::Success) throw SolverError("weighted_spectrum: eigensolver failed");
  std::vector<double> ev(static_cast<std::size_t>(es.eigenvalues().size()));
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) ev[static_cast<std::size_t>(i)] = es.eigenvalues()[i];
  return ev;
}

/// Single free equation observed through Pi_p w' with Pi_p = 1_O.
inline CascadeSystem pi_observation_system(const CascadeSystem& sys, const Region& support) {
  std::vector<Box> parts = support.parts();
  for (auto& b : parts) b.amplitude = 1.0;
  ControlSpec ctl;
  ctl.components = {Distributed{Region(parts, support.dim(), support.extents())}};
  return make_system(sys.family, sys.theta, sys.op, sys.basis, 1, 0, {}, std::move(ctl));
}

template <typename Scalar = double>
ObservabilityReport observability_constants(const CascadeSystem& sys, double T, double dt, Eigen::Index k_filter,
                                            ObservationKind which, const ObservabilityOptions& opt = {}) {
  CascadeSystem target = sys;
  if (which == ObservationKind::CouplingVelocity) {
    std::optional<Region> support = opt.pi_support;
    if (!support) {
      if (sys.coupling.entries.empty())
        throw InvalidArgument("observability_constants: Pi_p needs a coupling region or an explicit support");
      support = sys.coupling.entries.front().region;
    }
    target = pi_observation_system(sys, *support);
  }
  const SeedSpace<Scalar> probe(target, k_filter);
  if (probe.dimension() > opt.max_seed_dimension)
    throw InvalidArgument("observability_constants: seed dimension " + std::to_string(probe.dimension()) +
                          " exceeds the dense limit " + std::to_string(opt.max_seed_dimension));
  const GramianOperator<Scalar> G(target, T, dt, k_filter, 0.0);
  ObservabilityReport rep;
  rep.T = T;
  rep.dt = dt;
  rep.k_filter = k_filter;
  rep.kind = which;
  rep.weighting = G.seeds().weighting();
  rep.seed_dimension = probe.dimension();
  rep.eigenvalues = weighted_spectrum<Scalar>(G.assemble(), G.seeds().weights(), &rep.asymmetry);
  rep.c_est = rep.eigenvalues.front();
  return rep;
}

// ---------------------------------------------------------------------------

struct KalmanMode {
  Eigen::Index mode = 0;
  double mu = 0.0;
  Eigen::MatrixXd mode_matrix;        // mu I + C
  Eigen::MatrixXd controllability;    // [B, A B, ..., A^{N-1} B]
  Eigen::Index rank = 0;
  bool full_rank = false;
};

struct KalmanReport {
  int N = 0;
  std::vector<KalmanMode> modes;
  bool pass = false;
  std::optional<Eigen::Index> first_deficient_mode;
};

/// Modal Kalman test, exact only when every coupling is a global constant.
inline KalmanReport kalman_mode_test(const CouplingSpec& coupling, const ControlSpec& control,
                                     const SpectralBasis& basis, Eigen::Index K) {
  const int N = coupling.N;
  if (K < 1 || K > basis.size()) throw InvalidArgument("kalman_mode_test: K must lie in 1..basis size");
  if (static_cast<int>(control.components.size()) != N) throw InvalidArgument("kalman_mode_test: control pattern size != N");
  for (const auto& e : coupling.entries)
    if (!e.region.is_full_domain_constant())
      throw NotApplicable("kalman_mode_test: coupling (" + std::to_string(e.row) + "," + std::to_string(e.col) +
                          ") is localized; the modal reduction does not decouple. Use the Gramian pathway.");

  const auto ctl = control.controlled_components();
  Eigen::MatrixXd C = Eigen::MatrixXd::Zero(N, N);
  for (const auto& e : coupling.entries) C(e.row - 1, e.col - 1) += e.region.parts().front().amplitude;
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N, static_cast<Eigen::Index>(ctl.size()));
  for (std::size_t c = 0; c < ctl.size(); ++c) B(ctl[c] - 1, static_cast<Eigen::Index>(c)) = 1.0;

  // span{B, (mu + C)B, ...} = span{B, CB, ...}: the rank does not depend on mu,
  // so decide it once on (C, B) with an orthonormalized Krylov basis.
  int krylov_rank = 0;
  {
    std::vector<Eigen::VectorXd> basis_q;
    std::vector<Eigen::VectorXd> level;
    for (Eigen::Index c = 0; c < B.cols(); ++c) level.push_back(B.col(c));
    while (!level.empty() && static_cast<int>(basis_q.size()) < N) {
      std::vector<Eigen::VectorXd> accepted;
      for (Eigen::VectorXd v : level) {
        const double before = v.norm();
        if (before == 0.0) continue;
        for (int pass = 0; pass < 2; ++pass)
          for (const auto& q : basis_q) v -= q.dot(v) * q;
        if (v.norm() > 1e-10 * before) {
          v.normalize();
          basis_q.push_back(v);
          accepted.push_back(v);
        }
      }
      level.clear();
      for (const auto& q : accepted) level.push_back(C * q);
    }
    krylov_rank = static_cast<int>(basis_q.size());
  }

  KalmanReport rep;
  rep.N = N;
  rep.pass = true;
  for (Eigen::Index k = 0; k < K; ++k) {
    KalmanMode m;
    m.mode = k + 1;
    m.mu = basis.eigenvalue(k);
    m.mode_matrix = m.mu * Eigen::MatrixXd::Identity(N, N) + C;
    m.controllability.resize(N, B.cols() * N);
    Eigen::MatrixXd block = B;
    for (int p = 0; p < N; ++p) {
      m.controllability.middleCols(p * B.cols(), B.cols()) = block;
      block = m.mode_matrix * block;
    }
    m.rank = krylov_rank;
    m.full_rank = m.rank == N;
    if (!m.full_rank && rep.pass) {
      rep.pass = false;
      rep.first_deficient_mode = m.mode;
    }
    rep.modes.push_back(std::move(m));
  }
  return rep;
}

// ---------------------------------------------------------------------------

/// LHS / RHS of the admissibility inequality for one forced single-equation
/// solution, or nullopt when both sides vanish.
inline std::optional<double> admissibility_sample(const CascadeSystem& sys, const SystemState<double>& init,
                                                  const Forcing<double>& f, double T, double dt) {
  if (sys.N != 1 || sys.family != Family::Hyperbolic) throw InvalidArgument("admissibility: single hyperbolic equation");
  const Grid& g = sys.grid();
  const std::size_t K = step_count(T, dt);
  Eigen::VectorXd wts = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(K + 1), dt);
  wts[0] *= 0.5;
  wts[static_cast<Eigen::Index>(K)] *= 0.5;

  double lhs = 0.0, int_e = 0.0, e0 = 0.0, eT = 0.0, int_f = 0.0;
  auto e1 = [&](const RealField& y, const RealField& v) {
    return 0.5 * g.cell_volume() * (sys.op.apply(y).dot(y) + v.squaredNorm());
  };
  const auto src = f.source();
  std::vector<RealField> y = init.w, v = init.w_prime;
  std::vector<RealField> gbuf(1, RealField::Zero(static_cast<Eigen::Index>(sys.nodes())));
  detail::verlet(sys, y, v, K, dt, &src, [&](std::size_t s, const std::vector<RealField>& ys, const std::vector<RealField>& vs) {
    const double w = wts[static_cast<Eigen::Index>(s)];
    const RealField obs = observe<double>(sys.control, 1, ys[0], vs[0], g);
    const double space = obs.size() == 1 ? 1.0 : g.cell_volume();
    lhs += w * space * obs.squaredNorm();
    const double e = e1(ys[0], vs[0]);
    int_e += w * e;
    if (s == 0) e0 = e;
    if (s == K) eT = e;
    gbuf[0].setZero();
    src(s, gbuf);
    int_f += w * g.cell_volume() * gbuf[0].squaredNorm();
  });
  const double rhs = e0 + eT + int_e + int_f;
  if (!(rhs > 0.0)) return std::nullopt;
  return lhs / rhs;
}

struct AdmissibilityLevel {
  int n = 0;
  std::vector<double> ratios;
  std::size_t skipped = 0;
  double max_ratio = 0.0;
};

struct AdmissibilityOptions {
  std::size_t n_samples = 8;
  double T = 1.0;
  std::size_t modes = 5;  // random data lives in the first few continuum sine modes
  std::uint64_t seed = 7;
};

/// Random forced solutions of w'' + A w = f on each refinement level. The data
/// are continuum functions sampled at the nodes, identical across levels.
inline std::vector<AdmissibilityLevel> admissibility_ratio(const ComponentControl& kind, double length,
                                                           const std::vector<int>& levels,
                                                           const AdmissibilityOptions& opt = {}) {
  if (opt.n_samples < 1) throw InvalidArgument("admissibility_ratio: need at least one sample");
  if (std::holds_alternative<NoControl>(kind)) throw InvalidArgument("admissibility_ratio: no observation given");
  std::vector<AdmissibilityLevel> out;
  for (int n : levels) {
    const Grid grid = build_grid({length}, {n});
    const EllipticOperator op(grid);
    auto basis = std::make_shared<const SpectralBasis>(spectral_basis(op, 1));
    ControlSpec ctl;
    ctl.components = {kind};
    const CascadeSystem sys = make_system(Family::Hyperbolic, 0.0, op, basis, 1, 0, {}, ctl);
    const double limit = cfl_limit(sys);
    const auto K = static_cast<std::size_t>(std::ceil(opt.T / (0.5 * limit)));
    const double dt = opt.T / static_cast<double>(K);

    AdmissibilityLevel lvl;
    lvl.n = n;
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> normal;
    for (std::size_t s = 0; s < opt.n_samples; ++s) {
      std::vector<double> a(opt.modes), b(opt.modes), c(opt.modes), freq(opt.modes);
      for (std::size_t j = 0; j < opt.modes; ++j) {
        a[j] = normal(rng);
        b[j] = normal(rng);
        c[j] = normal(rng);
        freq[j] = 10.0 * std::abs(normal(rng));
      }
      SystemState<double> init = SystemState<double>::zero(sys);
      Forcing<double> f;
      f.fields.assign(1, Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(grid.node_count()), static_cast<Eigen::Index>(K + 1)));
      for (std::size_t node = 0; node < grid.node_count(); ++node) {
        const double x = grid.node(node)[0];
        for (std::size_t j = 0; j < opt.modes; ++j) {
          const double kpi = static_cast<double>(j + 1) * std::numbers::pi / length;
          const double mode = std::sqrt(2.0 / length) * std::sin(kpi * x);
          init.w[0][static_cast<Eigen::Index>(node)] += a[j] / kpi * mode;
          init.w_prime[0][static_cast<Eigen::Index>(node)] += b[j] * mode;
          for (std::size_t m = 0; m <= K; ++m)
            f.fields[0](static_cast<Eigen::Index>(node), static_cast<Eigen::Index>(m)) +=
                c[j] * std::cos(freq[j] * static_cast<double>(m) * dt) * mode;
        }
      }
      if (const auto r = admissibility_sample(sys, init, f, opt.T, dt)) {
        lvl.ratios.push_back(*r);
        lvl.max_ratio = std::max(lvl.max_ratio, *r);
      } else {
        ++lvl.skipped;
      }
    }
    out.push_back(std::move(lvl));
  }
  return out;
}

}  // namespace cascade_lab
