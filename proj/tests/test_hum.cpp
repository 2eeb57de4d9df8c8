#include <cmath>
#include <complex>
#include <random>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace cascade_lab;
using fixtures::Model;
using C = std::complex<double>;

namespace {

// Largest step <= half the CFL bound that divides T.
double stable_dt(const CascadeSystem& sys, double T) {
  return T / std::ceil(T / (0.5 * cfl_limit(sys)));
}

template <typename Scalar>
void expect_self_adjoint(const GramianOperator<Scalar>& G, std::uint64_t seed) {
  const auto& S = G.seeds();
  std::mt19937_64 rng(seed);
  for (int trial = 0; trial < 5; ++trial) {
    const auto x = fixtures::random_seed(S, rng), y = fixtures::random_seed(S, rng);
    const Scalar a = S.inner(G.apply(x), y), b = S.inner(x, G.apply(y));
    EXPECT_LE(std::abs(a - b), 1e-8 * std::max(std::abs(a), S.norm(G.apply(x)) * S.norm(y)));
    EXPECT_GE(std::real(S.inner(G.apply(x), x)), -1e-12 * std::pow(S.norm(x), 2));
  }
  double asym = 0.0;
  const auto ev = weighted_spectrum<Scalar>(G.assemble(), S.weights(), &asym);
  EXPECT_LE(asym, 1e-8);
  EXPECT_GE(ev.front(), -1e-12 * ev.back());
}

}  // namespace

TEST(AdjointSystem, TransposesCoupling) {
  const Model m = fixtures::chain3(30);
  const auto t = adjoint_system(m.sys);
  EXPECT_TRUE(t.transposed);
  ASSERT_EQ(t.coupling.entries.size(), 2u);
  EXPECT_EQ(t.coupling.entries[0].row, 2);
  EXPECT_EQ(t.coupling.entries[0].col, 1);
  EXPECT_EQ(t.coupling.entries[1].row, 3);
  EXPECT_EQ(t.coupling.entries[1].col, 2);
  EXPECT_TRUE(t.coupling_fields[1] == m.sys.coupling_fields[1]);
}

TEST(SeedSpace, WeightsAndLayout) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 30);
  const SeedSpace<double> S(m.sys, 4);
  EXPECT_EQ(S.dimension(), 16);
  EXPECT_EQ(S.weighting(), SeedWeighting::Bounded);
  EXPECT_DOUBLE_EQ(S.weights()[S.index(1, 0, 2)], m.basis->eigenvalue(2));
  EXPECT_DOUBLE_EQ(S.weights()[S.index(1, 1, 2)], 1.0);
  EXPECT_THROW(SeedSpace<double>(m.sys, 0), InvalidArgument);
  EXPECT_THROW(SeedSpace<double>(m.sys, 31), InvalidArgument);
  EXPECT_THROW(S.lift(Eigen::VectorXd::Zero(3)), InvalidArgument);

  const Model d = fixtures::cascade2(Family::Dissipative, 30);
  const SeedSpace<double> L(d.sys, 4);
  EXPECT_EQ(L.dimension(), 8);
  EXPECT_EQ(L.weighting(), SeedWeighting::L2);
  EXPECT_EQ(SeedSpace<double>(fixtures::boundary2(30).sys, 4).weighting(), SeedWeighting::Unbounded);
}

TEST(SeedSpace, RepresentIsDualToLift) {
  // <represent(Y), Psi>_S equals <y', phi> - <y, phi'> with (phi, phi') = lift(Psi).
  for (const Model& m : {fixtures::cascade2(Family::Hyperbolic, 40), fixtures::boundary2(40)}) {
    const SeedSpace<double> S(m.sys, 6);
    std::mt19937_64 rng(17);
    const Grid& g = m.sys.grid();
    for (int trial = 0; trial < 5; ++trial) {
      auto Y = SystemState<double>::zero(m.sys);
      for (auto& w : Y.w) w = fixtures::random_field<double>(40, rng);
      for (auto& w : Y.w_prime) w = fixtures::random_field<double>(40, rng);
      const auto psi = fixtures::random_seed(S, rng);
      const auto phi = S.lift(psi);
      double pairing = 0.0;
      for (int i = 0; i < 2; ++i) pairing += inner(g, Y.w_prime[i], phi.w[i]) - inner(g, Y.w[i], phi.w_prime[i]);
      EXPECT_NEAR(S.inner(S.represent(Y), psi), pairing, 1e-10 * (std::abs(pairing) + 1.0));
    }
  }
}

TEST(SeedSpace, EnergyMatchesNaturalEnergy) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 40);
  const SeedSpace<double> S(m.sys, 40);
  std::mt19937_64 rng(18);
  auto Y = SystemState<double>::zero(m.sys);
  for (auto& w : Y.w) w = fixtures::random_field<double>(40, rng);
  for (auto& w : Y.w_prime) w = fixtures::random_field<double>(40, rng);
  EXPECT_NEAR(S.energy(Y), energy(m.sys, Y).total, 1e-9 * energy(m.sys, Y).total);
}

// ---------------------------------------------------------------------------

TEST(Gramian, ZeroSeedGivesZero) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 30);
  const GramianOperator<double> G(m.sys, 1.0, stable_dt(m.sys, 1.0), 4);
  EXPECT_TRUE(G.apply(Eigen::VectorXd::Zero(16)).isZero(0.0));
}

TEST(Gramian, SelfAdjointHyperbolic) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 40);
  expect_self_adjoint(GramianOperator<double>(m.sys, 2.0, stable_dt(m.sys, 2.0), 5), 31);
}

TEST(Gramian, SelfAdjointBoundary) {
  const Model m = fixtures::boundary2(40);
  expect_self_adjoint(GramianOperator<double>(m.sys, 2.0, stable_dt(m.sys, 2.0), 5), 32);
}

TEST(Gramian, SelfAdjointDissipativeComplex) {
  const Model m = fixtures::cascade2(Family::Dissipative, 40, 1.0, 0.4);
  expect_self_adjoint(GramianOperator<C>(m.sys, 0.2, 0.002, 5), 33);
}

TEST(Gramian, SelfAdjointDissipativeReal) {
  const Model m = fixtures::cascade2(Family::Dissipative, 40);
  expect_self_adjoint(GramianOperator<double>(m.sys, 0.2, 0.002, 5), 34);
}

TEST(Gramian, EnergyIdentity) {
  // <G x, x>_S = int |L* x|^2.
  const Model m = fixtures::cascade2(Family::Hyperbolic, 40);
  const GramianOperator<double> G(m.sys, 3.0, stable_dt(m.sys, 3.0), 6);
  std::mt19937_64 rng(35);
  const auto x = fixtures::random_seed(G.seeds(), rng);
  const double lhs = G.seeds().inner(G.apply(x), x);
  const double rhs = G.observe(x).l2_norm_squared(m.sys.grid());
  EXPECT_NEAR(lhs, rhs, 1e-9 * rhs);
}

TEST(Gramian, SmallestEigenvalueGrowsWithT) {
  const Model m = fixtures::single(Family::Hyperbolic, 60, 0.3, 0.6);
  double prev = -1.0;
  for (double T : {1.0, 2.0, 3.0, 4.0}) {
    const GramianOperator<double> G(m.sys, T, stable_dt(m.sys, T), 4);
    const double lo = weighted_spectrum<double>(G.assemble(), G.seeds().weights()).front();
    EXPECT_GT(lo, prev) << "T = " << T;
    prev = lo;
  }
}

TEST(Gramian, MixedControlsRejected) {
  const EllipticOperator op(build_grid({1.0}, {20}));
  auto basis = fixtures::basis_for(op);
  ControlSpec ctl;
  ctl.components = {Distributed{interval(0.1, 0.3, 1.0)}, BoundaryEnd{End::Right, 1.0}};
  const auto sys = make_system(Family::Hyperbolic, 0.0, op, basis, 2, 0, {}, ctl);
  EXPECT_THROW(GramianOperator<double>(sys, 1.0, 0.01, 3), InvalidArgument);
}

// ---------------------------------------------------------------------------

TEST(Hum, ToleranceFromHalfPeriodObservation) {
  // Single wave, omega = (0.4, 0.6) meets every ray within 0.8 < T.
  const Model m = fixtures::single(Family::Hyperbolic, 200, 0.4, 0.6);
  const double T = 3.0;
  auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, -0.5, 0.25}});
  Y0.w_prime[0] = 0.7 * m.basis->mode(3);
  const auto r = synthesize_control<double>(m.sys, Y0, T, stable_dt(m.sys, T), 20, 0.0);
  EXPECT_EQ(r.status, CgStatus::Converged);
  EXPECT_LE(r.terminal_energy_filtered, 1e-8 * r.initial_energy_filtered);
  EXPECT_TRUE(r.success());
  EXPECT_NEAR(r.control_norm_squared, r.gram_energy, 1e-6 * r.gram_energy);
  for (std::size_t k = 1; k < r.residual_history.size(); ++k)
    EXPECT_LE(r.residual_history[k], r.residual_history[k - 1] * (1 + 1e-12));
}

TEST(Hum, TerminalIsFreePlusGramian) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 60);
  const double T = 4.0, dt = stable_dt(m.sys, T);
  auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, 0.3}, {0.0, 0.5}});
  HumOptions opt;
  opt.max_iter = 15;
  const auto r = synthesize_control<double>(m.sys, Y0, T, dt, 6, 0.0, opt);
  const GramianOperator<double> G(m.sys, T, dt, 6);
  const auto free = G.forward(Y0, nullptr).terminal;
  const auto lhs = G.seeds().represent(r.terminal);
  const Eigen::VectorXd rhs = G.seeds().represent(free) + G.apply(r.seed);
  EXPECT_LE(G.seeds().norm(lhs - rhs), 1e-9 * G.seeds().norm(G.seeds().represent(free)));
}

TEST(Hum, ZeroCouplingCannotReachFirstComponent) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 100, 0.0);
  const double T = 6.0;
  auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, 0.5, 1.0 / 3}, {0.0, 0.5, 0.5, 0.5}});
  const auto r = synthesize_control<double>(m.sys, Y0, T, stable_dt(m.sys, T), 10, 0.0);
  EXPECT_NE(r.status, CgStatus::Converged);
  EXPECT_FALSE(r.success() && r.terminal_energy_filtered < 1e-8 * r.initial_energy_filtered);
  EXPECT_GE(r.terminal_component_filtered[0], 0.9 * r.free_component_filtered[0]);
}

TEST(Hum, ZeroInitialData) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 30);
  const auto r = synthesize_control<double>(m.sys, SystemState<double>::zero(m.sys), 1.0, stable_dt(m.sys, 1.0), 4, 0.0);
  EXPECT_EQ(r.status, CgStatus::ZeroRhs);
  EXPECT_EQ(r.control_norm_squared, 0.0);
  EXPECT_TRUE(r.success());
}

TEST(Hum, DissipativeNeedsPenalty) {
  const Model m = fixtures::cascade2(Family::Dissipative, 30);
  const auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0}, {1.0}});
  EXPECT_THROW(synthesize_control<double>(m.sys, Y0, 0.5, 0.005, 5, 0.0), InvalidArgument);
  HumOptions bad;
  bad.cg_tol = 0.0;
  EXPECT_THROW(synthesize_control<double>(m.sys, Y0, 0.5, 0.005, 5, 1e-3, bad), InvalidArgument);
}

TEST(Hum, PenalizedComplexReducesTerminalState) {
  // Y(T) = eps (G + eps)^{-1} Y_free(T) in seed coordinates: never larger than
  // the free state, and smaller for smaller eps.
  const Model m = fixtures::cascade2(Family::Dissipative, 40, 5.0, 0.3);
  const auto Y0 = fixtures::modal_state<C>(m.sys, {{1.0, 0.5}, {0.5, 0.5}});
  const auto coarse = synthesize_control<C>(m.sys, Y0, 0.5, 0.005, 40, 1e-2);
  const auto fine = synthesize_control<C>(m.sys, Y0, 0.5, 0.005, 40, 1e-4);
  EXPECT_TRUE(coarse.converged());
  EXPECT_TRUE(fine.converged());
  EXPECT_LT(coarse.terminal_energy_filtered, coarse.free_energy_filtered);
  EXPECT_LT(fine.terminal_energy_filtered, coarse.terminal_energy_filtered);
}

TEST(Hum, ToleranceInsensitivity) {
  const Model m = fixtures::cascade2(Family::Hyperbolic, 60);
  const double T = 6.0, dt = stable_dt(m.sys, T);
  const auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, 0.5}, {0.0, 0.5, 0.5}});
  HumOptions a, b;
  a.cg_tol = 1e-8;
  b.cg_tol = 1e-9;
  a.max_iter = b.max_iter = 1000;
  const auto ra = synthesize_control<double>(m.sys, Y0, T, dt, 8, 0.0, a);
  const auto rb = synthesize_control<double>(m.sys, Y0, T, dt, 8, 0.0, b);
  ASSERT_TRUE(ra.converged());
  ASSERT_TRUE(rb.converged());
  EXPECT_LE(std::abs(ra.control_norm_squared - rb.control_norm_squared), 0.05 * rb.control_norm_squared);
}

TEST(Hum, ConjugateGradientAlsoAvailable) {
  const Model m = fixtures::single(Family::Hyperbolic, 80, 0.2, 0.5);
  const double T = 3.0;
  const auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, 0.5}});
  HumOptions opt;
  opt.method = KrylovMethod::ConjugateGradient;
  const auto r = synthesize_control<double>(m.sys, Y0, T, stable_dt(m.sys, T), 8, 0.0, opt);
  EXPECT_EQ(r.method, KrylovMethod::ConjugateGradient);
  EXPECT_TRUE(r.converged());
  EXPECT_LE(r.terminal_energy_filtered, 1e-8 * r.initial_energy_filtered);
}

TEST(Sweep, Validation) {
  const Model m = fixtures::cascade2(Family::Dissipative, 20);
  const auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0}, {1.0}});
  EXPECT_THROW(epsilon_sweep<double>(m.sys, Y0, 0.1, 0.01, 3, {1e-2, 1e-3}), InvalidArgument);
  EXPECT_THROW(epsilon_sweep<double>(m.sys, Y0, 0.1, 0.01, 3, {1e-2, 1e-3, 1e-3}), InvalidArgument);
  EXPECT_THROW(epsilon_sweep<double>(m.sys, Y0, 0.1, 0.01, 3, {1e-2, 1e-3, -1.0}), InvalidArgument);
  const Model h = fixtures::cascade2(Family::Hyperbolic, 20);
  EXPECT_THROW(epsilon_sweep<double>(h.sys, SystemState<double>::zero(h.sys), 0.1, 0.01, 3, {1e-2, 1e-3, 1e-4}),
               InvalidArgument);
}

TEST(Sweep, FitLineExact) {
  const auto [s, c] = fit_line({0.0, 1.0, 2.0, 3.0}, {1.0, 1.5, 2.0, 2.5});
  EXPECT_DOUBLE_EQ(s, 0.5);
  EXPECT_DOUBLE_EQ(c, 1.0);
}

TEST(Sweep, TerminalNormDecreasesWithEpsilon) {
  const Model m = fixtures::cascade2(Family::Dissipative, 40, 20.0);
  const auto Y0 = fixtures::modal_state<double>(m.sys, {{1.0, 0.5}, {0.5, 0.5}});
  const auto sw = epsilon_sweep<double>(m.sys, Y0, 0.5, 0.005, 20, {1e-2, 1e-3, 1e-4});
  ASSERT_EQ(sw.terminal_norms.size(), 3u);
  EXPECT_LT(sw.terminal_norms[1], sw.terminal_norms[0]);
  EXPECT_LT(sw.terminal_norms[2], sw.terminal_norms[1]);
  EXPECT_GT(sw.slope, 0.0);
}
