#pragma once

#include <memory>
#include <random>

#include "cascade_lab/cascade_lab.hpp"

namespace fixtures {

using namespace cascade_lab;

struct Model {
  EllipticOperator op;
  std::shared_ptr<const SpectralBasis> basis;
  CascadeSystem sys;
};

inline std::shared_ptr<const SpectralBasis> basis_for(const EllipticOperator& op, Eigen::Index K = -1) {
  if (K < 0) K = static_cast<Eigen::Index>(op.size());
  return std::make_shared<const SpectralBasis>(spectral_basis(op, K));
}

/// 2-cascade on (0,1): y1 <- c 1_O y2, distributed control on component 2.
inline Model cascade2(Family family, int n, double c = 1.0, double theta = 0.0, double olo = 0.2, double ohi = 0.4,
                      double wlo = 0.7, double whi = 0.9) {
  Model m{EllipticOperator(build_grid({1.0}, {n})), nullptr, {}};
  m.basis = basis_for(m.op);
  CouplingSpec cs;
  cs.N = 2;
  cs.entries.push_back({1, 2, interval(olo, ohi, c)});
  ControlSpec ctl;
  ctl.components = {NoControl{}, Distributed{interval(wlo, whi, 1.0)}};
  m.sys = make_system(family, theta, m.op, m.basis, 2, 1, cs, ctl);
  return m;
}

/// Single equation observed on (lo, hi).
inline Model single(Family family, int n, double lo, double hi, double theta = 0.0) {
  Model m{EllipticOperator(build_grid({1.0}, {n})), nullptr, {}};
  m.basis = basis_for(m.op);
  ControlSpec ctl;
  ctl.components = {Distributed{interval(lo, hi, 1.0)}};
  m.sys = make_system(family, theta, m.op, m.basis, 1, 0, {}, ctl);
  return m;
}

/// 2-cascade with a Dirichlet control at the right end of component 2.
inline Model boundary2(int n, double c = 1.0) {
  Model m{EllipticOperator(build_grid({1.0}, {n})), nullptr, {}};
  m.basis = basis_for(m.op);
  CouplingSpec cs;
  cs.N = 2;
  cs.entries.push_back({1, 2, interval(0.2, 0.4, c)});
  ControlSpec ctl;
  ctl.components = {NoControl{}, BoundaryEnd{End::Right, 1.0}};
  m.sys = make_system(Family::Hyperbolic, 0.0, m.op, m.basis, 2, 1, cs, ctl);
  return m;
}

/// Three-component chain 1 <- 2 <- 3, control on component 3.
inline Model chain3(int n, double c12 = 1.0, double c23 = 1.0) {
  Model m{EllipticOperator(build_grid({1.0}, {n})), nullptr, {}};
  m.basis = basis_for(m.op);
  CouplingSpec cs;
  cs.N = 3;
  cs.entries.push_back({1, 2, interval(0.1, 0.3, c12)});
  cs.entries.push_back({2, 3, interval(0.4, 0.6, c23)});
  ControlSpec ctl;
  ctl.components = {NoControl{}, NoControl{}, Distributed{interval(0.7, 0.9, 1.0)}};
  m.sys = make_system(Family::Hyperbolic, 0.0, m.op, m.basis, 3, 2, cs, ctl);
  return m;
}

template <typename Scalar>
Field<Scalar> random_field(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal;
  Field<Scalar> v(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if constexpr (std::is_same_v<Scalar, double>) v[i] = normal(rng);
    else v[i] = Scalar(normal(rng), normal(rng));
  }
  return v;
}

template <typename Scalar>
Field<Scalar> random_seed(const SeedSpace<Scalar>& S, std::mt19937_64& rng) {
  return random_field<Scalar>(S.dimension(), rng);
}

/// Smooth data: a few modes per component.
template <typename Scalar>
SystemState<Scalar> modal_state(const CascadeSystem& sys, std::initializer_list<std::initializer_list<double>> coeffs) {
  auto s = SystemState<Scalar>::zero(sys);
  std::size_t i = 0;
  for (const auto& comp : coeffs) {
    Eigen::Index j = 0;
    for (double a : comp) s.w[i] += (a * sys.basis->mode(j++)).template cast<Scalar>();
    ++i;
  }
  return s;
}

}  // namespace fixtures
