#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "cascade_lab/cg.hpp"

using namespace cascade_lab;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd spd(int n, double cond, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  MatrixXd R(n, n);
  for (auto& x : R.reshaped()) x = normal(rng);
  const MatrixXd Q = Eigen::HouseholderQR<MatrixXd>(R).householderQ();
  VectorXd d(n);
  for (int i = 0; i < n; ++i) d[i] = std::pow(cond, static_cast<double>(i) / (n - 1));
  return Q * d.asDiagonal() * Q.transpose();
}

auto dot = [](const VectorXd& a, const VectorXd& b) { return a.dot(b); };

}  // namespace

TEST(Krylov, SolvesSpdSystems) {
  const MatrixXd A = spd(40, 1e3, 1);
  const VectorXd b = VectorXd::LinSpaced(40, -1.0, 2.0);
  const VectorXd exact = A.llt().solve(b);
  auto apply = [&](const VectorXd& x) { VectorXd y = A * x; return y; };
  CgOptions opt;
  opt.tolerance = 1e-12;
  for (int method = 0; method < 2; ++method) {
    const auto r = method == 0 ? conjugate_gradient(apply, b, dot, opt) : conjugate_residual(apply, b, dot, opt);
    EXPECT_EQ(r.status, CgStatus::Converged) << method;
    EXPECT_LE((r.x - exact).norm(), 1e-8 * exact.norm()) << method;
    EXPECT_EQ(r.residual_history.front(), 1.0);
    EXPECT_LE(r.residual_history.back(), 1e-12);
    EXPECT_EQ(r.residual_history.size(), r.iterations + 1);
  }
}

TEST(Krylov, WeightedInnerProduct) {
  // A = S^{-1} M is self-adjoint in <x, y>_S = x^T S y.
  const int n = 25;
  const MatrixXd M = spd(n, 50.0, 2);
  const VectorXd s = VectorXd::LinSpaced(n, 1.0, 100.0);
  auto apply = [&](const VectorXd& x) { VectorXd y = (M * x).cwiseQuotient(s); return y; };
  auto ip = [&](const VectorXd& a, const VectorXd& b) { return b.dot(s.cwiseProduct(a)); };
  const VectorXd b = VectorXd::Ones(n);
  const VectorXd exact = M.llt().solve(s.cwiseProduct(b));
  CgOptions opt;
  opt.tolerance = 1e-12;
  const auto r = conjugate_residual(apply, b, ip, opt);
  EXPECT_EQ(r.status, CgStatus::Converged);
  EXPECT_LE((r.x - exact).norm(), 1e-8 * exact.norm());
}

TEST(Krylov, ZeroRhs) {
  const MatrixXd A = spd(5, 10.0, 3);
  auto apply = [&](const VectorXd& x) { VectorXd y = A * x; return y; };
  for (int method = 0; method < 2; ++method) {
    const VectorXd b = VectorXd::Zero(5);
    const auto r = method == 0 ? conjugate_gradient(apply, b, dot) : conjugate_residual(apply, b, dot);
    EXPECT_EQ(r.status, CgStatus::ZeroRhs);
    EXPECT_TRUE(r.x.isZero(0.0));
    EXPECT_EQ(r.iterations, 0u);
  }
}

TEST(Krylov, ConjugateResidualHistoryNeverRises) {
  const MatrixXd A = spd(60, 1e5, 4);
  auto apply = [&](const VectorXd& x) { VectorXd y = A * x; return y; };
  std::mt19937_64 rng(5);
  std::normal_distribution<double> normal;
  VectorXd b(60);
  for (auto& x : b) x = normal(rng);
  CgOptions opt;
  opt.tolerance = 1e-9;
  opt.max_iterations = 300;
  const auto r = conjugate_residual(apply, b, dot, opt);
  for (std::size_t k = 1; k < r.residual_history.size(); ++k)
    EXPECT_LE(r.residual_history[k], r.residual_history[k - 1] * (1 + 1e-12)) << k;
}

TEST(Krylov, SingularSystemStagnates) {
  // Component of b in the null space cannot be removed.
  VectorXd d = VectorXd::LinSpaced(30, 1.0, 30.0);
  d[0] = 0.0;
  auto apply = [&](const VectorXd& x) { VectorXd y = d.cwiseProduct(x); return y; };
  VectorXd b = VectorXd::Ones(30);
  CgOptions opt;
  opt.window = 5;
  opt.max_iterations = 200;
  const auto r = conjugate_residual(apply, b, dot, opt);
  EXPECT_EQ(r.status, CgStatus::Stagnated);
  EXPECT_NEAR(r.residual_history.back(), 1.0 / std::sqrt(30.0), 1e-4);
  EXPECT_LT(r.iterations, 200u);
}

TEST(Krylov, MaxIterations) {
  const MatrixXd A = spd(50, 1e6, 6);
  auto apply = [&](const VectorXd& x) { VectorXd y = A * x; return y; };
  CgOptions opt;
  opt.max_iterations = 3;
  opt.window = 100;
  const auto r = conjugate_gradient(apply, VectorXd::Ones(50).eval(), dot, opt);
  EXPECT_EQ(r.status, CgStatus::MaxIterations);
  EXPECT_EQ(r.iterations, 3u);
}
