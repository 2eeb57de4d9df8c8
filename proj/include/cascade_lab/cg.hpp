#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <limits>
#include <vector>

namespace cascade_lab {

enum class CgStatus { Converged, Stagnated, MaxIterations, ZeroRhs };

inline const char* to_string(CgStatus s) {
  switch (s) {
    case CgStatus::Converged: return "converged";
    case CgStatus::Stagnated: return "stagnated";
    case CgStatus::MaxIterations: return "max_iterations";
    case CgStatus::ZeroRhs: return "zero_rhs";
  }
  return "unknown";
}

template <typename Vec>
struct CgResult {
  Vec x;
  std::size_t iterations = 0;
  std::vector<double> residual_history;  // ||r_k|| / ||b||, starting with 1
  CgStatus status = CgStatus::MaxIterations;
};

struct CgOptions {
  double tolerance = 1e-10;
  std::size_t max_iterations = 500;
  /// Stagnation: the best residual of the last `window` iterations improves on
  /// the best before the window by less than `plateau_factor`.
  std::size_t window = 20;
  double plateau_factor = 0.99;
};

/// Unpreconditioned conjugate gradients for an operator self-adjoint and
/// positive (semi)definite in the inner product `inner`, with a zero start.
template <typename Vec, typename Apply, typename Inner>
CgResult<Vec> conjugate_gradient(Apply&& apply, const Vec& b, Inner&& inner, const CgOptions& opt = {}) {
  CgResult<Vec> out;
  out.x = b * 0.0;
  const double bnorm = std::sqrt(std::real(inner(b, b)));
  if (!(bnorm > 0.0)) {
    out.status = CgStatus::ZeroRhs;
    out.residual_history.push_back(0.0);
    return out;
  }
  Vec r = b;
  Vec p = r;
  double rr = std::real(inner(r, r));
  out.residual_history.push_back(1.0);
  double best_before_window = std::numeric_limits<double>::infinity();

  for (std::size_t k = 1; k <= opt.max_iterations; ++k) {
    const Vec q = apply(p);
    const double pq = std::real(inner(p, q));
    out.iterations = k;
    if (!(pq > 0.0)) {
      // Direction in the null space: nothing more to gain.
      out.status = CgStatus::Stagnated;
      return out;
    }
    const double alpha = rr / pq;
    out.x = out.x + alpha * p;
    r = r - alpha * q;
    const double rr_new = std::real(inner(r, r));
    const double rel = std::sqrt(rr_new) / bnorm;
    out.residual_history.push_back(rel);
    if (rel <= opt.tolerance) {
      out.status = CgStatus::Converged;
      return out;
    }
    if (k >= opt.window) {
      const auto& h = out.residual_history;
      best_before_window = std::min(best_before_window, h[k - opt.window]);
      const double best_in_window = *std::min_element(h.end() - static_cast<long>(opt.window), h.end());
      if (best_in_window > opt.plateau_factor * best_before_window) {
        out.status = CgStatus::Stagnated;
        return out;
      }
    }
    p = r + (rr_new / rr) * p;
    rr = rr_new;
  }
  out.status = CgStatus::MaxIterations;
  return out;
}

/// Conjugate residual: the CG recurrence in the operator-weighted product. It
/// minimizes |r_k| over the Krylov space, so the residual history never rises.
/// Same stopping rules and one operator application per iteration.
template <typename Vec, typename Apply, typename Inner>
CgResult<Vec> conjugate_residual(Apply&& apply, const Vec& b, Inner&& inner, const CgOptions& opt = {}) {
  CgResult<Vec> out;
  out.x = b * 0.0;
  const double bnorm = std::sqrt(std::real(inner(b, b)));
  if (!(bnorm > 0.0)) {
    out.status = CgStatus::ZeroRhs;
    out.residual_history.push_back(0.0);
    return out;
  }
  Vec r = b;
  Vec Ar = apply(r);
  Vec p = r;
  Vec Ap = Ar;
  double rAr = std::real(inner(Ar, r));
  out.residual_history.push_back(1.0);
  double best_before_window = std::numeric_limits<double>::infinity();

  for (std::size_t k = 1; k <= opt.max_iterations; ++k) {
    out.iterations = k;
    const double ApAp = std::real(inner(Ap, Ap));
    if (!(rAr > 0.0) || !(ApAp > 0.0)) {
      out.status = CgStatus::Stagnated;
      return out;
    }
    const double alpha = rAr / ApAp;
    out.x = out.x + alpha * p;
    r = r - alpha * Ap;
    const double rel = std::sqrt(std::real(inner(r, r))) / bnorm;
    out.residual_history.push_back(rel);
    if (rel <= opt.tolerance) {
      out.status = CgStatus::Converged;
      return out;
    }
    if (k >= opt.window) {
      const auto& h = out.residual_history;
      best_before_window = std::min(best_before_window, h[k - opt.window]);
      if (h.back() > opt.plateau_factor * best_before_window) {
        out.status = CgStatus::Stagnated;
        return out;
      }
    }
    Ar = apply(r);
    const double rAr_new = std::real(inner(Ar, r));
    const double beta = rAr_new / rAr;
    p = r + beta * p;
    Ap = Ar + beta * Ap;
    rAr = rAr_new;
  }
  out.status = CgStatus::MaxIterations;
  return out;
}

}  // namespace cascade_lab
