#pragma once

// JSON views of the verdict records.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "json.hpp"

#include "cascade_lab/analysis.hpp"
#include "cascade_lab/geometry.hpp"
#include "cascade_lab/hum.hpp"
#include "cascade_lab/operators.hpp"

namespace cascade_lab {

using json = nlohmann::json;

namespace detail {
// NaN is not JSON; absent values become null.
inline json number(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }
}  // namespace detail

inline json to_json(const Region& r) {
  json parts = json::array();
  for (const auto& b : r.parts()) {
    json lo = json::array(), hi = json::array();
    for (int a = 0; a < r.dim(); ++a) {
      lo.push_back(b.lo[a]);
      hi.push_back(b.hi[a]);
    }
    parts.push_back({{"lo", lo}, {"hi", hi}, {"amplitude", b.amplitude}});
  }
  return {{"dim", r.dim()}, {"parts", parts}};
}

inline json to_json(const RayState& s) {
  return {{"position", {s.position[0], s.position[1]}},
          {"direction", {s.direction[0], s.direction[1]}},
          {"elapsed", s.elapsed}};
}

inline json to_json(const GccReport& r, const Region& region) {
  json j = {{"region", to_json(region)},
            {"horizon", r.horizon},
            {"dt_ray", r.dt_ray},
            {"rays_total", r.rays_total},
            {"rays_hit", r.rays_hit},
            {"corner_resamples", r.corner_resamples},
            {"min_hit_time", detail::number(r.min_hit_time)},
            {"max_hit_time_among_hitters", detail::number(r.max_hit_time_among_hitters)},
            {"worst_ray", r.worst_ray ? to_json(*r.worst_ray) : json(nullptr)},
            {"verdict", r.pass ? "pass" : "fail"}};
  return j;
}

inline json to_json(const A4Result& a) {
  return {{"beta", a.beta},
          {"alpha", a.alpha},
          {"pi_support", to_json(a.pi_support)},
          {"samples", a.samples},
          {"min_slack_beta", a.min_slack_beta},
          {"min_slack_alpha", a.min_slack_alpha},
          {"pass", a.pass}};
}

inline json to_json(const HypothesisReport& h) {
  json couplings = json::array();
  for (const auto& c : h.couplings) couplings.push_back({{"row", c.row}, {"col", c.col}, {"a4", to_json(c.a4)}});
  return {{"omega_A1", h.omega_A1},
          {"couplings", couplings},
          {"a2_ratio_samples", h.a2_ratio_samples},
          {"verdict", {{"A1", h.a1_pass}, {"A4", h.a4_pass}, {"A2", h.a2_pass}}},
          {"a4_higher_levels_untested", h.a4_higher_levels_untested}};
}

inline json to_json(const AdmissibilityLevel& l) {
  return {{"n", l.n}, {"ratios", l.ratios}, {"skipped", l.skipped}, {"max_ratio", l.max_ratio}};
}

template <typename Scalar>
json to_json(const HumResult<Scalar>& r) {
  return {{"status", to_string(r.status)},
          {"krylov", to_string(r.method)},
          {"cg_iterations", r.cg_iterations},
          {"residual_history", r.residual_history},
          {"gramian_applies", r.gramian_applies},
          {"initial_energy", r.initial_energy},
          {"initial_energy_filtered", r.initial_energy_filtered},
          {"projection_residual", r.projection_residual},
          {"free_energy_filtered", r.free_energy_filtered},
          {"free_energy_full", r.free_energy_full},
          {"free_component_filtered", r.free_component_filtered},
          {"free_l2_norm", r.free_l2_norm},
          {"terminal_energy_filtered", r.terminal_energy_filtered},
          {"terminal_energy_full", r.terminal_energy_full},
          {"terminal_component_filtered", r.terminal_component_filtered},
          {"terminal_l2_norm", r.terminal_l2_norm},
          {"filtered_ratio", r.initial_energy_filtered > 0 ? json(r.terminal_energy_filtered / r.initial_energy_filtered)
                                                           : json(nullptr)},
          {"control_norm_squared", r.control_norm_squared},
          {"gram_energy", r.gram_energy},
          {"epsilon", r.epsilon},
          {"T", r.T},
          {"dt", r.dt},
          {"K_filter", r.k_filter},
          {"seed_weighting", to_string(r.weighting)},
          {"wall_seconds", r.wall_seconds},
          {"theta_outside_open_range", r.theta_endpoint},
          {"success", r.success()}};
}

template <typename Scalar>
json to_json(const SweepResult<Scalar>& s) {
  json runs = json::array();
  for (const auto& r : s.runs) runs.push_back(to_json(r));
  return {{"epsilons", s.epsilons},
          {"terminal_l2_norms", s.terminal_norms},
          {"slope", s.slope},
          {"intercept", s.intercept},
          {"partial", s.partial},
          {"runs", runs}};
}

inline json to_json(const ObservabilityReport& r) {
  return {{"T", r.T},
          {"dt", r.dt},
          {"K_filter", r.k_filter},
          {"observation", to_string(r.kind)},
          {r.kind == ObservationKind::ControlAdjoint ? "C1_est" : "C2_est", r.c_est},
          {"eigenvalues", r.eigenvalues},
          {"assembly", r.assembly},
          {"seed_weighting", to_string(r.weighting)},
          {"seed_dimension", r.seed_dimension},
          {"relative_asymmetry", r.asymmetry}};
}

inline json to_json(const KalmanReport& r) {
  json modes = json::array();
  for (const auto& m : r.modes) {
    json mm = json::array();
    for (Eigen::Index i = 0; i < m.mode_matrix.rows(); ++i) {
      json row = json::array();
      for (Eigen::Index k = 0; k < m.mode_matrix.cols(); ++k) row.push_back(m.mode_matrix(i, k));
      mm.push_back(row);
    }
    modes.push_back({{"mode", m.mode}, {"mu", m.mu}, {"mode_matrix", mm}, {"rank", m.rank}, {"full_rank", m.full_rank}});
  }
  return {{"N", r.N},
          {"modes", modes},
          {"first_deficient_mode", r.first_deficient_mode ? json(*r.first_deficient_mode) : json(nullptr)},
          {"verdict", r.pass ? "pass" : "fail"}};
}

}  // namespace cascade_lab
