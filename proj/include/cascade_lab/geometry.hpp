#pragma once

// Uniform grids on intervals and rectangles, box-union regions, and a sampled
// billiard checker for the Geometric Control Condition.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "cascade_lab/error.hpp"
#include "cascade_lab/parallel.hpp"

namespace cascade_lab {

using Point = std::array<double, 2>;

/// Interior nodes of a uniform Dirichlet grid. Boundary nodes are not stored;
/// node (i, j) sits at ((i+1) h_x, (j+1) h_y) and has flat index i + n_x j.
struct Grid {
  int dim = 1;
  std::array<double, 2> extents{1.0, 1.0};
  std::array<int, 2> n{2, 1};
  std::array<double, 2> h{1.0, 1.0};

  std::size_t node_count() const {
    return dim == 1 ? static_cast<std::size_t>(n[0])
                    : static_cast<std::size_t>(n[0]) * static_cast<std::size_t>(n[1]);
  }

  /// h^d, the weight of the discrete L2 inner product.
  double cell_volume() const { return dim == 1 ? h[0] : h[0] * h[1]; }

  Point node(std::size_t flat) const {
    if (dim == 1) return {static_cast<double>(flat + 1) * h[0], 0.0};
    const auto nx = static_cast<std::size_t>(n[0]);
    return {static_cast<double>(flat % nx + 1) * h[0], static_cast<double>(flat / nx + 1) * h[1]};
  }

  bool operator==(const Grid&) const = default;
};

inline Grid build_grid(const std::vector<double>& extents, const std::vector<int>& n) {
  if (extents.empty() || extents.size() > 2 || extents.size() != n.size())
    throw InvalidArgument("build_grid: need one or two axes with matching extents and counts");
  Grid g;
  g.dim = static_cast<int>(extents.size());
  for (std::size_t a = 0; a < extents.size(); ++a) {
    if (!(extents[a] > 0.0) || !std::isfinite(extents[a]))
      throw InvalidArgument("build_grid: axis length must be positive, got " + std::to_string(extents[a]));
    if (n[a] < 2)
      throw InvalidArgument("build_grid: need at least 2 interior points per axis, got " + std::to_string(n[a]));
    g.extents[a] = extents[a];
    g.n[a] = n[a];
    g.h[a] = extents[a] / static_cast<double>(n[a] + 1);
  }
  if (g.dim == 1) {
    g.extents[1] = 1.0;
    g.n[1] = 1;
    g.h[1] = 1.0;
  }
  return g;
}

/// Open axis-aligned box with a constant amplitude. In 1D only the x range is used.
struct Box {
  std::array<double, 2> lo{0.0, 0.0};
  std::array<double, 2> hi{0.0, 0.0};
  double amplitude = 1.0;

  bool contains(const Point& p, int dim) const {
    for (int a = 0; a < dim; ++a)
      if (!(p[a] > lo[a] && p[a] < hi[a])) return false;
    return true;
  }
  double width(int axis) const { return hi[axis] - lo[axis]; }
};

/// Union of open boxes clipped to the domain [0, L_x] x [0, L_y].
class Region {
 public:
  Region() = default;

  Region(std::vector<Box> parts, int dim, std::array<double, 2> extents)
      : dim_(dim), extents_(extents) {
    if (dim != 1 && dim != 2) throw InvalidArgument("Region: dim must be 1 or 2");
    if (parts.empty()) throw InvalidArgument("Region: at least one part is required");
    for (auto& b : parts) {
      if (!(b.amplitude >= 0.0) || !std::isfinite(b.amplitude))
        throw InvalidArgument("Region: amplitude must be finite and nonnegative");
      for (int a = 0; a < dim; ++a) {
        b.lo[a] = std::max(b.lo[a], 0.0);
        b.hi[a] = std::min(b.hi[a], extents[a]);
        if (!(b.hi[a] > b.lo[a])) throw InvalidArgument("Region: part has empty intersection with the domain");
      }
      if (dim == 1) {
        b.lo[1] = 0.0;
        b.hi[1] = 1.0;
      }
    }
    parts_ = std::move(parts);
  }

  Region(std::vector<Box> parts, const Grid& grid) : Region(std::move(parts), grid.dim, grid.extents) {}

  /// The whole domain with constant amplitude.
  static Region full(const Grid& grid, double amplitude = 1.0) {
    Box b;
    b.hi = grid.extents;
    b.amplitude = amplitude;
    return Region({b}, grid);
  }

  int dim() const { return dim_; }
  const std::array<double, 2>& extents() const { return extents_; }
  const std::vector<Box>& parts() const { return parts_; }
  bool empty() const { return parts_.empty(); }

  bool contains(const Point& p) const {
    return std::any_of(parts_.begin(), parts_.end(), [&](const Box& b) { return b.contains(p, dim_); });
  }

  /// Amplitude at p; where parts overlap, the first listed part wins.
  double amplitude_at(const Point& p) const {
    for (const auto& b : parts_)
      if (b.contains(p, dim_)) return b.amplitude;
    return 0.0;
  }

  double max_amplitude() const {
    double m = 0.0;
    for (const auto& b : parts_) m = std::max(m, b.amplitude);
    return m;
  }
  double min_amplitude() const {
    double m = std::numeric_limits<double>::infinity();
    for (const auto& b : parts_) m = std::min(m, b.amplitude);
    return parts_.empty() ? 0.0 : m;
  }

  double smallest_width() const {
    double w = std::numeric_limits<double>::infinity();
    for (const auto& b : parts_)
      for (int a = 0; a < dim_; ++a) w = std::min(w, b.width(a));
    return w;
  }

  /// True when every part spans the whole domain with one common amplitude.
  bool is_full_domain_constant() const {
    if (parts_.empty()) return false;
    const double amp = parts_.front().amplitude;
    return std::any_of(parts_.begin(), parts_.end(), [&](const Box& b) {
             for (int a = 0; a < dim_; ++a)
               if (b.lo[a] > 0.0 || b.hi[a] < extents_[a]) return false;
             return true;
           }) &&
           std::all_of(parts_.begin(), parts_.end(), [&](const Box& b) { return b.amplitude == amp; });
  }

 private:
  int dim_ = 1;
  std::array<double, 2> extents_{1.0, 1.0};
  std::vector<Box> parts_;
};

inline Region interval(double a, double b, double amplitude, double length = 1.0) {
  Box box;
  box.lo = {a, 0.0};
  box.hi = {b, 1.0};
  box.amplitude = amplitude;
  return Region({box}, 1, {length, 1.0});
}

struct NodalField {
  Eigen::VectorXd values;
  bool empty_support = false;  // legal but usually a configuration mistake
};

inline NodalField indicator_vector(const Region& region, const Grid& grid) {
  if (region.dim() != grid.dim) throw InvalidArgument("indicator_vector: region and grid dimensions differ");
  NodalField out;
  out.values = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(grid.node_count()));
  bool any = false;
  for (std::size_t k = 0; k < grid.node_count(); ++k) {
    const Point p = grid.node(k);
    if (region.contains(p)) {
      out.values[static_cast<Eigen::Index>(k)] = region.amplitude_at(p);
      any = true;
    }
  }
  out.empty_support = !any;
  return out;
}

// ---------------------------------------------------------------------------
// Billiard rays

struct RayState {
  Point position{0.0, 0.0};
  Point direction{1.0, 0.0};
  double elapsed = 0.0;
};

namespace detail {

// Reflect an unfolded coordinate into [0, L]; returns the folded value and the
// sign the direction component carries after the reflections.
inline std::pair<double, double> fold(double x, double length) {
  const double period = 2.0 * length;
  double y = std::fmod(x, period);
  if (y < 0.0) y += period;
  if (y > length) return {period - y, -1.0};
  return {y, 1.0};
}

inline double distance_to_lattice(double x, double length) {
  const double r = std::fmod(std::abs(x), length);
  return std::min(r, length - r);
}

}  // namespace detail

/// Advances a ray by `t` with specular reflection on the box walls. Exact
/// unfolding: no error accumulates across reflections.
inline RayState trace(const RayState& ray, double t, int dim, const std::array<double, 2>& extents) {
  RayState out = ray;
  for (int a = 0; a < dim; ++a) {
    const auto [pos, sign] = detail::fold(ray.position[a] + t * ray.direction[a], extents[a]);
    out.position[a] = pos;
    out.direction[a] = sign * ray.direction[a];
  }
  out.elapsed = ray.elapsed + t;
  return out;
}

/// Whether the straight unfolded path reaches a domain corner within [0, T].
inline bool hits_corner(const RayState& ray, double T, const std::array<double, 2>& extents) {
  const double dx = ray.direction[0], dy = ray.direction[1];
  if (std::abs(dx) < 1e-14 || std::abs(dy) < 1e-14) return false;
  const double lx = extents[0], ly = extents[1];
  // Wall crossings of x happen at x0 + t dx = k lx.
  const double x0 = ray.position[0];
  const double step = lx / std::abs(dx);
  double first = dx > 0 ? (std::ceil(x0 / lx) * lx - x0) / dx : (std::floor(x0 / lx) * lx - x0) / dx;
  if (first < 0.0) first += step;
  for (double t = first; t <= T + 1e-12; t += step) {
    const double y = ray.position[1] + t * dy;
    if (detail::distance_to_lattice(y, ly) < 1e-9 * ly) return true;
  }
  return false;
}

struct GccOptions {
  std::size_t n_rays = 4096;
  double dt_ray = 1e-3;
  /// 2D only: number of directions (rounded up to a multiple of 4 so the axis
  /// directions are always present). Zero picks about cbrt(n_rays).
  std::size_t n_directions = 0;
};

struct GccReport {
  double horizon = 0.0;
  double dt_ray = 0.0;
  std::size_t rays_total = 0;
  std::size_t rays_hit = 0;
  std::size_t corner_resamples = 0;
  double min_hit_time = std::numeric_limits<double>::quiet_NaN();
  double max_hit_time_among_hitters = std::numeric_limits<double>::quiet_NaN();
  std::optional<RayState> worst_ray;  // first non-hitting ray in lattice order
  bool pass = false;
};

/// Deterministic launch lattice: positions x directions, axis directions included.
inline std::vector<RayState> ray_lattice(const Region& region, const GccOptions& opt) {
  std::vector<RayState> rays;
  const auto& L = region.extents();
  if (region.dim() == 1) {
    const std::size_t positions = std::max<std::size_t>(1, (opt.n_rays + 1) / 2);
    rays.reserve(2 * positions);
    for (std::size_t i = 0; i < positions; ++i) {
      const double x = (static_cast<double>(i) + 0.5) * L[0] / static_cast<double>(positions);
      rays.push_back({{x, 0.0}, {1.0, 0.0}, 0.0});
      rays.push_back({{x, 0.0}, {-1.0, 0.0}, 0.0});
    }
    return rays;
  }
  std::size_t dirs = opt.n_directions;
  if (dirs == 0) dirs = static_cast<std::size_t>(std::llround(std::cbrt(static_cast<double>(opt.n_rays))));
  dirs = std::max<std::size_t>(4, 4 * ((dirs + 3) / 4));
  const auto per_axis = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(opt.n_rays) / static_cast<double>(dirs)))));
  rays.reserve(per_axis * per_axis * dirs);
  for (std::size_t j = 0; j < per_axis; ++j)
    for (std::size_t i = 0; i < per_axis; ++i) {
      const Point p{(static_cast<double>(i) + 0.5) * L[0] / static_cast<double>(per_axis),
                    (static_cast<double>(j) + 0.5) * L[1] / static_cast<double>(per_axis)};
      for (std::size_t d = 0; d < dirs; ++d) {
        const double angle = 2.0 * std::numbers::pi * static_cast<double>(d) / static_cast<double>(dirs);
        Point dir{std::cos(angle), std::sin(angle)};
        // Snap the axis directions so x (or y) is exactly invariant.
        if (d % (dirs / 4) == 0) {
          dir = {std::round(dir[0]), std::round(dir[1])};
        }
        rays.push_back({p, dir, 0.0});
      }
    }
  return rays;
}

struct RayOutcome {
  RayState ray;  // as traced, after any corner re-sampling
  bool hit = false;
  double hit_time = 0.0;
  bool resampled = false;
};

inline RayOutcome trace_until_hit(RayState ray, const Region& region, double T, double dt_ray) {
  RayOutcome out;
  if (region.dim() == 2) {
    // Corner hits have no specular continuation; tilt deterministically.
    for (int attempt = 1; hits_corner(ray, T, region.extents()); ++attempt) {
      if (attempt > 64) throw SolverError("gcc_check: could not re-sample a corner-hitting ray");
      const double tilt = 1e-3 * attempt;
      const double c = std::cos(tilt), s = std::sin(tilt);
      const Point d = ray.direction;
      ray.direction = {c * d[0] - s * d[1], s * d[0] + c * d[1]};
      out.resampled = true;
    }
  }
  out.ray = ray;
  const auto steps = static_cast<std::size_t>(std::floor(T / dt_ray + 1e-9));
  for (std::size_t k = 0; k <= steps; ++k) {
    const double t = static_cast<double>(k) * dt_ray;
    if (region.contains(trace(ray, t, region.dim(), region.extents()).position)) {
      out.hit = true;
      out.hit_time = t;
      return out;
    }
  }
  return out;
}

inline GccReport gcc_check(const Region& region, double T, const GccOptions& opt) {
  if (!(T > 0.0)) throw InvalidArgument("gcc_check: horizon must be positive");
  if (opt.n_rays < 1) throw InvalidArgument("gcc_check: need at least one ray");
  if (region.empty()) throw InvalidArgument("gcc_check: region is empty");
  if (!(opt.dt_ray > 0.0)) throw InvalidArgument("gcc_check: dt_ray must be positive");
  if (opt.dt_ray >= region.smallest_width())
    throw StepTooCoarse("gcc_check: dt_ray " + std::to_string(opt.dt_ray) +
                        " is not below the smallest region width " + std::to_string(region.smallest_width()));

  const auto rays = ray_lattice(region, opt);
  std::vector<RayOutcome> outcomes(rays.size());
  parallel_for(rays.size(), [&](std::size_t i) { outcomes[i] = trace_until_hit(rays[i], region, T, opt.dt_ray); });

  GccReport rep;
  rep.horizon = T;
  rep.dt_ray = opt.dt_ray;
  rep.rays_total = rays.size();
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const auto& o = outcomes[i];
    if (o.resampled) ++rep.corner_resamples;
    if (o.hit) {
      ++rep.rays_hit;
      if (!(rep.min_hit_time <= o.hit_time)) rep.min_hit_time = o.hit_time;
      if (!(rep.max_hit_time_among_hitters >= o.hit_time)) rep.max_hit_time_among_hitters = o.hit_time;
    } else if (!rep.worst_ray) {
      rep.worst_ray = o.ray;
    }
  }
  rep.pass = rep.rays_hit == rep.rays_total;
  return rep;
}

/// Worst hitting time of a single interval (a, b) in [0, L]: 2 max(a, L - b).
inline double interval_gcc_time(double a, double b, double length) { return 2.0 * std::max(a, length - b); }

}  // namespace cascade_lab
