#include <algorithm>
#include <array>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <tuple>

#include <gtest/gtest.h>

#include "cascade_lab/geometry.hpp"

using namespace cascade_lab;

TEST(Grid, UniformSubdivision1D) {
  const Grid g = build_grid({1.0}, {3});
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_DOUBLE_EQ(g.h[0], 0.25);
  EXPECT_DOUBLE_EQ(g.node(0)[0], 0.25);
  EXPECT_DOUBLE_EQ(g.node(1)[0], 0.5);
  EXPECT_DOUBLE_EQ(g.node(2)[0], 0.75);
}

TEST(Grid, Square) {
  const Grid g = build_grid({1.0, 1.0}, {4, 4});
  EXPECT_EQ(g.node_count(), 16u);
  EXPECT_DOUBLE_EQ(g.h[0], 0.2);
  EXPECT_DOUBLE_EQ(g.h[1], 0.2);
  // flat index i + nx j
  EXPECT_DOUBLE_EQ(g.node(5)[0], 0.4);
  EXPECT_DOUBLE_EQ(g.node(5)[1], 0.4);
  EXPECT_DOUBLE_EQ(g.cell_volume(), 0.04);
}

TEST(Grid, RejectsBadInput) {
  EXPECT_THROW(build_grid({1.0}, {1}), InvalidArgument);
  EXPECT_THROW(build_grid({0.0}, {5}), InvalidArgument);
  EXPECT_THROW(build_grid({-1.0}, {5}), InvalidArgument);
  EXPECT_THROW(build_grid({1.0, 1.0}, {5}), InvalidArgument);
  EXPECT_THROW(build_grid({1.0, 1.0, 1.0}, {5, 5, 5}), InvalidArgument);
}

TEST(Region, IndicatorExamples) {
  const Grid g = build_grid({1.0}, {3});
  const auto a = indicator_vector(interval(0.4, 0.6, 1.0), g);
  EXPECT_EQ(a.values, Eigen::Vector3d(0, 1, 0));
  EXPECT_FALSE(a.empty_support);

  const auto b = indicator_vector(interval(0.0, 1.0, 2.0), g);
  EXPECT_EQ(b.values, Eigen::Vector3d(2, 2, 2));

  const auto c = indicator_vector(interval(0.9, 0.95, 1.0), g);
  EXPECT_TRUE(c.values.isZero(0.0));
  EXPECT_TRUE(c.empty_support);
}

TEST(Region, ClipsToDomainAndValidates) {
  const Region r = interval(-0.5, 0.3, 1.0);
  EXPECT_DOUBLE_EQ(r.parts().front().lo[0], 0.0);
  EXPECT_DOUBLE_EQ(r.parts().front().hi[0], 0.3);
  EXPECT_THROW(interval(1.2, 1.5, 1.0), InvalidArgument);
  EXPECT_THROW(interval(0.2, 0.4, -1.0), InvalidArgument);
  EXPECT_THROW(Region({}, 1, {1.0, 1.0}), InvalidArgument);
}

TEST(Region, FirstPartWinsOnOverlap) {
  Box a, b;
  a.lo = {0.2, 0};
  a.hi = {0.6, 1};
  a.amplitude = 2.0;
  b.lo = {0.4, 0};
  b.hi = {0.8, 1};
  b.amplitude = 5.0;
  const Region r({a, b}, 1, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(r.amplitude_at({0.5, 0}), 2.0);
  EXPECT_DOUBLE_EQ(r.amplitude_at({0.7, 0}), 5.0);
  EXPECT_DOUBLE_EQ(r.amplitude_at({0.9, 0}), 0.0);
  EXPECT_DOUBLE_EQ(r.max_amplitude(), 5.0);
  EXPECT_DOUBLE_EQ(r.min_amplitude(), 2.0);
  EXPECT_FALSE(r.is_full_domain_constant());
  EXPECT_TRUE(Region::full(build_grid({1.0}, {4}), 3.0).is_full_domain_constant());
}

// ---------------------------------------------------------------------------

TEST(Rays, FoldIsExact) {
  EXPECT_DOUBLE_EQ(detail::fold(0.3, 1.0).first, 0.3);
  EXPECT_DOUBLE_EQ(detail::fold(1.3, 1.0).first, 0.7);
  EXPECT_DOUBLE_EQ(detail::fold(1.3, 1.0).second, -1.0);
  EXPECT_DOUBLE_EQ(detail::fold(-0.25, 1.0).first, 0.25);
  EXPECT_DOUBLE_EQ(detail::fold(2.25, 1.0).first, 0.25);
}

TEST(Rays, DirectionNormPreserved) {
  RayState r{{0.123, 0.456}, {std::cos(0.7), std::sin(0.7)}, 0.0};
  for (int k = 0; k < 1000; ++k) {
    r = trace(r, 0.937, 2, {1.0, 1.3});
    ASSERT_NEAR(std::hypot(r.direction[0], r.direction[1]), 1.0, 1e-12);
    ASSERT_GE(r.position[0], 0.0);
    ASSERT_LE(r.position[0], 1.0);
    ASSERT_GE(r.position[1], 0.0);
    ASSERT_LE(r.position[1], 1.3);
  }
}

TEST(Rays, Reversibility) {
  const double dt_ray = 1e-3;
  for (double angle : {0.1, 0.7, 1.3, 2.9, 4.4}) {
    const RayState start{{0.31, 0.62}, {std::cos(angle), std::sin(angle)}, 0.0};
    RayState r = trace(start, 7.77, 2, {1.0, 1.0});
    r.direction = {-r.direction[0], -r.direction[1]};
    const RayState back = trace(r, 7.77, 2, {1.0, 1.0});
    EXPECT_LE(std::hypot(back.position[0] - start.position[0], back.position[1] - start.position[1]), 10 * dt_ray);
  }
}

TEST(Rays, CornerDetection) {
  const RayState diag{{0.5, 0.5}, {std::sqrt(0.5), std::sqrt(0.5)}, 0.0};
  EXPECT_TRUE(hits_corner(diag, 1.0, {1.0, 1.0}));
  const RayState off{{0.5, 0.3}, {std::sqrt(0.5), std::sqrt(0.5)}, 0.0};
  EXPECT_FALSE(hits_corner(off, 0.5, {1.0, 1.0}));
  const RayState axis{{0.5, 0.5}, {1.0, 0.0}, 0.0};
  EXPECT_FALSE(hits_corner(axis, 10.0, {1.0, 1.0}));
}

TEST(Gcc, Interval1DWorstTime) {
  GccOptions opt;
  opt.n_rays = 2000;
  opt.dt_ray = 1e-3;
  const auto rep = gcc_check(interval(0.4, 0.6, 1.0), 1.0, opt);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.rays_hit, rep.rays_total);
  EXPECT_NEAR(rep.max_hit_time_among_hitters, 0.8, 2 * opt.dt_ray);
  EXPECT_LE(rep.min_hit_time, rep.max_hit_time_among_hitters);
  EXPECT_FALSE(rep.worst_ray.has_value());
}

TEST(Gcc, OneDimensionalCompleteness) {
  GccOptions opt;
  opt.n_rays = 1000;
  opt.dt_ray = 1e-3;
  const std::array<std::tuple<double, double, double>, 4> cases{{{0.1, 0.3, 1.0}, {0.5, 0.9, 1.0}, {0.7, 1.2, 2.0}, {0.0, 0.2, 1.0}}};
  for (auto [a, b, L] : cases) {
    const Region r = interval(a, b, 1.0, L);
    const auto rep = gcc_check(r, 2.0 * L + 0.1, opt);
    ASSERT_TRUE(rep.pass);
    EXPECT_NEAR(rep.max_hit_time_among_hitters, interval_gcc_time(a, b, L), 2 * opt.dt_ray) << a << " " << b;
  }
}

TEST(Gcc, ShortHorizonFails1D) {
  GccOptions opt;
  opt.n_rays = 200;
  opt.dt_ray = 1e-3;
  const auto rep = gcc_check(interval(0.4, 0.6, 1.0), 0.5, opt);
  EXPECT_FALSE(rep.pass);
  ASSERT_TRUE(rep.worst_ray.has_value());
  EXPECT_LT(rep.rays_hit, rep.rays_total);
}

TEST(Gcc, VerticalStripFails) {
  Box strip;
  strip.lo = {0.4, 0.0};
  strip.hi = {0.6, 1.0};
  const Region r({strip}, 2, {1.0, 1.0});
  // The vertical ray at x = 0.1 keeps x fixed under top/bottom reflections.
  const auto single = trace_until_hit({{0.1, 0.5}, {0.0, 1.0}, 0.0}, r, 10.0, 0.01);
  EXPECT_FALSE(single.hit);

  GccOptions opt;
  opt.n_rays = 400;  // 16 directions x 5 x 5 positions: x = 0.1 is on the lattice
  opt.n_directions = 16;
  opt.dt_ray = 0.01;
  const auto lattice = ray_lattice(r, opt);
  const bool has_vertical_at_01 = std::any_of(lattice.begin(), lattice.end(), [](const RayState& s) {
    return std::abs(s.position[0] - 0.1) < 1e-12 && s.direction[0] == 0.0;
  });
  EXPECT_TRUE(has_vertical_at_01);
  const auto rep = gcc_check(r, 10.0, opt);
  EXPECT_FALSE(rep.pass);
  ASSERT_TRUE(rep.worst_ray.has_value());
  EXPECT_EQ(rep.worst_ray->direction[0], 0.0);
}

TEST(Gcc, AdjacentBandsPass) {
  Box left, bottom;
  left.lo = {0.0, 0.0};
  left.hi = {0.2, 1.0};
  bottom.lo = {0.0, 0.0};
  bottom.hi = {1.0, 0.2};
  const Region r({left, bottom}, 2, {1.0, 1.0});
  GccOptions opt;
  opt.n_rays = 4000;
  opt.n_directions = 16;
  opt.dt_ray = 0.01;
  const auto rep = gcc_check(r, 4.0, opt);
  EXPECT_TRUE(rep.pass);
  EXPECT_EQ(rep.rays_hit, rep.rays_total);
}

TEST(Gcc, MonotoneInHorizon) {
  Box left, bottom;
  left.lo = {0.0, 0.0};
  left.hi = {0.2, 1.0};
  bottom.lo = {0.0, 0.0};
  bottom.hi = {1.0, 0.2};
  const Region r({left, bottom}, 2, {1.0, 1.0});
  GccOptions opt;
  opt.n_rays = 1000;
  opt.n_directions = 12;
  opt.dt_ray = 0.01;
  bool passed = false;
  for (double T : {0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0}) {
    const auto rep = gcc_check(r, T, opt);
    if (passed) EXPECT_TRUE(rep.pass) << "T = " << T;
    passed = passed || rep.pass;
  }
  EXPECT_TRUE(passed);
}

TEST(Gcc, RejectsCoarseStepAndBadInput) {
  GccOptions opt;
  opt.dt_ray = 0.25;
  EXPECT_THROW(gcc_check(interval(0.4, 0.6, 1.0), 1.0, opt), StepTooCoarse);
  opt.dt_ray = 1e-3;
  EXPECT_THROW(gcc_check(interval(0.4, 0.6, 1.0), 0.0, opt), InvalidArgument);
  opt.n_rays = 0;
  EXPECT_THROW(gcc_check(interval(0.4, 0.6, 1.0), 1.0, opt), InvalidArgument);
}

TEST(Gcc, DirectionCountRoundsToMultipleOfFour) {
  Box strip;
  strip.lo = {0.4, 0.0};
  strip.hi = {0.6, 1.0};
  const Region r({strip}, 2, {1.0, 1.0});
  GccOptions opt;
  opt.n_rays = 90;
  opt.n_directions = 6;  // -> 8
  const auto rays = ray_lattice(r, opt);
  EXPECT_EQ(rays.size() % 8, 0u);
  for (const auto& s : rays) EXPECT_NEAR(std::hypot(s.direction[0], s.direction[1]), 1.0, 1e-12);
}

TEST(Gcc, DeterministicAcrossThreadCounts) {
  Box left;
  left.lo = {0.0, 0.0};
  left.hi = {0.3, 1.0};
  const Region r({left}, 2, {1.0, 1.0});
  GccOptions opt;
  opt.n_rays = 500;
  opt.dt_ray = 0.01;
  setenv("CASCADE_LAB_THREADS", "1", 1);
  const auto a = gcc_check(r, 1.5, opt);
  setenv("CASCADE_LAB_THREADS", "3", 1);
  const auto b = gcc_check(r, 1.5, opt);
  unsetenv("CASCADE_LAB_THREADS");
  EXPECT_EQ(a.rays_hit, b.rays_hit);
  EXPECT_EQ(a.max_hit_time_among_hitters, b.max_hit_time_among_hitters);
  EXPECT_EQ(a.corner_resamples, b.corner_resamples);
}
