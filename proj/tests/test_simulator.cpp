#include <gtest/gtest.h>

#include "temploc/simulator.hpp"
#include "test_support.hpp"

using namespace temploc;
using namespace testing_support;

namespace {

bool on_box_surface(const Point3& p, const Building& b, double tol) {
  const bool in_x = p.x() >= b.lo.x() - tol && p.x() <= b.hi.x() + tol;
  const bool in_y = p.y() >= b.lo.y() - tol && p.y() <= b.hi.y() + tol;
  const bool in_z = p.z() >= b.lo.z() - tol && p.z() <= b.hi.z() + tol;
  if (!(in_x && in_y && in_z)) return false;
  return std::abs(p.x() - b.lo.x()) <= tol || std::abs(p.x() - b.hi.x()) <= tol || std::abs(p.y() - b.lo.y()) <= tol ||
         std::abs(p.y() - b.hi.y()) <= tol;
}

}  // namespace

TEST(World, Deterministic) {
  WorldConfig cfg;
  auto a = generate_world(cfg, 3), b = generate_world(cfg, 3), c = generate_world(cfg, 4);
  EXPECT_EQ(a.points, b.points);
  EXPECT_EQ(a.stable, b.stable);
  EXPECT_NE(a.points, c.points);
}

TEST(World, WallsOnBoxSurfaces) {
  WorldConfig cfg;
  auto w = generate_world(cfg, 5);
  const std::size_t clutter_start = w.points.size() - static_cast<std::size_t>(cfg.clutter_pool);
  ASSERT_GT(clutter_start, w.ground_count);
  for (std::size_t i = w.ground_count; i < clutter_start; ++i) {
    bool hit = false;
    for (const auto& b : w.buildings) hit = hit || on_box_surface(w.points[i], b, 1e-12);
    ASSERT_TRUE(hit) << "wall point " << i;
  }
  for (std::size_t i = clutter_start; i < w.points.size(); ++i) EXPECT_FALSE(w.stable[i]);
}

TEST(World, GroundDensity) {
  WorldConfig cfg;
  auto w = generate_world(cfg, 6);
  const double expected = cfg.ground_density * 4.0 * cfg.extent * cfg.extent;
  std::size_t ground = 0;
  for (std::size_t i = 0; i < w.points.size(); ++i)
    if (w.stable[i] && w.points[i].z() == 0.0) ++ground;
  // walls contribute points at z = 0 with probability zero
  EXPECT_NEAR(static_cast<double>(ground), expected, 0.05 * expected);
}

TEST(World, Validation) {
  WorldConfig cfg;
  cfg.clutter_fraction = 1.0;
  EXPECT_THROW(generate_world(cfg, 1), Error);
  cfg = {};
  cfg.extent = 0;
  EXPECT_THROW(generate_world(cfg, 1), Error);
}

TEST(Trajectory, StraightLineWithoutTurning) {
  TrajectoryConfig cfg;
  cfg.turn_rate_deg = 0;
  cfg.heading_noise_deg = 0;
  auto poses = generate_trajectory(cfg, 1);
  for (const auto& p : poses) {
    EXPECT_EQ(p.rotation, poses[0].rotation);
    EXPECT_EQ(p.translation.y(), cfg.start_y);
  }
}

TEST(Trajectory, ValidPosesAndConstantStep) {
  TrajectoryConfig cfg;
  cfg.step = 1.7;
  auto poses = generate_trajectory(cfg, 2);
  ASSERT_EQ(poses.size(), static_cast<std::size_t>(cfg.n_frames));
  for (std::size_t i = 0; i < poses.size(); ++i) {
    EXPECT_TRUE(poses[i].is_valid());
    EXPECT_EQ(poses[i].translation.z(), cfg.height);
    if (i > 0) { EXPECT_NEAR((poses[i].translation - poses[i - 1].translation).norm(), cfg.step, 1e-9); }
  }
}

TEST(Trajectory, Validation) {
  TrajectoryConfig cfg;
  cfg.n_frames = 1;
  EXPECT_THROW(generate_trajectory(cfg, 1), Error);
  cfg = {};
  cfg.step = 0;
  EXPECT_THROW(generate_trajectory(cfg, 1), Error);
}

TEST(RenderScan, NoiselessFrameInvariantAndRange) {
  WorldConfig wc;
  SensorConfig sc;
  auto world = generate_world(wc, 7);
  auto poses = generate_trajectory(TrajectoryConfig{}, 7);
  for (std::size_t t = 0; t < 10; ++t) {
    auto f = render_scan(world, poses[t], sc, t, 7);
    ASSERT_EQ(f.local_points.size(), f.gt_global.size());
    EXPECT_LE(f.local_points.size(), static_cast<std::size_t>(sc.points_per_scan));
    EXPECT_EQ(apply_pose(f.gt_pose, f.local_points), f.gt_global);
    for (const auto& g : f.gt_global) EXPECT_LE((g - poses[t].translation).norm(), sc.max_range + 1e-9);
  }
}

TEST(RenderScan, NoisyFrameWithinFourSigma) {
  WorldConfig wc;
  SensorConfig sc;
  sc.scan_noise_sigma = 0.05;
  auto world = generate_world(wc, 8);
  auto poses = generate_trajectory(TrajectoryConfig{}, 8);
  std::size_t total = 0, outside = 0;
  for (std::size_t t = 0; t < 30; ++t) {
    auto f = render_scan(world, poses[t], sc, t, 8);
    auto mapped = apply_pose(f.gt_pose, f.local_points);
    for (std::size_t i = 0; i < mapped.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        ++total;
        if (std::abs(mapped[i][c] - f.gt_global[i][c]) > 4 * sc.scan_noise_sigma) ++outside;
      }
  }
  EXPECT_LE(static_cast<double>(outside), 1e-4 * static_cast<double>(total) + 3.0);
}

TEST(RenderScan, DeterministicAndSeeded) {
  WorldConfig wc;
  SensorConfig sc;
  auto world = generate_world(wc, 9);
  auto pose = generate_trajectory(TrajectoryConfig{}, 9)[3];
  auto a = render_scan(world, pose, sc, 3, 9), b = render_scan(world, pose, sc, 3, 9);
  EXPECT_EQ(a.local_points, b.local_points);
  EXPECT_EQ(a.gt_global, b.gt_global);
}

TEST(RenderScan, EmptyScanOutOfRange) {
  WorldConfig wc;
  auto world = generate_world(wc, 10);
  Se3Pose far;
  far.translation = Point3(1e6, 0, 0);
  try {
    render_scan(world, far, SensorConfig{}, 0, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::EmptyScan);
  }
}

TEST(RenderScan, ClutterFractionOfBudget) {
  WorldConfig wc;
  SensorConfig sc;
  auto world = generate_world(wc, 11);
  auto pose = generate_trajectory(TrajectoryConfig{}, 11)[0];
  auto f = render_scan(world, pose, sc, 0, 11);
  EXPECT_EQ(f.local_points.size(), static_cast<std::size_t>(sc.points_per_scan));
}

TEST(Sequence, ConsecutiveFramesShareStableStructure) {
  WorldConfig wc;
  TrajectoryConfig tc;
  SensorConfig sc;
  ASSERT_LE(tc.step, sc.max_range / 4);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    auto frames = simulate_sequence(wc, tc, sc, seed);
    ASSERT_EQ(frames.size(), static_cast<std::size_t>(tc.n_frames));
    const auto n_clutter = static_cast<std::size_t>(std::llround(wc.clutter_fraction * sc.points_per_scan));
    for (std::size_t t = 0; t + 1 < frames.size(); ++t) {
      // stable points precede the clutter block
      const std::size_t n_stable = frames[t].gt_global.size() - n_clutter;
      const KdTree next(frames[t + 1].gt_global);
      std::size_t shared = 0;
      for (std::size_t i = 0; i < n_stable; ++i)
        if (next.knn(frames[t].gt_global[i], 1).distances[0] <= 1e-9) ++shared;
      EXPECT_GE(2 * shared, n_stable) << "frames " << t << "," << t + 1;
    }
  }
}

TEST(Sequence, PureFunctionOfSeed) {
  WorldConfig wc;
  TrajectoryConfig tc;
  tc.n_frames = 5;
  SensorConfig sc;
  auto a = simulate_sequence(wc, tc, sc, 4), b = simulate_sequence(wc, tc, sc, 4);
  for (std::size_t t = 0; t < a.size(); ++t) {
    EXPECT_EQ(a[t].local_points, b[t].local_points);
    EXPECT_EQ(a[t].gt_pose.rotation, b[t].gt_pose.rotation);
  }
}
