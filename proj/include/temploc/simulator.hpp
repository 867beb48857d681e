#pragma once

// Synthetic world, trajectory, and scan generation with exact ground truth.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <numeric>
#include <vector>

#include "temploc/error.hpp"
#include "temploc/geometry.hpp"
#include "temploc/random.hpp"
#include "temploc/scan_frame.hpp"

namespace temploc {

struct WorldConfig {
  double extent = 60.0;  // half-width of the square world
  int n_buildings = 30;
  double building_size_min = 3.0;
  double building_size_max = 12.0;
  double building_height_min = 3.0;
  double building_height_max = 15.0;
  double ground_density = 0.5;  // points per m^2
  double wall_density = 2.0;    // points per m^2
  double clutter_fraction = 0.2;
  int clutter_pool = 400;  // anchor points for transient objects

  void validate() const {
    require(extent > 0.0, Errc::InvalidConfig, "world.extent must be positive");
    require(n_buildings >= 0, Errc::InvalidConfig, "world.n_buildings must be nonnegative");
    require(building_size_min > 0.0 && building_size_max >= building_size_min, Errc::InvalidConfig,
            "world.building_size range invalid");
    require(building_height_min > 0.0 && building_height_max >= building_height_min, Errc::InvalidConfig,
            "world.building_height range invalid");
    require(ground_density > 0.0 && wall_density > 0.0, Errc::InvalidConfig, "world densities must be positive");
    require(clutter_fraction >= 0.0 && clutter_fraction < 1.0, Errc::InvalidConfig,
            "world.clutter_fraction must lie in [0, 1)");
    require(clutter_pool >= 1, Errc::InvalidConfig, "world.clutter_pool must be at least 1");
  }
};

struct Building {
  Point3 lo;
  Point3 hi;
};

struct World {
  PointCloud points;
  std::vector<bool> stable;  // false for transient clutter anchors
  std::vector<Building> buildings;
  double clutter_fraction = 0.0;
  std::size_t ground_count = 0;
};

inline World generate_world(const WorldConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, stream::kWorld));
  World w;
  w.clutter_fraction = cfg.clutter_fraction;
  const double side = 2.0 * cfg.extent;
  const auto n_ground = static_cast<std::size_t>(std::llround(cfg.ground_density * side * side));
  for (std::size_t i = 0; i < n_ground; ++i) {
    w.points.emplace_back(rng.uniform(-cfg.extent, cfg.extent), rng.uniform(-cfg.extent, cfg.extent), 0.0);
    w.stable.push_back(true);
  }
  w.ground_count = n_ground;

  for (int b = 0; b < cfg.n_buildings; ++b) {
    const double sx = rng.uniform(cfg.building_size_min, cfg.building_size_max);
    const double sy = rng.uniform(cfg.building_size_min, cfg.building_size_max);
    const double h = rng.uniform(cfg.building_height_min, cfg.building_height_max);
    const double cx = rng.uniform(-cfg.extent + sx / 2, cfg.extent - sx / 2);
    const double cy = rng.uniform(-cfg.extent + sy / 2, cfg.extent - sy / 2);
    const Building box{{cx - sx / 2, cy - sy / 2, 0.0}, {cx + sx / 2, cy + sy / 2, h}};
    w.buildings.push_back(box);
    // Four vertical faces: two at fixed x, two at fixed y.
    for (int face = 0; face < 4; ++face) {
      const bool fixed_x = face < 2;
      const double width = fixed_x ? sy : sx;
      const auto count = static_cast<std::size_t>(std::llround(cfg.wall_density * width * h));
      for (std::size_t i = 0; i < count; ++i) {
        const double s = rng.uniform();
        const double z = rng.uniform(0.0, h);
        Point3 p;
        if (fixed_x) p = {face == 0 ? box.lo.x() : box.hi.x(), box.lo.y() + s * sy, z};
        else p = {box.lo.x() + s * sx, face == 2 ? box.lo.y() : box.hi.y(), z};
        w.points.push_back(p);
        w.stable.push_back(true);
      }
    }
  }

  for (int i = 0; i < cfg.clutter_pool; ++i) {
    w.points.emplace_back(rng.uniform(-cfg.extent, cfg.extent), rng.uniform(-cfg.extent, cfg.extent),
                          rng.uniform(0.0, 2.0));
    w.stable.push_back(false);
  }
  return w;
}

struct TrajectoryConfig {
  int n_frames = 100;
  double step = 1.0;
  double turn_rate_deg = 3.6;
  double heading_noise_deg = 0.5;
  double start_x = 0.0;
  double start_y = -16.0;
  double height = 1.8;

  void validate() const {
    require(n_frames >= 2, Errc::InvalidConfig, "trajectory.n_frames must be at least 2");
    require(step > 0.0, Errc::InvalidConfig, "trajectory.step must be positive");
    require(heading_noise_deg >= 0.0, Errc::InvalidConfig, "trajectory.heading_noise_deg must be nonnegative");
  }
};

/// Planar path: heading integrates turn_rate plus Gaussian heading noise;
/// each frame advances `step` along the current heading.
inline std::vector<Se3Pose> generate_trajectory(const TrajectoryConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(mix_seed(seed, stream::kTrajectory));
  std::vector<Se3Pose> poses;
  poses.reserve(static_cast<std::size_t>(cfg.n_frames));
  double heading = 0.0;
  Point3 pos(cfg.start_x, cfg.start_y, cfg.height);
  for (int t = 0; t < cfg.n_frames; ++t) {
    if (t > 0) {
      heading += cfg.turn_rate_deg + rng.normal(cfg.heading_noise_deg);
      const double a = heading * std::numbers::pi / 180.0;
      pos += cfg.step * Point3(std::cos(a), std::sin(a), 0.0);
    }
    Se3Pose p;
    p.rotation = rot_z(heading);
    p.translation = pos;
    poses.push_back(p);
  }
  return poses;
}

struct SensorConfig {
  double max_range = 30.0;
  int points_per_scan = 400;
  double scan_noise_sigma = 0.0;

  void validate() const {
    require(max_range > 0.0, Errc::InvalidConfig, "sensor.max_range must be positive");
    require(points_per_scan >= 10, Errc::InvalidConfig, "sensor.points_per_scan must be at least 10");
    require(scan_noise_sigma >= 0.0, Errc::InvalidConfig, "sensor.scan_noise_sigma must be nonnegative");
  }
};

/// Range-ball scan without occlusion. Stable points are subsampled to fill
/// (1 - clutter_fraction) of the budget; the rest are transient points
/// scattered around clutter anchors afresh every frame. With zero scan
/// noise, gt_global is recomputed from the local points so the pose maps
/// one onto the other exactly.
inline ScanFrame render_scan(const World& world, const Se3Pose& pose, const SensorConfig& sensor,
                             std::size_t frame_index, std::uint64_t seed) {
  sensor.validate();
  require(!world.points.empty(), Errc::EmptyScan, "render_scan: empty world");
  Rng rng(mix_seed(seed ^ stream::kScan, frame_index));
  const Point3 origin = pose.translation;

  std::vector<std::size_t> stable_in;
  std::vector<std::size_t> anchors_in;
  for (std::size_t i = 0; i < world.points.size(); ++i) {
    if (distance(world.points[i], origin) > sensor.max_range) continue;
    (world.stable[i] ? stable_in : anchors_in).push_back(i);
  }
  require(!stable_in.empty() || !anchors_in.empty(), Errc::EmptyScan, "render_scan: no world point within range");

  const auto budget = static_cast<std::size_t>(sensor.points_per_scan);
  const auto n_clutter = anchors_in.empty() ? std::size_t{0}
                                            : static_cast<std::size_t>(std::llround(world.clutter_fraction * budget));
  const std::size_t n_stable = std::min(stable_in.size(), budget - n_clutter);

  // Seeded draw without replacement. Priorities depend only on the world
  // point, so consecutive scans keep sampling the same structure.
  std::vector<std::pair<std::uint64_t, std::size_t>> ranked;
  ranked.reserve(stable_in.size());
  for (auto i : stable_in) ranked.emplace_back(mix_seed(seed ^ stream::kScan, i + 0x5bd1e995ULL), i);
  std::partial_sort(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n_stable), ranked.end());
  stable_in.resize(n_stable);
  for (std::size_t i = 0; i < n_stable; ++i) stable_in[i] = ranked[i].second;
  std::sort(stable_in.begin(), stable_in.end());

  ScanFrame f;
  f.index = frame_index;
  f.gt_pose = pose;
  for (auto i : stable_in) f.gt_global.push_back(world.points[i]);
  for (std::size_t c = 0; c < n_clutter; ++c) {
    const Point3& anchor = world.points[anchors_in[rng.index(anchors_in.size())]];
    Point3 p = anchor + Point3(rng.uniform(-1.5, 1.5), rng.uniform(-1.5, 1.5), rng.uniform(-0.5, 0.5));
    p.z() = std::max(p.z(), 0.0);
    // keep the scan inside the range ball
    if (distance(p, origin) > sensor.max_range) p = anchor;
    f.gt_global.push_back(p);
  }

  const Se3Pose inv = pose.inverse();
  f.local_points.reserve(f.gt_global.size());
  for (const auto& g : f.gt_global) {
    Point3 l = inv.apply(g);
    if (sensor.scan_noise_sigma > 0.0) {
      const double nx = rng.normal(sensor.scan_noise_sigma);
      const double ny = rng.normal(sensor.scan_noise_sigma);
      const double nz = rng.normal(sensor.scan_noise_sigma);
      l += Point3(nx, ny, nz);
    }
    f.local_points.push_back(l);
  }
  if (sensor.scan_noise_sigma == 0.0) f.gt_global = apply_pose(pose, f.local_points);
  return f;
}

inline std::vector<ScanFrame> simulate_sequence(const WorldConfig& wc, const TrajectoryConfig& tc,
                                                const SensorConfig& sc, std::uint64_t seed) {
  const World world = generate_world(wc, seed);
  const auto poses = generate_trajectory(tc, seed);
  std::vector<ScanFrame> frames;
  frames.reserve(poses.size());
  for (std::size_t t = 0; t < poses.size(); ++t) frames.push_back(render_scan(world, poses[t], sc, t, seed));
  return frames;
}

}  // namespace temploc
