#pragma once

#include <cstddef>

#include "temploc/geometry.hpp"

namespace temploc {

/// One LiDAR scan. `gt_global[i]` is the world position of `local_points[i]`.
struct ScanFrame {
  std::size_t index = 0;
  PointCloud local_points;
  PointCloud gt_global;
  Se3Pose gt_pose;

  bool has_ground_truth() const { return gt_global.size() == local_points.size(); }
};

}  // namespace temploc
