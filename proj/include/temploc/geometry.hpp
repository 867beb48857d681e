#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SVD>

#include "temploc/error.hpp"

namespace temploc {

using Point3 = Eigen::Vector3d;
using PointCloud = std::vector<Point3>;
using Mat3 = Eigen::Matrix3d;

/// Euclidean distance with a fixed evaluation order. Everything that ranks
/// points by distance goes through here so accelerated and brute-force
/// searches agree bit for bit.
inline double distance(const Point3& a, const Point3& b) {
  const double dx = a.x() - b.x();
  const double dy = a.y() - b.y();
  const double dz = a.z() - b.z();
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

inline bool is_finite(const Point3& p) {
  return std::isfinite(p.x()) && std::isfinite(p.y()) && std::isfinite(p.z());
}

/// Rigid transform p -> R p + t (sensor to world for scan poses).
struct Se3Pose {
  Mat3 rotation = Mat3::Identity();
  Point3 translation = Point3::Zero();

  static Se3Pose identity() { return {}; }

  Point3 apply(const Point3& p) const { return rotation * p + translation; }

  Se3Pose inverse() const {
    Se3Pose inv;
    inv.rotation = rotation.transpose();
    inv.translation = -(inv.rotation * translation);
    return inv;
  }

  /// (*this) after `rhs`: x -> this(rhs(x)).
  Se3Pose operator*(const Se3Pose& rhs) const {
    Se3Pose out;
    out.rotation = rotation * rhs.rotation;
    out.translation = rotation * rhs.translation + translation;
    return out;
  }

  bool is_valid(double tol = 1e-9) const {
    if (!rotation.allFinite() || !translation.allFinite()) return false;
    const Mat3 gram = rotation.transpose() * rotation;
    if ((gram - Mat3::Identity()).cwiseAbs().maxCoeff() > tol) return false;
    return std::abs(rotation.determinant() - 1.0) <= tol;
  }
};

inline Mat3 rot_x(double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  Mat3 r;
  r << 1, 0, 0, 0, std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a);
  return r;
}

inline Mat3 rot_y(double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  Mat3 r;
  r << std::cos(a), 0, std::sin(a), 0, 1, 0, -std::sin(a), 0, std::cos(a);
  return r;
}

inline Mat3 rot_z(double deg) {
  const double a = deg * std::numbers::pi / 180.0;
  Mat3 r;
  r << std::cos(a), -std::sin(a), 0, std::sin(a), std::cos(a), 0, 0, 0, 1;
  return r;
}

/// Rotation angle in degrees, in [0, 180]. Evaluated as
/// atan2(|skew part|, trace - 1), which equals
/// arccos(clamp((trace - 1) / 2)) for proper rotations but keeps full
/// precision near 0 and 180 degrees.
inline double rotation_angle_deg(const Mat3& r) {
  const double c = r.trace() - 1.0;
  const double sx = r(2, 1) - r(1, 2);
  const double sy = r(0, 2) - r(2, 0);
  const double sz = r(1, 0) - r(0, 1);
  const double s = std::sqrt(sx * sx + sy * sy + sz * sz);
  return std::atan2(s, c) * 180.0 / std::numbers::pi;
}

inline PointCloud apply_pose(const Se3Pose& pose, std::span<const Point3> cloud) {
  PointCloud out;
  out.reserve(cloud.size());
  for (const auto& p : cloud) out.push_back(pose.apply(p));
  return out;
}

/// One centroid per occupied voxel, ordered by (ix, iy, iz).
inline PointCloud voxel_downsample(std::span<const Point3> cloud, double voxel_size) {
  require(voxel_size > 0.0, Errc::NonPositiveVoxel, "voxel size must be positive");
  struct Acc {
    Point3 sum = Point3::Zero();
    std::size_t count = 0;
  };
  std::map<std::array<std::int64_t, 3>, Acc> bins;
  for (const auto& p : cloud) {
    const std::array<std::int64_t, 3> key{
        static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
    auto& acc = bins[key];
    acc.sum += p;
    ++acc.count;
  }
  PointCloud out;
  out.reserve(bins.size());
  for (const auto& [key, acc] : bins) out.push_back(acc.sum / static_cast<double>(acc.count));
  return out;
}

/// Voxel downsample that also averages an index-aligned companion cloud
/// (e.g. ground-truth world coordinates of the same points).
inline std::pair<PointCloud, PointCloud> voxel_downsample_paired(std::span<const Point3> cloud,
                                                                 std::span<const Point3> companion,
                                                                 double voxel_size) {
  require(voxel_size > 0.0, Errc::NonPositiveVoxel, "voxel size must be positive");
  require(cloud.size() == companion.size(), Errc::ShapeMismatch, "paired clouds differ in length");
  struct Acc {
    Point3 sum = Point3::Zero();
    Point3 other = Point3::Zero();
    std::size_t count = 0;
  };
  std::map<std::array<std::int64_t, 3>, Acc> bins;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    const std::array<std::int64_t, 3> key{
        static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
        static_cast<std::int64_t>(std::floor(p.z() / voxel_size))};
    auto& acc = bins[key];
    acc.sum += p;
    acc.other += companion[i];
    ++acc.count;
  }
  std::pair<PointCloud, PointCloud> out;
  out.first.reserve(bins.size());
  out.second.reserve(bins.size());
  for (const auto& [key, acc] : bins) {
    out.first.push_back(acc.sum / static_cast<double>(acc.count));
    out.second.push_back(acc.other / static_cast<double>(acc.count));
  }
  return out;
}

struct KnnResult {
  std::vector<std::size_t> indices;
  std::vector<double> distances;
};

/// Static 3-d tree for exact k-nearest and radius queries. Candidates are
/// ranked by (distance, index), which is also the brute-force order.
class KdTree {
 public:
  KdTree() = default;

  explicit KdTree(PointCloud points) : points_(std::move(points)) {
    order_.resize(points_.size());
    axes_.resize(points_.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    if (!points_.empty()) build(0, points_.size());
  }

  std::size_t size() const { return points_.size(); }
  const PointCloud& points() const { return points_; }

  KnnResult knn(const Point3& query, std::size_t k) const {
    require(!points_.empty(), Errc::EmptyReference, "knn reference cloud is empty");
    require(k >= 1, Errc::BadK, "k must be at least 1");
    k = std::min(k, points_.size());
    std::vector<Candidate> heap;
    heap.reserve(k + 1);
    search_knn(0, points_.size(), query, k, heap);
    std::sort(heap.begin(), heap.end());
    KnnResult out;
    out.indices.reserve(k);
    out.distances.reserve(k);
    for (const auto& c : heap) {
      out.indices.push_back(c.index);
      out.distances.push_back(c.dist);
    }
    return out;
  }

  /// Indices of all points with distance <= radius, ascending by index.
  std::vector<std::size_t> radius(const Point3& query, double r) const {
    std::vector<std::size_t> out;
    if (!points_.empty()) search_radius(0, points_.size(), query, r, out);
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  struct Candidate {
    double dist;
    std::size_t index;
    bool operator<(const Candidate& o) const { return dist < o.dist || (dist == o.dist && index < o.index); }
  };

  // Implicit tree over order_[lo, hi): the median element is the node.
  void build(std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) return;
    Point3 mn = points_[order_[lo]];
    Point3 mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      mn = mn.cwiseMin(points_[order_[i]]);
      mx = mx.cwiseMax(points_[order_[i]]);
    }
    Eigen::Index axis = 0;
    (mx - mn).maxCoeff(&axis);
    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(order_.begin() + lo, order_.begin() + mid, order_.begin() + hi,
                     [&](std::size_t a, std::size_t b) {
                       const double va = points_[a][axis];
                       const double vb = points_[b][axis];
                       return va < vb || (va == vb && a < b);
                     });
    axes_[mid] = static_cast<std::uint8_t>(axis);
    build(lo, mid);
    build(mid + 1, hi);
  }

  void search_knn(std::size_t lo, std::size_t hi, const Point3& q, std::size_t k,
                  std::vector<Candidate>& heap) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = order_[mid];
    const Candidate c{distance(q, points_[idx]), idx};
    if (heap.size() < k) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end());
    } else if (c < heap.front()) {
      std::pop_heap(heap.begin(), heap.end());
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end());
    }
    if (hi - lo == 1) return;
    const std::size_t axis = axes_[mid];
    const double diff = q[static_cast<Eigen::Index>(axis)] - points_[idx][static_cast<Eigen::Index>(axis)];
    const bool left_first = diff <= 0.0;
    if (left_first) search_knn(lo, mid, q, k, heap);
    else search_knn(mid + 1, hi, q, k, heap);
    // Visit the far side unless it provably cannot contain a point that
    // beats or ties the current worst candidate (slack covers sqrt rounding).
    if (heap.size() < k || std::abs(diff) <= heap.front().dist * (1.0 + 1e-12)) {
      if (left_first) search_knn(mid + 1, hi, q, k, heap);
      else search_knn(lo, mid, q, k, heap);
    }
  }

  void search_radius(std::size_t lo, std::size_t hi, const Point3& q, double r,
                     std::vector<std::size_t>& out) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = order_[mid];
    if (distance(q, points_[idx]) <= r) out.push_back(idx);
    if (hi - lo == 1) return;
    const auto axis = static_cast<Eigen::Index>(axes_[mid]);
    const double diff = q[axis] - points_[idx][axis];
    const double reach = r * (1.0 + 1e-12);
    if (diff <= reach) search_radius(lo, mid, q, r, out);
    if (diff >= -reach) search_radius(mid + 1, hi, q, r, out);
  }

  PointCloud points_;
  std::vector<std::size_t> order_;
  std::vector<std::uint8_t> axes_;
};

inline KnnResult knn_search(const Point3& query, std::span<const Point3> reference, std::size_t k) {
  require(!reference.empty(), Errc::EmptyReference, "knn reference cloud is empty");
  return KdTree(PointCloud(reference.begin(), reference.end())).knn(query, k);
}

/// Weighted least-squares rigid transform taking src onto dst.
inline Se3Pose kabsch_align(std::span<const Point3> src, std::span<const Point3> dst,
                            std::optional<std::span<const double>> weights = std::nullopt) {
  require(src.size() == dst.size(), Errc::ShapeMismatch, "kabsch: src and dst differ in length");
  require(src.size() >= 3, Errc::DegenerateConfiguration, "kabsch: fewer than 3 pairs");
  const std::size_t n = src.size();
  double wsum = 0.0;
  if (weights) {
    require(weights->size() == n, Errc::ShapeMismatch, "kabsch: weight count differs");
    for (double w : *weights) {
      require(w >= 0.0 && std::isfinite(w), Errc::DegenerateConfiguration, "kabsch: bad weight");
      wsum += w;
    }
    require(wsum > 0.0, Errc::DegenerateConfiguration, "kabsch: weights sum to zero");
  } else {
    wsum = static_cast<double>(n);
  }
  auto weight = [&](std::size_t i) { return weights ? (*weights)[i] : 1.0; };

  Point3 cs = Point3::Zero();
  Point3 cd = Point3::Zero();
  for (std::size_t i = 0; i < n; ++i) {
    cs += weight(i) * src[i];
    cd += weight(i) * dst[i];
  }
  cs /= wsum;
  cd /= wsum;

  Mat3 h = Mat3::Zero();
  double spread = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Point3 a = src[i] - cs;
    const Point3 b = dst[i] - cd;
    h += weight(i) * a * b.transpose();
    spread += weight(i) * (a.squaredNorm() + b.squaredNorm());
  }

  Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d s = svd.singularValues();
  // Rank < 2 leaves a free rotation about the dominant axis.
  require(spread > 0.0 && s(1) > 1e-12 * std::max(s(0), 1e-300) && s(1) > 1e-15 * spread,
          Errc::DegenerateConfiguration, "kabsch: rank-deficient cross-covariance");

  const Mat3 u = svd.matrixU();
  const Mat3 v = svd.matrixV();
  Mat3 d = Mat3::Identity();
  if ((v * u.transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  Se3Pose pose;
  pose.rotation = v * d * u.transpose();
  pose.translation = cd - pose.rotation * cs;
  return pose;
}

struct Aabb {
  Point3 lo;
  Point3 hi;

  bool contains(const Point3& p, double slack = 0.0) const {
    return (p.array() >= lo.array() - slack).all() && (p.array() <= hi.array() + slack).all();
  }
};

inline Aabb bounding_box(std::span<const Point3> cloud) {
  require(!cloud.empty(), Errc::EmptyCloud, "bounding box of empty cloud");
  Aabb box{cloud[0], cloud[0]};
  for (const auto& p : cloud) {
    box.lo = box.lo.cwiseMin(p);
    box.hi = box.hi.cwiseMax(p);
  }
  return box;
}

}  // namespace temploc
