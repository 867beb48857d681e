#pragma once

// Prior coordinate generation: geometric descriptors, cosine-similarity
// attention, soft correspondences between consecutive scans, and
// inverse-distance propagation of world coordinates to the current scan.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include <numbers>

#include "temploc/error.hpp"
#include "temploc/gce.hpp"
#include "temploc/geometry.hpp"
#include "temploc/parallel.hpp"
#include "temploc/random.hpp"

namespace temploc {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr std::size_t kDescriptorDim = 8;

/// Per-point descriptors, one row per point.
struct FeatureMatrix {
  RowMatrix rows;
  std::size_t level = 1;

  std::size_t size() const { return static_cast<std::size_t>(rows.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(rows.cols()); }

  void validate() const {
    require(rows.allFinite(), Errc::ZeroFeatureRow, "non-finite feature entry");
    for (Eigen::Index i = 0; i < rows.rows(); ++i)
      require(rows.row(i).squaredNorm() > 0.0, Errc::ZeroFeatureRow, "feature row " + std::to_string(i) + " is zero");
  }
};

struct AttentionMatrix {
  RowMatrix weights;
  bool normalized = false;

  std::size_t rows() const { return static_cast<std::size_t>(weights.rows()); }
  std::size_t cols() const { return static_cast<std::size_t>(weights.cols()); }
};

namespace detail {

inline Eigen::RowVectorXd fallback_row(Eigen::Index dim, double dz = 0.0, double density = 0.0) {
  if (dim != static_cast<Eigen::Index>(kDescriptorDim)) return Eigen::RowVectorXd::Constant(dim, 1.0 / static_cast<double>(dim));
  Eigen::RowVectorXd r(kDescriptorDim);
  r << 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0, 1.0, dz, density;
  return r;
}

inline double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

inline RowMatrix unit_rows(const RowMatrix& f) {
  RowMatrix out = f;
  for (Eigen::Index i = 0; i < out.rows(); ++i) out.row(i) /= f.row(i).norm();
  return out;
}

/// exp-normalizes each row of `logits` in place, subtracting the row max.
inline void softmax_rows(RowMatrix& logits) {
  parallel_for(static_cast<std::size_t>(logits.rows()), [&](std::size_t r) {
    auto row = logits.row(static_cast<Eigen::Index>(r));
    const double mx = row.maxCoeff();
    double sum = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j) {
      row(j) = std::exp(row(j) - mx);
      sum += row(j);
    }
    row /= sum;
  });
}

}  // namespace detail

/// Multi-scale covariance descriptors. Per level and point: normalized
/// eigenvalues (descending), linearity, planarity, sphericity, height above
/// the median z, and neighbor fraction.
inline std::vector<FeatureMatrix> extract_features(std::span<const Point3> cloud, std::span<const double> radii) {
  require(!cloud.empty(), Errc::EmptyCloud, "extract_features: empty cloud");
  require(!radii.empty(), Errc::BadRadii, "extract_features: no radii");
  for (std::size_t l = 0; l < radii.size(); ++l) {
    require(radii[l] > 0.0 && std::isfinite(radii[l]), Errc::BadRadii, "radii must be positive");
    if (l > 0) require(radii[l] > radii[l - 1], Errc::BadRadii, "radii must be strictly increasing");
  }
  const std::size_t n = cloud.size();
  const KdTree tree(PointCloud(cloud.begin(), cloud.end()));
  std::vector<double> zs(n);
  for (std::size_t i = 0; i < n; ++i) zs[i] = cloud[i].z();
  const double median_z = detail::lower_median(std::move(zs));

  std::vector<FeatureMatrix> levels;
  levels.reserve(radii.size());
  for (std::size_t l = 0; l < radii.size(); ++l) {
    FeatureMatrix fm;
    fm.level = l + 1;
    fm.rows.resize(static_cast<Eigen::Index>(n), kDescriptorDim);
    parallel_for(n, [&](std::size_t i) {
      const auto nbrs = tree.radius(cloud[i], radii[l]);
      const double dz = cloud[i].z() - median_z;
      const double density = static_cast<double>(nbrs.size()) / static_cast<double>(n);
      const auto row = static_cast<Eigen::Index>(i);
      if (nbrs.size() < 3) {
        fm.rows.row(row) = detail::fallback_row(kDescriptorDim, dz, density);
        return;
      }
      Point3 mean = Point3::Zero();
      for (auto j : nbrs) mean += cloud[j];
      mean /= static_cast<double>(nbrs.size());
      Mat3 cov = Mat3::Zero();
      for (auto j : nbrs) {
        const Point3 d = cloud[j] - mean;
        cov += d * d.transpose();
      }
      cov /= static_cast<double>(nbrs.size());
      const Eigen::SelfAdjointEigenSolver<Mat3> es(cov, Eigen::EigenvaluesOnly);
      // Eigen returns ascending eigenvalues.
      const double l1 = std::max(es.eigenvalues()(2), 0.0);
      const double l2 = std::max(es.eigenvalues()(1), 0.0);
      const double l3 = std::max(es.eigenvalues()(0), 0.0);
      const double sum = l1 + l2 + l3;
      if (!(l1 > 0.0) || !(sum > 0.0)) {
        fm.rows.row(row) = detail::fallback_row(kDescriptorDim, dz, density);
        return;
      }
      fm.rows.row(row) << l1 / sum, l2 / sum, l3 / sum, (l1 - l2) / l1, (l2 - l3) / l1, l3 / l1, dz, density;
    });
    levels.push_back(std::move(fm));
  }
  return levels;
}

/// Stand-in for a learned registration backbone: per-level random Fourier
/// features of each point's world position, so descriptor similarity decays
/// with spatial distance at the level's length scale. The projection is
/// fixed by `seed` (the "trained weights"); per-scan corruption is drawn
/// from `scan_seed`. A `mismatch_rate` fraction of points get unrelated
/// random descriptors.
struct SyntheticFeatureModel {
  std::size_t dim = 32;
  double noise = 0.05;
  double mismatch_rate = 0.0;
  std::uint64_t seed = 7;

  void validate() const {
    require(dim >= 2, Errc::InvalidConfig, "features.dim must be at least 2");
    require(noise >= 0.0, Errc::InvalidConfig, "features.noise must be nonnegative");
    require(mismatch_rate >= 0.0 && mismatch_rate <= 1.0, Errc::InvalidConfig,
            "features.mismatch_rate must lie in [0, 1]");
  }
};

inline std::vector<FeatureMatrix> synthetic_features(std::span<const Point3> world, std::span<const double> length_scales,
                                                     const SyntheticFeatureModel& model, std::uint64_t scan_seed) {
  require(!world.empty(), Errc::EmptyCloud, "synthetic_features: empty cloud");
  require(!length_scales.empty(), Errc::BadRadii, "synthetic_features: no levels");
  for (double s : length_scales) require(s > 0.0, Errc::BadRadii, "length scales must be positive");
  model.validate();
  const auto d = static_cast<Eigen::Index>(model.dim);
  const double amp = std::sqrt(2.0 / static_cast<double>(model.dim));
  std::vector<FeatureMatrix> levels;
  for (std::size_t l = 0; l < length_scales.size(); ++l) {
    Rng weights(mix_seed(model.seed, l));
    Eigen::Matrix<double, Eigen::Dynamic, 3> omega(d, 3);
    Eigen::VectorXd phase(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      const double o0 = weights.normal(1.0 / length_scales[l]);
      const double o1 = weights.normal(1.0 / length_scales[l]);
      const double o2 = weights.normal(1.0 / length_scales[l]);
      omega.row(k) << o0, o1, o2;
      phase(k) = weights.uniform(0.0, 2.0 * std::numbers::pi);
    }
    Rng corrupt(mix_seed(scan_seed, l));
    FeatureMatrix fm;
    fm.level = l + 1;
    fm.rows.resize(static_cast<Eigen::Index>(world.size()), d);
    for (std::size_t i = 0; i < world.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      const bool mismatch = corrupt.bernoulli(model.mismatch_rate);
      for (Eigen::Index k = 0; k < d; ++k) {
        const double v = mismatch ? corrupt.normal(amp) : amp * std::cos(omega.row(k).dot(world[i]) + phase(k));
        fm.rows(r, k) = v + corrupt.normal(model.noise * amp);
      }
      if (!(fm.rows.row(r).squaredNorm() > 0.0)) fm.rows.row(r) = detail::fallback_row(d);
    }
    levels.push_back(std::move(fm));
  }
  return levels;
}

/// Row-softmax of pairwise cosine similarities within one cloud.
inline AttentionMatrix self_attention(const FeatureMatrix& features) {
  features.validate();
  const RowMatrix u = detail::unit_rows(features.rows);
  AttentionMatrix a;
  a.weights = u * u.transpose();
  detail::softmax_rows(a.weights);
  a.normalized = true;
  return a;
}

/// Residual aggregation F + A F.
inline FeatureMatrix contextualize(const FeatureMatrix& features, const AttentionMatrix& attention) {
  require(attention.normalized, Errc::ShapeMismatch, "contextualize needs a row-normalized attention matrix");
  require(attention.rows() == features.size() && attention.cols() == features.size(), Errc::ShapeMismatch,
          "contextualize: attention must be N x N");
  FeatureMatrix out;
  out.level = features.level;
  out.rows = features.rows + attention.weights * features.rows;
  for (Eigen::Index i = 0; i < out.rows.rows(); ++i)
    if (!(out.rows.row(i).squaredNorm() > 0.0)) out.rows.row(i) = detail::fallback_row(out.rows.cols());
  return out;
}

/// Rows index the previous scan, columns the current scan.
inline AttentionMatrix cross_attention(const FeatureMatrix& feat_prev, const FeatureMatrix& feat_cur) {
  require(feat_prev.dim() == feat_cur.dim(), Errc::DimensionMismatch, "cross_attention: descriptor dims differ");
  feat_prev.validate();
  feat_cur.validate();
  AttentionMatrix a;
  a.weights = detail::unit_rows(feat_prev.rows) * detail::unit_rows(feat_cur.rows).transpose();
  detail::softmax_rows(a.weights);
  a.normalized = true;
  return a;
}

/// Hadamard product over levels. The result is not row-stochastic.
inline AttentionMatrix global_attention(std::span<const AttentionMatrix> levels) {
  require(!levels.empty(), Errc::EmptyLevelList, "global_attention: no levels");
  AttentionMatrix out;
  out.weights = levels[0].weights;
  for (std::size_t l = 1; l < levels.size(); ++l) {
    require(levels[l].rows() == out.rows() && levels[l].cols() == out.cols(), Errc::ShapeMismatch,
            "global_attention: level shapes differ");
    out.weights = out.weights.cwiseProduct(levels[l].weights);
  }
  out.normalized = levels.size() == 1 && levels[0].normalized;
  return out;
}

/// Row sums at or below this are treated as unmatched previous-scan points.
inline constexpr double kDegenerateRowSum = 1e-30;

struct SoftCorrespondences {
  PointCloud pseudo_points;       // current-scan local frame
  PointCloud inherited_world;     // world coordinate carried from the source point
  std::vector<double> inherited_uncertainty;
  std::vector<std::size_t> source_index;
  std::size_t dropped_rows = 0;

  std::size_t size() const { return pseudo_points.size(); }
};

/// Attention-weighted average of the current scan per previous-scan point.
/// Rows whose mass is <= kDegenerateRowSum are dropped and counted.
inline SoftCorrespondences soft_correspondences(const AttentionMatrix& a_global, std::span<const Point3> cloud_cur,
                                                std::span<const Point3> prev_world,
                                                std::span<const double> prev_uncertainty = {}) {
  require(a_global.cols() == cloud_cur.size(), Errc::ShapeMismatch, "soft_correspondences: column count != |current|");
  require(a_global.rows() == prev_world.size(), Errc::ShapeMismatch, "soft_correspondences: row count != |previous|");
  require(prev_uncertainty.empty() || prev_uncertainty.size() == prev_world.size(), Errc::ShapeMismatch,
          "soft_correspondences: previous uncertainty length mismatch");
  const std::size_t rows = a_global.rows();
  std::vector<Point3> pts(rows);
  std::vector<char> keep(rows, 0);
  parallel_for(rows, [&](std::size_t i) {
    const auto row = a_global.weights.row(static_cast<Eigen::Index>(i));
    double sum = 0.0;
    for (Eigen::Index j = 0; j < row.size(); ++j) sum += row(j);
    if (!(sum > kDegenerateRowSum)) return;
    Point3 acc = Point3::Zero();
    for (Eigen::Index j = 0; j < row.size(); ++j) acc += (row(j) / sum) * cloud_cur[static_cast<std::size_t>(j)];
    pts[i] = acc;
    keep[i] = 1;
  });
  SoftCorrespondences out;
  for (std::size_t i = 0; i < rows; ++i) {
    if (!keep[i]) {
      ++out.dropped_rows;
      continue;
    }
    out.pseudo_points.push_back(pts[i]);
    out.inherited_world.push_back(prev_world[i]);
    out.inherited_uncertainty.push_back(prev_uncertainty.empty() ? 0.0 : prev_uncertainty[i]);
    out.source_index.push_back(i);
  }
  return out;
}

struct PropagationNeighbors {
  std::vector<std::size_t> neighbor_indices;
  std::vector<double> distances;
  std::vector<double> weights;
};

/// Inverse-distance weights over the k nearest pseudo-points. A coincident
/// neighbor takes all the weight (the first one in (distance, index) order).
inline PropagationNeighbors propagation_neighbors(const Point3& query, const KdTree& pseudo_index, std::size_t k) {
  auto knn = pseudo_index.knn(query, k);
  PropagationNeighbors out;
  out.weights.assign(knn.indices.size(), 0.0);
  if (knn.distances.front() == 0.0) {
    out.weights.front() = 1.0;
  } else {
    double total = 0.0;
    for (double d : knn.distances) total += 1.0 / d;
    for (std::size_t l = 0; l < knn.distances.size(); ++l) out.weights[l] = (1.0 / knn.distances[l]) / total;
  }
  out.neighbor_indices = std::move(knn.indices);
  out.distances = std::move(knn.distances);
  return out;
}

struct PropagationOptions {
  std::size_t k = 3;
  double gamma = 0.5;    // extrapolation penalty on the prior uncertainty
  double r_max = 2.0;    // distance scale for that penalty (largest feature radius)
};

/// Prior world coordinates for every current point (role = Prior).
/// Uncertainty: clamp(sum_l w_l u_src(l) + gamma * mean_l d_l / r_max, 0, 1).
inline UncertainCoords propagate_coordinates(std::span<const Point3> cloud_cur, const SoftCorrespondences& corr,
                                             const PropagationOptions& opt = {}) {
  require(corr.size() > 0, Errc::EmptyCorrespondences, "propagate_coordinates: no correspondences");
  require(opt.k >= 1 && opt.k <= corr.size(), Errc::BadK, "propagate_coordinates: k must be in [1, |corr|]");
  require(opt.r_max > 0.0, Errc::InvalidConfig, "propagate_coordinates: r_max must be positive");
  const KdTree index(corr.pseudo_points);
  PointCloud coords(cloud_cur.size());
  std::vector<double> unc(cloud_cur.size());
  parallel_for(cloud_cur.size(), [&](std::size_t j) {
    const auto nb = propagation_neighbors(cloud_cur[j], index, opt.k);
    Point3 p = Point3::Zero();
    double u = 0.0;
    double dsum = 0.0;
    for (std::size_t l = 0; l < nb.weights.size(); ++l) {
      const std::size_t m = nb.neighbor_indices[l];
      p += nb.weights[l] * corr.inherited_world[m];
      u += nb.weights[l] * corr.inherited_uncertainty[m];
      dsum += nb.distances[l];
    }
    const double mean_d = dsum / static_cast<double>(nb.distances.size());
    coords[j] = p;
    unc[j] = std::clamp(u + opt.gamma * mean_d / opt.r_max, 0.0, 1.0);
  });
  return UncertainCoords(std::move(coords), std::move(unc), CoordRole::Prior);
}

inline LossValue pcg_losses(const UncertainCoords& prior, std::span<const Point3> gt_coords, double tau) {
  require(prior.size() == gt_coords.size(), Errc::ShapeMismatch, "pcg_losses: length mismatch");
  return supervised_loss(prior, gt_coords, tau);
}

}  // namespace temploc
