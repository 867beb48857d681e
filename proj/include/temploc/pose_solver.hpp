#pragma once

// RANSAC over 3D-3D correspondences with Kabsch refinement, and the
// trajectory error metrics.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "temploc/error.hpp"
#include "temploc/geometry.hpp"
#include "temploc/parallel.hpp"
#include "temploc/random.hpp"

namespace temploc {

struct CorrespondenceSet {
  PointCloud local;
  PointCloud global;
  std::vector<double> uncertainty;  // may be empty when unused

  std::size_t size() const { return local.size(); }

  void validate() const {
    require(local.size() == global.size(), Errc::ShapeMismatch, "correspondences: local/global length mismatch");
    require(uncertainty.empty() || uncertainty.size() == local.size(), Errc::ShapeMismatch,
            "correspondences: uncertainty length mismatch");
  }
};

struct RansacConfig {
  int iterations = 1000;
  double inlier_threshold = 0.5;
  int min_sample = 3;
  std::uint64_t seed = 0;
  std::optional<double> uncertainty_filter = 0.5;  // drop pairs with uncertainty above this
  bool refine_with_inliers = true;
  bool uncertainty_weighting = false;              // refine with weights (1 - u)

  void validate() const {
    require(iterations >= 1, Errc::InvalidConfig, "ransac.iterations must be at least 1");
    require(inlier_threshold > 0.0, Errc::InvalidConfig, "ransac.inlier_threshold must be positive");
    require(min_sample >= 3, Errc::InvalidConfig, "ransac.min_sample must be at least 3");
    if (uncertainty_filter)
      require(*uncertainty_filter >= 0.0 && *uncertainty_filter <= 1.0, Errc::InvalidConfig,
              "ransac.uncertainty_filter must lie in [0, 1]");
  }
};

struct PoseEstimate {
  Se3Pose pose;
  std::vector<bool> inlier_mask;  // over all input pairs; filtered pairs are false
  std::size_t inlier_count = 0;
  std::size_t hypothesis_inliers = 0;  // count of the best minimal-sample hypothesis
  int best_iteration = -1;
};

namespace detail {

inline std::size_t count_inliers(const Se3Pose& pose, const CorrespondenceSet& corr, std::span<const std::size_t> active,
                                 double threshold, std::vector<bool>* mask = nullptr) {
  std::size_t count = 0;
  for (auto i : active) {
    const bool in = distance(pose.apply(corr.local[i]), corr.global[i]) < threshold;
    if (in) ++count;
    if (mask) (*mask)[i] = in;
  }
  return count;
}

inline void draw_sample(Rng& rng, std::size_t n, std::size_t k, std::vector<std::size_t>& out) {
  out.clear();
  while (out.size() < k) {
    const std::size_t c = rng.index(n);
    if (std::find(out.begin(), out.end(), c) == out.end()) out.push_back(c);
  }
}

}  // namespace detail

/// Indices surviving the optional uncertainty pre-filter.
inline std::vector<std::size_t> active_pairs(const CorrespondenceSet& corr, const RansacConfig& cfg) {
  std::vector<std::size_t> active;
  active.reserve(corr.size());
  for (std::size_t i = 0; i < corr.size(); ++i) {
    if (cfg.uncertainty_filter && !corr.uncertainty.empty() && corr.uncertainty[i] > *cfg.uncertainty_filter) continue;
    active.push_back(i);
  }
  return active;
}

/// Iteration i samples with its own sub-seed, so hypotheses can be scored
/// in parallel; the winner is the most inliers, earliest iteration on ties.
inline PoseEstimate ransac_pose(const CorrespondenceSet& corr, const RansacConfig& cfg) {
  corr.validate();
  cfg.validate();
  const auto active = active_pairs(corr, cfg);
  const auto min_sample = static_cast<std::size_t>(cfg.min_sample);
  require(active.size() >= min_sample, Errc::InsufficientCorrespondences,
          "ransac: " + std::to_string(active.size()) + " pairs after filtering, need " + std::to_string(min_sample));

  const auto iters = static_cast<std::size_t>(cfg.iterations);
  std::vector<std::size_t> counts(iters, 0);
  std::vector<Se3Pose> poses(iters);
  parallel_for(iters, [&](std::size_t it) {
    Rng rng(mix_seed(cfg.seed ^ stream::kRansac, it));
    std::vector<std::size_t> pick;
    detail::draw_sample(rng, active.size(), min_sample, pick);
    PointCloud src;
    PointCloud dst;
    for (auto p : pick) {
      src.push_back(corr.local[active[p]]);
      dst.push_back(corr.global[active[p]]);
    }
    try {
      poses[it] = kabsch_align(src, dst);
    } catch (const Error&) {
      return;  // degenerate sample scores zero
    }
    counts[it] = detail::count_inliers(poses[it], corr, active, cfg.inlier_threshold);
  });

  std::size_t best = 0;
  for (std::size_t it = 1; it < iters; ++it)
    if (counts[it] > counts[best]) best = it;
  require(counts[best] >= min_sample, Errc::NoConsensus,
          "ransac: best hypothesis has " + std::to_string(counts[best]) + " inliers");

  PoseEstimate out;
  out.best_iteration = static_cast<int>(best);
  out.hypothesis_inliers = counts[best];
  out.pose = poses[best];
  out.inlier_mask.assign(corr.size(), false);
  out.inlier_count = detail::count_inliers(out.pose, corr, active, cfg.inlier_threshold, &out.inlier_mask);

  if (cfg.refine_with_inliers) {
    PointCloud src;
    PointCloud dst;
    std::vector<double> w;
    for (auto i : active) {
      if (!out.inlier_mask[i]) continue;
      src.push_back(corr.local[i]);
      dst.push_back(corr.global[i]);
      w.push_back(cfg.uncertainty_weighting && !corr.uncertainty.empty() ? 1.0 - corr.uncertainty[i] : 1.0);
    }
    try {
      out.pose = kabsch_align(src, dst, std::span<const double>(w));
      std::fill(out.inlier_mask.begin(), out.inlier_mask.end(), false);
      out.inlier_count = detail::count_inliers(out.pose, corr, active, cfg.inlier_threshold, &out.inlier_mask);
    } catch (const Error&) {
      // degenerate inlier set: keep the minimal-sample hypothesis
    }
  }
  return out;
}

struct PoseError {
  double translation_m = 0.0;
  double rotation_deg = 0.0;
};

inline PoseError evaluate_pose(const Se3Pose& pred, const Se3Pose& gt) {
  return {distance(pred.translation, gt.translation), rotation_angle_deg(pred.rotation * gt.rotation.transpose())};
}

struct ErrorSummary {
  double mean_t = 0.0;
  double mean_r = 0.0;
  double median_t = 0.0;
  double median_r = 0.0;
};

/// Means and lower-middle medians.
inline ErrorSummary aggregate_errors(std::span<const PoseError> per_frame) {
  require(!per_frame.empty(), Errc::EmptyInput, "aggregate_errors: no frames");
  std::vector<double> t;
  std::vector<double> r;
  for (const auto& e : per_frame) {
    t.push_back(e.translation_m);
    r.push_back(e.rotation_deg);
  }
  std::sort(t.begin(), t.end());
  std::sort(r.begin(), r.end());
  ErrorSummary s;
  // Summing sorted values makes the means permutation invariant bit for bit.
  for (double v : t) s.mean_t += v;
  for (double v : r) s.mean_r += v;
  s.mean_t /= static_cast<double>(t.size());
  s.mean_r /= static_cast<double>(r.size());
  const std::size_t mid = (t.size() - 1) / 2;
  s.median_t = t[mid];
  s.median_r = r[mid];
  return s;
}

}  // namespace temploc
