#pragma once

// Frame-sequential relocalization: measurement, temporal prior, fusion,
// robust pose, and per-frame error bookkeeping.

#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "temploc/error.hpp"
#include "temploc/gce.hpp"
#include "temploc/geometry.hpp"
#include "temploc/pcg.hpp"
#include "temploc/pose_solver.hpp"
#include "temploc/random.hpp"
#include "temploc/scan_frame.hpp"
#include "temploc/ucf.hpp"

namespace temploc {

enum class Mode { MeasurementOnly, MeasurementConf, Full };
enum class PriorSource { Fused, Measurement };
enum class Predictor { Synthetic, File };
enum class FeatureBackbone { Geometric, Synthetic };

constexpr std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::MeasurementOnly: return "measurement_only";
    case Mode::MeasurementConf: return "measurement_conf";
    case Mode::Full: return "full";
  }
  return "?";
}

inline std::optional<Mode> parse_mode(std::string_view s) {
  if (s == "measurement_only") return Mode::MeasurementOnly;
  if (s == "measurement_conf") return Mode::MeasurementConf;
  if (s == "full") return Mode::Full;
  return std::nullopt;
}

constexpr std::string_view to_string(PriorSource p) { return p == PriorSource::Fused ? "fused" : "measurement"; }
constexpr std::string_view to_string(Predictor p) { return p == Predictor::Synthetic ? "synthetic" : "file"; }
constexpr std::string_view to_string(FeatureBackbone b) { return b == FeatureBackbone::Geometric ? "geometric" : "synthetic"; }

struct PipelineConfig {
  Mode mode = Mode::Full;
  double voxel_size = 0.25;
  int k_neighbors = 3;
  std::vector<double> feature_radii{0.5, 1.0, 2.0};
  FeatureBackbone backbone = FeatureBackbone::Geometric;
  SyntheticFeatureModel synthetic_features;
  double prior_gamma = 0.5;
  LossWeights loss_weights;
  TauSchedule tau_schedule;
  int loss_epoch = 0;
  RansacConfig ransac;
  NoiseModel noise;
  Predictor predictor = Predictor::Synthetic;
  PriorSource prior_source = PriorSource::Fused;

  void validate() const {
    require(voxel_size > 0.0, Errc::InvalidConfig, "voxel_size must be positive");
    require(k_neighbors >= 1, Errc::InvalidConfig, "k_neighbors must be at least 1");
    require(!feature_radii.empty(), Errc::InvalidConfig, "feature_radii must not be empty");
    for (std::size_t i = 0; i < feature_radii.size(); ++i) {
      require(feature_radii[i] > 0.0, Errc::InvalidConfig, "feature_radii must be positive");
      if (i > 0) require(feature_radii[i] > feature_radii[i - 1], Errc::InvalidConfig, "feature_radii must increase");
    }
    require(prior_gamma >= 0.0, Errc::InvalidConfig, "prior_gamma must be nonnegative");
    require(loss_epoch >= 0, Errc::InvalidConfig, "loss_epoch must be nonnegative");
    synthetic_features.validate();
    loss_weights.validate();
    tau_schedule.validate();
    ransac.validate();
    noise.validate();
  }
};

struct FrameRecord {
  std::size_t t = 0;
  bool failed = false;
  std::string failure;
  PoseError error{std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
  Se3Pose estimate;
  Se3Pose gt_pose;
  std::size_t inlier_count = 0;
  std::size_t dropped_rows = 0;
  std::size_t n_points = 0;
  bool has_prior = false;
};

/// Per-frame intermediates, kept for losses and per-point exports.
struct FrameOutput {
  PointCloud local;  // voxelized scan, sensor frame
  PointCloud gt;     // ground-truth world coordinates of `local`
  UncertainCoords measurement;
  std::optional<UncertainCoords> prior;
  UncertainCoords fused;
  PointCloud pseudo_points;  // soft correspondences of the previous scan, sensor frame
};

struct TrajectoryReport {
  std::vector<FrameRecord> per_frame;
  std::optional<ErrorSummary> aggregates;  // over frames that produced a pose
  std::size_t failed_frames = 0;
  std::uint64_t seed = 0;
};

struct PipelineResult {
  TrajectoryReport report;
  std::vector<FrameOutput> frames;
};

/// Externally supplied coordinate predictions, index-aligned with a scan's
/// raw points.
struct FilePrediction {
  PointCloud coords;
  std::vector<double> uncertainty;
};

namespace detail {

/// Voxel membership lists in (ix, iy, iz) order.
inline std::vector<std::vector<std::size_t>> voxel_groups(std::span<const Point3> cloud, double voxel_size) {
  require(voxel_size > 0.0, Errc::NonPositiveVoxel, "voxel size must be positive");
  std::map<std::array<std::int64_t, 3>, std::vector<std::size_t>> bins;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud[i];
    bins[{static_cast<std::int64_t>(std::floor(p.x() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.y() / voxel_size)),
          static_cast<std::int64_t>(std::floor(p.z() / voxel_size))}]
        .push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  out.reserve(bins.size());
  for (auto& [k, v] : bins) out.push_back(std::move(v));
  return out;
}

template <typename T>
std::vector<T> group_mean(const std::vector<std::vector<std::size_t>>& groups, std::span<const T> values) {
  std::vector<T> out;
  out.reserve(groups.size());
  for (const auto& g : groups) {
    T acc = values[g.front()];
    for (std::size_t i = 1; i < g.size(); ++i) acc = acc + values[g[i]];
    out.push_back(acc / static_cast<double>(g.size()));
  }
  return out;
}

inline void contextualize_levels(std::vector<FeatureMatrix>& levels) {
  for (auto& f : levels) f = contextualize(f, self_attention(f));
}

}  // namespace detail

/// Per-frame seeds derived from the run seed.
inline std::uint64_t predictor_seed(std::uint64_t seed, std::size_t t) { return mix_seed(seed ^ stream::kPredict, t); }
inline std::uint64_t ransac_seed(std::uint64_t seed, std::size_t t) { return mix_seed(seed ^ stream::kRansac, t); }
inline std::uint64_t feature_seed(std::uint64_t seed, std::size_t t) { return mix_seed(seed ^ stream::kFeatures, t); }

/// Frame-by-frame driver. Each call to step() consumes the next scan; the
/// output for frame t never depends on later frames.
class Relocalizer {
 public:
  Relocalizer(PipelineConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) { cfg_.validate(); }

  const PipelineConfig& config() const { return cfg_; }

  FrameRecord step(const ScanFrame& frame, FrameOutput* keep = nullptr,
                   const FilePrediction* file_pred = nullptr) {
    FrameRecord rec;
    rec.t = frame.index;
    rec.gt_pose = frame.gt_pose;

    const auto groups = detail::voxel_groups(frame.local_points, cfg_.voxel_size);
    FrameOutput out;
    out.local = detail::group_mean<Point3>(groups, frame.local_points);
    if (frame.has_ground_truth()) out.gt = detail::group_mean<Point3>(groups, frame.gt_global);
    rec.n_points = out.local.size();

    if (cfg_.predictor == Predictor::File) {
      require(file_pred != nullptr && file_pred->coords.size() == frame.local_points.size() &&
                  file_pred->uncertainty.size() == frame.local_points.size(),
              Errc::MissingGroundTruth, "file predictor: frame " + std::to_string(frame.index) + " has no predictions");
      out.measurement = UncertainCoords(detail::group_mean<Point3>(groups, file_pred->coords),
                                        detail::group_mean<double>(groups, file_pred->uncertainty));
    } else {
      ScanFrame vox{frame.index, out.local, out.gt, frame.gt_pose};
      out.measurement = synthetic_predict(vox, cfg_.noise, predictor_seed(seed_, frame.index));
    }

    std::vector<FeatureMatrix> features;
    const bool temporal = cfg_.mode == Mode::Full;
    if (temporal) {
      if (cfg_.backbone == FeatureBackbone::Geometric) {
        features = extract_features(out.local, cfg_.feature_radii);
      } else {
        require(out.gt.size() == out.local.size(), Errc::MissingGroundTruth,
                "synthetic feature backbone needs ground-truth coordinates");
        features = synthetic_features(out.gt, cfg_.feature_radii, cfg_.synthetic_features,
                                      feature_seed(seed_, frame.index));
      }
      detail::contextualize_levels(features);
    }

    out.fused = out.measurement;
    if (temporal && prev_) {
      const auto& prev_est = (cfg_.prior_source == PriorSource::Fused && !prev_failed_) ? prev_->fused : prev_->measurement;
      std::vector<AttentionMatrix> cross;
      cross.reserve(features.size());
      for (std::size_t l = 0; l < features.size(); ++l) cross.push_back(cross_attention(prev_features_[l], features[l]));
      const auto a_global = global_attention(cross);
      const auto corr = soft_correspondences(a_global, out.local, prev_est.coords(), prev_est.uncertainty());
      rec.dropped_rows = corr.dropped_rows;
      out.pseudo_points = corr.pseudo_points;
      const auto k = static_cast<std::size_t>(cfg_.k_neighbors);
      if (corr.size() >= k) {
        PropagationOptions opt{k, cfg_.prior_gamma, cfg_.feature_radii.back()};
        out.prior = propagate_coordinates(out.local, corr, opt);
        out.fused = fuse(*out.prior, out.measurement, fusion_weights(out.prior->uncertainty(), out.measurement.uncertainty()));
        rec.has_prior = true;
      }
    }

    RansacConfig rc = cfg_.ransac;
    rc.seed = ransac_seed(seed_ ^ cfg_.ransac.seed, frame.index);
    if (cfg_.mode == Mode::MeasurementOnly) rc.uncertainty_filter.reset();
    CorrespondenceSet cs{out.local, out.fused.coords(), out.fused.uncertainty()};
    try {
      const auto est = ransac_pose(cs, rc);
      rec.estimate = est.pose;
      rec.inlier_count = est.inlier_count;
      rec.error = evaluate_pose(est.pose, frame.gt_pose);
      prev_failed_ = false;
    } catch (const Error& e) {
      if (e.code() != Errc::NoConsensus && e.code() != Errc::InsufficientCorrespondences) throw;
      rec.failed = true;
      rec.failure = std::string(to_string(e.code()));
      prev_failed_ = true;
    }

    if (temporal) prev_features_ = std::move(features);
    prev_ = out;
    if (keep) *keep = std::move(out);
    return rec;
  }

 private:
  PipelineConfig cfg_;
  std::uint64_t seed_;
  std::optional<FrameOutput> prev_;
  std::vector<FeatureMatrix> prev_features_;
  bool prev_failed_ = false;
};

inline void finalize_report(TrajectoryReport& report) {
  std::vector<PoseError> ok;
  report.failed_frames = 0;
  for (const auto& r : report.per_frame) {
    if (r.failed) ++report.failed_frames;
    else ok.push_back(r.error);
  }
  report.aggregates.reset();
  if (!ok.empty()) report.aggregates = aggregate_errors(ok);
}

inline PipelineResult run_pipeline(std::span<const ScanFrame> frames, const PipelineConfig& cfg, std::uint64_t seed,
                                   std::span<const FilePrediction> predictions = {}, bool keep_outputs = true) {
  require(!frames.empty(), Errc::EmptyInput, "run_pipeline: no frames");
  for (std::size_t i = 1; i < frames.size(); ++i)
    require(frames[i].index > frames[i - 1].index, Errc::InvalidConfig, "run_pipeline: frames out of order");
  Relocalizer reloc(cfg, seed);
  PipelineResult res;
  res.report.seed = seed;
  for (std::size_t i = 0; i < frames.size(); ++i) {
    FrameOutput out;
    const FilePrediction* fp = predictions.empty() ? nullptr : &predictions[i];
    res.report.per_frame.push_back(reloc.step(frames[i], keep_outputs ? &out : nullptr, fp));
    if (keep_outputs) res.frames.push_back(std::move(out));
  }
  finalize_report(res.report);
  return res;
}

struct FrameLosses {
  std::size_t t = 0;
  double l_gce = 0.0;
  double l_pcg = 0.0;
  double l_fuse = 0.0;
  double l_full = 0.0;
};

/// Diagnostic losses for every frame that has a prior (full mode only).
inline std::vector<FrameLosses> compute_losses(const PipelineResult& res, const PipelineConfig& cfg) {
  require(cfg.mode == Mode::Full, Errc::MissingIntermediates, "compute_losses needs full-mode intermediates");
  const double tau = tau_at_epoch(cfg.tau_schedule, cfg.loss_epoch);
  std::vector<FrameLosses> out;
  for (std::size_t i = 0; i < res.frames.size(); ++i) {
    const auto& f = res.frames[i];
    if (!f.prior) continue;
    require(f.gt.size() == f.local.size(), Errc::MissingGroundTruth, "compute_losses: frame lacks ground truth");
    FrameLosses l;
    l.t = res.report.per_frame[i].t;
    const auto gce = supervised_loss(f.measurement, f.gt, tau);
    const auto pcg = pcg_losses(*f.prior, f.gt, tau);
    const auto fz = supervised_loss(f.fused, f.gt, tau);
    l.l_gce = gce.value;
    l.l_pcg = pcg.value;
    l.l_fuse = fz.value;
    l.l_full = loss_full(gce, pcg, fz, cfg.loss_weights);
    out.push_back(l);
  }
  require(!out.empty(), Errc::MissingIntermediates, "compute_losses: no frame carries a prior");
  return out;
}

}  // namespace temploc
