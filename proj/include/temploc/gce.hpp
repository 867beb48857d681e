#pragma once

// Global coordinate estimation: the per-scan coordinate/uncertainty
// predictor surrogate, uncertainty labels, and the supervised losses.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "temploc/error.hpp"
#include "temploc/geometry.hpp"
#include "temploc/random.hpp"
#include "temploc/scan_frame.hpp"

namespace temploc {

enum class CoordRole { Measurement, Prior, Fused };

/// World coordinates with one uncertainty score per point, clamped to [0, 1].
class UncertainCoords {
 public:
  UncertainCoords() = default;

  UncertainCoords(PointCloud coords, std::vector<double> uncertainty, CoordRole role = CoordRole::Measurement)
      : coords_(std::move(coords)), uncertainty_(std::move(uncertainty)), role_(role) {
    require(coords_.size() == uncertainty_.size(), Errc::ShapeMismatch,
            "coords and uncertainty differ in length");
    for (auto& u : uncertainty_) {
      require(std::isfinite(u), Errc::ShapeMismatch, "non-finite uncertainty");
      u = std::clamp(u, 0.0, 1.0);
    }
  }

  std::size_t size() const { return coords_.size(); }
  const PointCloud& coords() const { return coords_; }
  const std::vector<double>& uncertainty() const { return uncertainty_; }
  CoordRole role() const { return role_; }

 private:
  PointCloud coords_;
  std::vector<double> uncertainty_;
  CoordRole role_ = CoordRole::Measurement;
};

struct TauSchedule {
  double tau0 = 1.0;
  double decay_factor = 0.7;
  int period_epochs = 6;

  void validate() const {
    require(tau0 > 0.0, Errc::InvalidConfig, "tau0 must be positive");
    require(decay_factor > 0.0 && decay_factor < 1.0, Errc::InvalidConfig, "decay_factor must lie in (0, 1)");
    require(period_epochs >= 1, Errc::InvalidConfig, "period_epochs must be at least 1");
  }
};

/// tau0 * decay^floor(epoch / period).
inline double tau_at_epoch(const TauSchedule& s, int epoch) {
  require(epoch >= 0, Errc::InvalidConfig, "epoch must be nonnegative");
  double tau = s.tau0;
  for (int i = 0; i < epoch / s.period_epochs; ++i) tau *= s.decay_factor;
  return tau;
}

inline double l1_distance(const Point3& a, const Point3& b) {
  return std::abs(a.x() - b.x()) + std::abs(a.y() - b.y()) + std::abs(a.z() - b.z());
}

/// 0 where the L1 error is strictly below tau, 1 otherwise.
inline std::vector<double> label_uncertainty(std::span<const Point3> pred, std::span<const Point3> gt, double tau) {
  require(pred.size() == gt.size(), Errc::ShapeMismatch, "label_uncertainty: length mismatch");
  require(tau > 0.0, Errc::InvalidConfig, "tau must be positive");
  std::vector<double> labels(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) labels[i] = l1_distance(pred[i], gt[i]) < tau ? 0.0 : 1.0;
  return labels;
}

struct LossValue {
  double value = 0.0;
  PointCloud grad_coords;
  std::vector<double> grad_uncertainty;
};

/// Mean squared error between predicted and target uncertainty.
inline LossValue loss_uncertainty(std::span<const double> pred_u, std::span<const double> gt_u) {
  require(pred_u.size() == gt_u.size(), Errc::ShapeMismatch, "loss_uncertainty: length mismatch");
  require(!pred_u.empty(), Errc::EmptyInput, "loss_uncertainty: no points");
  const double m = static_cast<double>(pred_u.size());
  LossValue out;
  out.grad_coords.assign(pred_u.size(), Point3::Zero());
  out.grad_uncertainty.resize(pred_u.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < pred_u.size(); ++i) {
    const double d = pred_u[i] - gt_u[i];
    sum += d * d;
    out.grad_uncertainty[i] = 2.0 * d / m;
  }
  out.value = sum / m;
  return out;
}

/// Mean L1 coordinate error. Subgradient uses sign(0) = 0.
inline LossValue loss_regression(std::span<const Point3> pred, std::span<const Point3> gt) {
  require(pred.size() == gt.size(), Errc::ShapeMismatch, "loss_regression: length mismatch");
  require(!pred.empty(), Errc::EmptyInput, "loss_regression: no points");
  const double m = static_cast<double>(pred.size());
  auto sign = [](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); };
  LossValue out;
  out.grad_coords.resize(pred.size());
  out.grad_uncertainty.assign(pred.size(), 0.0);
  double sum = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const Point3 d = pred[i] - gt[i];
    sum += l1_distance(pred[i], gt[i]);
    out.grad_coords[i] = Point3(sign(d.x()), sign(d.y()), sign(d.z())) / m;
  }
  out.value = sum / m;
  return out;
}

inline LossValue loss_gce(const LossValue& l_reg, const LossValue& l_un) {
  require(l_reg.grad_coords.size() == l_un.grad_coords.size() &&
              l_reg.grad_uncertainty.size() == l_un.grad_uncertainty.size(),
          Errc::ShapeMismatch, "loss_gce: gradient shapes differ");
  LossValue out;
  out.value = l_reg.value + l_un.value;
  out.grad_coords.resize(l_reg.grad_coords.size());
  out.grad_uncertainty.resize(l_reg.grad_uncertainty.size());
  for (std::size_t i = 0; i < out.grad_coords.size(); ++i)
    out.grad_coords[i] = l_reg.grad_coords[i] + l_un.grad_coords[i];
  for (std::size_t i = 0; i < out.grad_uncertainty.size(); ++i)
    out.grad_uncertainty[i] = l_reg.grad_uncertainty[i] + l_un.grad_uncertainty[i];
  return out;
}

/// Regression + uncertainty loss of one estimate against ground truth, with
/// labels derived from the estimate itself. Labels are held fixed when
/// differentiating (they are piecewise constant in the coordinates).
inline LossValue supervised_loss(const UncertainCoords& est, std::span<const Point3> gt, double tau) {
  const auto labels = label_uncertainty(est.coords(), gt, tau);
  return loss_gce(loss_regression(est.coords(), gt), loss_uncertainty(est.uncertainty(), labels));
}

/// Error characteristics of the synthetic coordinate predictor.
struct NoiseModel {
  double sigma = 0.3;
  double outlier_rate = 0.15;
  double outlier_offset = 2.0;
  double calibration = 0.9;

  void validate() const {
    require(sigma >= 0.0, Errc::InvalidConfig, "noise.sigma must be nonnegative");
    require(outlier_rate >= 0.0 && outlier_rate <= 1.0, Errc::InvalidConfig, "noise.outlier_rate must lie in [0, 1]");
    require(outlier_offset > 0.0, Errc::InvalidConfig, "noise.outlier_offset must be positive");
    require(calibration >= 0.0 && calibration <= 1.0, Errc::InvalidConfig, "noise.calibration must lie in [0, 1]");
  }
};

inline constexpr double kInlierScore = 0.1;
inline constexpr double kOutlierScore = 0.9;

/// Stand-in for a learned scene-coordinate regressor. Gross errors have a
/// uniformly random direction and magnitude in [outlier_offset, 2 outlier_offset).
inline UncertainCoords synthetic_predict(const ScanFrame& frame, const NoiseModel& noise, std::uint64_t seed) {
  require(frame.has_ground_truth(), Errc::MissingGroundTruth, "frame lacks ground-truth coordinates");
  Rng rng(seed);
  const std::size_t n = frame.gt_global.size();
  PointCloud coords(n);
  std::vector<double> unc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const bool outlier = rng.bernoulli(noise.outlier_rate);
    if (outlier) {
      const double mag = noise.outlier_offset * (1.0 + rng.uniform());
      coords[i] = frame.gt_global[i] + mag * rng.unit_vector();
    } else {
      const double nx = rng.normal(noise.sigma);
      const double ny = rng.normal(noise.sigma);
      const double nz = rng.normal(noise.sigma);
      coords[i] = frame.gt_global[i] + Point3(nx, ny, nz);
    }
    const bool calibrated = rng.bernoulli(noise.calibration);
    const double random_score = rng.uniform();
    unc[i] = calibrated ? (outlier ? kOutlierScore : kInlierScore) : random_score;
  }
  return UncertainCoords(std::move(coords), std::move(unc), CoordRole::Measurement);
}

}  // namespace temploc
