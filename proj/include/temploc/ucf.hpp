#pragma once

// Uncertainty-guided fusion of prior and measurement estimates.

#include <algorithm>
#include <cmath>
#include <span>
#include <vector>

#include "temploc/error.hpp"
#include "temploc/gce.hpp"

namespace temploc {

/// alpha weights the prior, beta the measurement.
struct FusionWeights {
  std::vector<double> alpha;
  std::vector<double> beta;
};

struct LossWeights {
  double lambda1 = 0.3;
  double lambda2 = 0.3;
  double lambda3 = 0.4;

  void validate() const {
    require(lambda1 >= 0.0 && lambda2 >= 0.0 && lambda3 >= 0.0, Errc::InvalidConfig,
            "loss weights must be nonnegative");
  }
};

/// Two-way softmax of negated uncertainties, max-shifted so any finite
/// input is safe.
inline std::pair<double, double> softmax_pair(double prior_u, double meas_u) {
  const double a = -prior_u;
  const double b = -meas_u;
  const double mx = std::max(a, b);
  const double ea = std::exp(a - mx);
  const double eb = std::exp(b - mx);
  const double s = ea + eb;
  return {ea / s, eb / s};
}

inline FusionWeights fusion_weights(std::span<const double> prior_u, std::span<const double> meas_u) {
  require(prior_u.size() == meas_u.size(), Errc::ShapeMismatch, "fusion_weights: length mismatch");
  FusionWeights w;
  w.alpha.resize(prior_u.size());
  w.beta.resize(prior_u.size());
  for (std::size_t i = 0; i < prior_u.size(); ++i) std::tie(w.alpha[i], w.beta[i]) = softmax_pair(prior_u[i], meas_u[i]);
  return w;
}

/// Per-point convex blend of coordinates and uncertainties.
inline UncertainCoords fuse(const UncertainCoords& prior, const UncertainCoords& measurement, const FusionWeights& w) {
  const std::size_t n = prior.size();
  require(measurement.size() == n && w.alpha.size() == n && w.beta.size() == n, Errc::ShapeMismatch,
          "fuse: length mismatch");
  PointCloud coords(n);
  std::vector<double> unc(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double a = w.alpha[i];
    const double b = w.beta[i];
    coords[i] = a * prior.coords()[i] + b * measurement.coords()[i];
    unc[i] = a * prior.uncertainty()[i] + b * measurement.uncertainty()[i];
  }
  return UncertainCoords(std::move(coords), std::move(unc), CoordRole::Fused);
}

struct FusionJacobian {
  double dalpha_dprior = 0.0;
  double dalpha_dmeas = 0.0;
  double dbeta_dprior = 0.0;
  double dbeta_dmeas = 0.0;
};

inline std::vector<FusionJacobian> fusion_gradients(std::span<const double> prior_u, std::span<const double> meas_u) {
  const auto w = fusion_weights(prior_u, meas_u);
  std::vector<FusionJacobian> out(prior_u.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double ab = w.alpha[i] * w.beta[i];
    out[i] = {-ab, ab, ab, -ab};
  }
  return out;
}

inline double loss_full(const LossValue& l_gce, const LossValue& l_pcg, const LossValue& l_fuse, const LossWeights& w) {
  return w.lambda1 * l_gce.value + w.lambda2 * l_pcg.value + w.lambda3 * l_fuse.value;
}

/// Loss of the fused estimate with gradients carried back to both inputs.
struct FusedLoss {
  double value = 0.0;
  PointCloud grad_prior_coords;
  std::vector<double> grad_prior_u;
  PointCloud grad_meas_coords;
  std::vector<double> grad_meas_u;
};

/// Supervised loss on fuse(prior, measurement), differentiated through the
/// fusion weights. Labels are recomputed from the fused coordinates and held
/// constant for differentiation.
inline FusedLoss fused_loss(const UncertainCoords& prior, const UncertainCoords& measurement,
                            std::span<const Point3> gt, double tau) {
  require(prior.size() == measurement.size() && prior.size() == gt.size(), Errc::ShapeMismatch,
          "fused_loss: length mismatch");
  const auto w = fusion_weights(prior.uncertainty(), measurement.uncertainty());
  const auto fused = fuse(prior, measurement, w);
  const auto l = supervised_loss(fused, gt, tau);
  const auto jac = fusion_gradients(prior.uncertainty(), measurement.uncertainty());

  const std::size_t n = prior.size();
  FusedLoss out;
  out.value = l.value;
  out.grad_prior_coords.resize(n);
  out.grad_meas_coords.resize(n);
  out.grad_prior_u.resize(n);
  out.grad_meas_u.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Point3& gp = l.grad_coords[i];
    const double gu = l.grad_uncertainty[i];
    const Point3 dp = prior.coords()[i] - measurement.coords()[i];
    const double du = prior.uncertainty()[i] - measurement.uncertainty()[i];
    out.grad_prior_coords[i] = w.alpha[i] * gp;
    out.grad_meas_coords[i] = w.beta[i] * gp;
    // d fused_p / d u = dp * dalpha/du ; d fused_u / d u = du * dalpha/du + own weight.
    out.grad_prior_u[i] = gp.dot(dp) * jac[i].dalpha_dprior + gu * (du * jac[i].dalpha_dprior + w.alpha[i]);
    out.grad_meas_u[i] = gp.dot(dp) * jac[i].dalpha_dmeas + gu * (du * jac[i].dalpha_dmeas + w.beta[i]);
  }
  return out;
}

/// Weighted total of the measurement, prior, and fused losses, with
/// gradients with respect to the measurement and prior estimates.
inline FusedLoss total_loss(const UncertainCoords& prior, const UncertainCoords& measurement,
                            std::span<const Point3> gt, double tau, const LossWeights& lw) {
  const auto l_gce = supervised_loss(measurement, gt, tau);
  const auto l_pcg = supervised_loss(prior, gt, tau);
  auto out = fused_loss(prior, measurement, gt, tau);
  const double fuse_value = out.value;
  out.value = lw.lambda1 * l_gce.value + lw.lambda2 * l_pcg.value + lw.lambda3 * fuse_value;
  for (std::size_t i = 0; i < prior.size(); ++i) {
    out.grad_prior_coords[i] = lw.lambda3 * out.grad_prior_coords[i] + lw.lambda2 * l_pcg.grad_coords[i];
    out.grad_prior_u[i] = lw.lambda3 * out.grad_prior_u[i] + lw.lambda2 * l_pcg.grad_uncertainty[i];
    out.grad_meas_coords[i] = lw.lambda3 * out.grad_meas_coords[i] + lw.lambda1 * l_gce.grad_coords[i];
    out.grad_meas_u[i] = lw.lambda3 * out.grad_meas_u[i] + lw.lambda1 * l_gce.grad_uncertainty[i];
  }
  return out;
}

}  // namespace temploc
