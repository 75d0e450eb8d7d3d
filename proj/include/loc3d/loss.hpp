#pragma once

#include <cmath>

#include "loc3d/heatmap.hpp"

namespace loc3d {

// Class-balance weights for the weighted MSE heatmap loss, computed
// per-sample from the target map: w_p = n_z/(n_p+n_z), w_z = n_p/(n_p+n_z).
struct WmseWeights {
  double w_p = 0.5;
  double w_z = 0.5;
  std::int64_t n_p = 0;
  std::int64_t n_z = 0;
};

enum class LossVariant { hm_wmse, dsnt };

inline std::string loss_variant_name(LossVariant v) {
  return v == LossVariant::hm_wmse ? "hm" : "dsnt";
}

inline LossVariant loss_variant_from_name(const std::string& s) {
  if (s == "hm") return LossVariant::hm_wmse;
  if (s == "dsnt") return LossVariant::dsnt;
  fail_invalid("unknown loss variant: " + s);
}

struct LossConfig {
  double alpha = 1.0;
  LossVariant variant = LossVariant::dsnt;

  void validate() const { require(alpha >= 0, "LossConfig: alpha must be >= 0"); }
};

inline WmseWeights wmse_weights(const Heatmap3D& target) {
  target.volume.validate_geometry();
  std::int64_t n_p = 0;
  for (float v : target.volume.data)
    if (v > 0.0f) ++n_p;
  const std::int64_t n_z = target.volume.voxels() - n_p;
  if (n_p == 0) fail_invalid("wmse_weights: target has no positive voxels");
  if (n_z == 0) fail_invalid("wmse_weights: target has no zero voxels");
  WmseWeights w;
  w.n_p = n_p;
  w.n_z = n_z;
  w.w_p = double(n_z) / double(n_p + n_z);
  w.w_z = double(n_p) / double(n_p + n_z);
  return w;
}

// Mean over voxels of m(v)*(pred-target)^2 with m = w_p on positive target
// voxels and w_z on zero ones.
inline double wmse_loss(const Volume3D& pred, const Heatmap3D& target, const WmseWeights& w) {
  require(pred.shape == target.volume.shape, "wmse_loss: shape mismatch");
  double acc = 0.0;
  const auto& p = pred.data;
  const auto& t = target.volume.data;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double d = double(p[i]) - double(t[i]);
    acc += (t[i] > 0.0f ? w.w_p : w.w_z) * d * d;
  }
  return acc / double(p.size());
}

// Mean of squared componentwise differences of two normalized-frame points.
inline double coord_mse(const Landmark& pred, const Landmark& truth) {
  require(pred.frame == Frame::normalized && truth.frame == Frame::normalized,
          "coord_mse: both landmarks must be in the normalized frame");
  const Vec3 d = sub3(pred.coords, truth.coords);
  return dot3(d, d) / 3.0;
}

inline double xlogy(double x, double y) { return x > 0.0 ? x * std::log(y) : 0.0; }

// Jensen-Shannon divergence between two voxel distributions, natural log,
// 0*log 0 := 0. Result lies in [0, ln 2].
inline double js_divergence(const Heatmap3D& P, const Heatmap3D& Q) {
  check_normalized(P, "js_divergence");
  check_normalized(Q, "js_divergence");
  require(P.volume.shape == Q.volume.shape, "js_divergence: shape mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < P.volume.data.size(); ++i) {
    const double p = P.volume.data[i];
    const double q = Q.volume.data[i];
    const double m = 0.5 * (p + q);
    if (m <= 0.0) continue;
    acc += 0.5 * (xlogy(p, p / m) + xlogy(q, q / m));
  }
  return std::max(0.0, acc);
}

// Combined coordinate-regression loss: coord_mse + alpha * JS divergence.
inline double dsnt_loss(const Landmark& pred_coords, const Landmark& truth_coords,
                        const Heatmap3D& pred_norm, const Heatmap3D& target_norm,
                        const LossConfig& cfg) {
  cfg.validate();
  const double mse = coord_mse(pred_coords, truth_coords);
  if (cfg.alpha == 0.0) return mse;
  return mse + cfg.alpha * js_divergence(pred_norm, target_norm);
}

// Renormalize an unnormalized (peak-1) Gaussian target to unit mass so it can
// act as the reference distribution in divergence terms.
inline Heatmap3D renormalize_to_distribution(const Heatmap3D& h) {
  h.volume.validate_geometry();
  const double s = h.sum();
  require(s > 0.0, "renormalize_to_distribution: heatmap sums to 0");
  Heatmap3D out = h;
  for (auto& v : out.volume.data) v = float(double(v) / s);
  out.normalized = true;
  return out;
}

}  // namespace loc3d
