#pragma once

#include "loc3d/geometry.hpp"
#include "loc3d/volume.hpp"

namespace loc3d {

struct AugmentConfig {
  double intensity_lo = 0.8, intensity_hi = 1.2;
  double scale_lo = 0.9, scale_hi = 1.1;
  double rot_deg_lo = -10.0, rot_deg_hi = 10.0;

  void validate() const {
    require(intensity_lo <= intensity_hi, "AugmentConfig: intensity range ill-ordered");
    require(scale_lo <= scale_hi && scale_lo > 0, "AugmentConfig: scale range ill-ordered");
    require(rot_deg_lo <= rot_deg_hi, "AugmentConfig: rotation range ill-ordered");
    require(rot_deg_lo > -180.0 && rot_deg_hi < 180.0,
            "AugmentConfig: rotation bounds must lie within (-180, 180)");
  }
};

// Warp a volume by the similarity transform T(v) = s*R*(v - c) + c in voxel
// coordinates (zero padding outside); the image is resampled through T^-1.
inline Volume3D warp_similarity(const Volume3D& v, const Mat3& rot, double scl, const Vec3& c) {
  Volume3D out = v;
  const Mat3 inv_rot = rot.transpose();  // rotations: inverse == transpose
  const double inv_s = 1.0 / scl;
  std::int64_t idx = 0;
  for (int x = 0; x < v.shape[0]; ++x)
    for (int y = 0; y < v.shape[1]; ++y)
      for (int z = 0; z < v.shape[2]; ++z, ++idx) {
        const Vec3 u{double(x) - c[0], double(y) - c[1], double(z) - c[2]};
        const Vec3 src = add3(scale3(inv_rot.apply(u), inv_s), c);
        out.data[std::size_t(idx)] = float(trilinear_sample(v, src, Border::zero));
      }
  return out;
}

// Training-time augmentation: multiplicative intensity gain re-clamped to
// [0,1], then rotation (Euler x->y->z) and isotropic scale about the ROI
// center, with the landmark mapped through the same transform. If the mapped
// landmark leaves the ROI the whole sample is re-drawn, up to 10 times.
inline std::pair<Volume3D, Landmark> augment_sample(const Volume3D& roi, const Landmark& target,
                                                    const AugmentConfig& cfg, Rng& rng) {
  cfg.validate();
  roi.validate_geometry();
  require(target.frame == Frame::voxel, "augment_sample: target must be in voxel frame");
  for (int a = 0; a < 3; ++a)
    require(target.coords[a] >= 0 && target.coords[a] <= double(roi.shape[a] - 1),
            "augment_sample: target outside ROI");

  const Vec3 c{(roi.shape[0] - 1) / 2.0, (roi.shape[1] - 1) / 2.0, (roi.shape[2] - 1) / 2.0};
  constexpr int kMaxRetries = 10;
  for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
    const double gain = rng.uniform(cfg.intensity_lo, cfg.intensity_hi);
    const double scl = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    const double rx = deg_to_rad(rng.uniform(cfg.rot_deg_lo, cfg.rot_deg_hi));
    const double ry = deg_to_rad(rng.uniform(cfg.rot_deg_lo, cfg.rot_deg_hi));
    const double rz = deg_to_rad(rng.uniform(cfg.rot_deg_lo, cfg.rot_deg_hi));
    const Mat3 rot = Mat3::euler_xyz(rx, ry, rz);

    Landmark moved = target;
    moved.coords = add3(scale3(rot.apply(sub3(target.coords, c)), scl), c);
    bool inside = true;
    for (int a = 0; a < 3; ++a)
      inside = inside && moved.coords[a] >= 0 && moved.coords[a] <= double(roi.shape[a] - 1);
    if (!inside) continue;

    Volume3D img = roi;
    for (auto& x : img.data) x = std::clamp(float(double(x) * gain), 0.0f, 1.0f);
    const bool identity = scl == 1.0 && rx == 0.0 && ry == 0.0 && rz == 0.0;
    if (!identity) img = warp_similarity(img, rot, scl, c);
    return {std::move(img), std::move(moved)};
  }
  fail_runtime("augment_sample: landmark left the ROI in 10 consecutive draws");
}

}  // namespace loc3d
