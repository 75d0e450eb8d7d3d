#pragma once

#include <chrono>
#include <utility>

#include "loc3d/phantom.hpp"
#include "loc3d/registration.hpp"
#include "loc3d/train.hpp"

namespace loc3d {

struct PipelineConfig {
  int roi_size_vox = 64;
  double iso_spacing_mm = 1.0;

  void validate() const {
    require(roi_size_vox >= 4, "PipelineConfig: roi_size_vox must be >= 4");
    require(iso_spacing_mm > 0, "PipelineConfig: iso spacing must be > 0");
  }
};

// Stage-1 output for one case: the two canonical-orientation ROIs (left is
// mirrored onto the right-side layout) plus everything needed to map ROI
// voxel predictions back to world mm. The flipped left ROI's own origin_mm is
// not world-faithful; all world mapping goes through the RoiBox records.
struct PreparedCase {
  std::string id;
  Volume3D roi_left, roi_right;  // [0,1]-normalized intensities
  RoiBox box_left, box_right;
  Volume3D iso_geom;  // geometry of the resampled parent; data not retained
};

// Resample to isotropic spacing, normalize, detect the two blobs, crop both
// ROIs, mirror the left one. Throws DetectionFailure when stage 1 cannot find
// two components.
inline PreparedCase prepare_case(const std::string& id, const Volume3D& volume,
                                 const PipelineConfig& cfg) {
  cfg.validate();
  PreparedCase pc;
  pc.id = id;
  Volume3D iso = normalize_intensity(resample_isotropic(volume, cfg.iso_spacing_mm));
  const Index3 size{cfg.roi_size_vox, cfg.roi_size_vox, cfg.roi_size_vox};
  const DetectResult det = detect_roi(iso, size);

  auto [roi_r, box_r] = crop_roi(iso, det.center_right, size);
  pc.roi_right = normalize_intensity(roi_r);
  pc.box_right = box_r;

  auto [roi_l, box_l] = crop_roi(iso, det.center_left, size);
  box_l.flipped_x = true;
  pc.roi_left = normalize_intensity(flip_x(roi_l));
  pc.box_left = box_l;

  pc.iso_geom = Volume3D();
  pc.iso_geom.shape = iso.shape;
  pc.iso_geom.spacing_mm = iso.spacing_mm;
  pc.iso_geom.origin_mm = iso.origin_mm;
  return pc;
}

inline Vec3 world_to_roi_vox(const Vec3& world, const PreparedCase& pc, bool left) {
  const RoiBox& box = left ? pc.box_left : pc.box_right;
  return parent_to_roi_voxel(box, world_to_voxel(world, pc.iso_geom));
}

inline Vec3 roi_vox_to_world(const Vec3& roi_vox, const PreparedCase& pc, bool left) {
  const RoiBox& box = left ? pc.box_left : pc.box_right;
  return voxel_to_world(roi_to_parent_voxel(box, roi_vox), pc.iso_geom);
}

// Per-case localization output (world mm) with stage-2 wall-clock seconds.
struct CasePrediction {
  std::string id;
  Landmark left, right;   // world_mm
  double seconds = 0.0;   // stage-2 only (network or registration), both sides
};

// Run the trained localizer on both ROIs of a prepared case.
inline CasePrediction localize_with_net(const LocalizerNet& net, const PreparedCase& pc,
                                        bool coordinate_output = false) {
  CasePrediction out;
  out.id = pc.id;
  const auto t0 = std::chrono::steady_clock::now();
  const Vec3 pred_l = decode_prediction_vox(net_forward_roi(net, pc.roi_left), coordinate_output);
  const Vec3 pred_r = decode_prediction_vox(net_forward_roi(net, pc.roi_right), coordinate_output);
  const auto t1 = std::chrono::steady_clock::now();
  out.seconds = std::chrono::duration<double>(t1 - t0).count();
  out.left = Landmark{"pred_left", Frame::world_mm, roi_vox_to_world(pred_l, pc, true)};
  out.right = Landmark{"pred_right", Frame::world_mm, roi_vox_to_world(pred_r, pc, false)};
  return out;
}

// Atlas for registration-based localization: canonical ROIs plus the target
// position inside each, in the ROI voxel frame.
struct RegAtlas {
  Volume3D roi_left, roi_right;
  Vec3 target_left_vox{0, 0, 0}, target_right_vox{0, 0, 0};
};

inline RegAtlas make_reg_atlas(const PreparedCase& pc, const Vec3& target_left_world,
                               const Vec3& target_right_world) {
  RegAtlas a;
  a.roi_left = pc.roi_left;
  a.roi_right = pc.roi_right;
  a.target_left_vox = world_to_roi_vox(target_left_world, pc, true);
  a.target_right_vox = world_to_roi_vox(target_right_world, pc, false);
  return a;
}

namespace detail {

inline Volume3D reorigin_local(const Volume3D& v) {
  Volume3D out = v;
  out.origin_mm = {0, 0, 0};
  return out;
}

}  // namespace detail

// Register the atlas ROI onto one query ROI (both taken in a shared ROI-local
// frame) and project the atlas target through the recovered transform.
inline std::pair<Landmark, double> localize_side_with_registration(const Volume3D& atlas_roi,
                                                                   const Vec3& atlas_target_vox,
                                                                   const PreparedCase& query,
                                                                   bool left,
                                                                   const RegConfig& cfg) {
  const Volume3D a = detail::reorigin_local(atlas_roi);
  const Volume3D q = detail::reorigin_local(left ? query.roi_left : query.roi_right);
  const Landmark target{"atlas_target", Frame::world_mm,
                        {atlas_target_vox[0] * a.spacing_mm[0],
                         atlas_target_vox[1] * a.spacing_mm[1],
                         atlas_target_vox[2] * a.spacing_mm[2]}};
  const RegLocalizeResult r = registration_localize(a, target, q, cfg);
  const Vec3 pred_vox{r.prediction.coords[0] / q.spacing_mm[0],
                      r.prediction.coords[1] / q.spacing_mm[1],
                      r.prediction.coords[2] / q.spacing_mm[2]};
  Landmark out{left ? "pred_left" : "pred_right", Frame::world_mm,
               roi_vox_to_world(pred_vox, query, left)};
  return {out, r.seconds};
}

inline CasePrediction localize_with_registration(const RegAtlas& atlas, const PreparedCase& query,
                                                 const RegConfig& cfg) {
  CasePrediction out;
  out.id = query.id;
  auto [pl, sl] = localize_side_with_registration(atlas.roi_left, atlas.target_left_vox, query,
                                                  true, cfg);
  auto [pr, sr] = localize_side_with_registration(atlas.roi_right, atlas.target_right_vox, query,
                                                  false, cfg);
  out.left = pl;
  out.right = pr;
  out.seconds = sl + sr;
  return out;
}

}  // namespace loc3d
