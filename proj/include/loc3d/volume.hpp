#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "loc3d/common.hpp"

namespace loc3d {

// Dense scalar 3D image. Linear index order is fixed project-wide as
// x-slowest: idx = (x*Ny + y)*Nz + z. Serialization, argmax tie-breaking
// and the tensor layout in the network all share this order.
struct Volume3D {
  Index3 shape{0, 0, 0};
  Vec3 spacing_mm{1.0, 1.0, 1.0};
  Vec3 origin_mm{0.0, 0.0, 0.0};  // world position of the center of voxel (0,0,0)
  std::vector<float> data;

  Volume3D() = default;
  Volume3D(Index3 sh, Vec3 sp, Vec3 org, float fill = 0.0f)
      : shape(sh), spacing_mm(sp), origin_mm(org), data(std::size_t(voxels_of(sh)), fill) {
    validate_geometry();
  }

  static std::int64_t voxels_of(const Index3& sh) {
    return std::int64_t(sh[0]) * sh[1] * sh[2];
  }
  std::int64_t voxels() const { return voxels_of(shape); }

  std::int64_t lin(int x, int y, int z) const {
    return (std::int64_t(x) * shape[1] + y) * shape[2] + z;
  }
  float& at(int x, int y, int z) { return data[std::size_t(lin(x, y, z))]; }
  float at(int x, int y, int z) const { return data[std::size_t(lin(x, y, z))]; }

  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < shape[0] && y >= 0 && y < shape[1] && z >= 0 && z < shape[2];
  }

  void validate_geometry() const {
    require(shape[0] > 0 && shape[1] > 0 && shape[2] > 0, "Volume3D: shape must be positive");
    require(spacing_mm[0] > 0 && spacing_mm[1] > 0 && spacing_mm[2] > 0,
            "Volume3D: spacing must be positive");
    require(std::int64_t(data.size()) == voxels(), "Volume3D: data length != Nx*Ny*Nz");
  }

  bool all_finite() const {
    for (float v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }
};

enum class Frame { voxel, normalized, world_mm };

inline std::string frame_name(Frame f) {
  switch (f) {
    case Frame::voxel: return "voxel";
    case Frame::normalized: return "normalized";
    case Frame::world_mm: return "world_mm";
  }
  return "?";
}

inline Frame frame_from_name(const std::string& s) {
  if (s == "voxel") return Frame::voxel;
  if (s == "normalized") return Frame::normalized;
  if (s == "world_mm") return Frame::world_mm;
  fail_invalid("unknown landmark frame: " + s);
}

// One named 3D target. Coordinates are real-valued in all frames; voxel-frame
// coordinates may fall between voxel centers.
struct Landmark {
  std::string id;
  Frame frame = Frame::voxel;
  Vec3 coords{0, 0, 0};
};

// Placement record of an ROI crop within its parent volume.
struct RoiBox {
  Index3 origin_voxel{0, 0, 0};
  Index3 size{64, 64, 64};
  bool flipped_x = false;
};

// ---------------------------------------------------------------------------
// Coordinate conversions.
//
// Normalized convention: the *centers* of the corner voxels map to -1 and +1,
// i.e. c = -1 + 2*i/(N-1) per axis. Requires N >= 2 per axis.
// ---------------------------------------------------------------------------

inline void check_norm_shape(const Index3& shape) {
  require(shape[0] >= 2 && shape[1] >= 2 && shape[2] >= 2,
          "normalized coordinates require shape >= 2 per axis");
}

inline Vec3 voxel_to_normalized(const Vec3& i, const Index3& shape) {
  check_norm_shape(shape);
  return {-1.0 + 2.0 * i[0] / (shape[0] - 1), -1.0 + 2.0 * i[1] / (shape[1] - 1),
          -1.0 + 2.0 * i[2] / (shape[2] - 1)};
}

inline Vec3 normalized_to_voxel(const Vec3& c, const Index3& shape) {
  check_norm_shape(shape);
  return {(c[0] + 1.0) * (shape[0] - 1) / 2.0, (c[1] + 1.0) * (shape[1] - 1) / 2.0,
          (c[2] + 1.0) * (shape[2] - 1) / 2.0};
}

inline Vec3 voxel_to_world(const Vec3& i, const Volume3D& v) {
  return {v.origin_mm[0] + i[0] * v.spacing_mm[0], v.origin_mm[1] + i[1] * v.spacing_mm[1],
          v.origin_mm[2] + i[2] * v.spacing_mm[2]};
}

inline Vec3 world_to_voxel(const Vec3& w, const Volume3D& v) {
  return {(w[0] - v.origin_mm[0]) / v.spacing_mm[0], (w[1] - v.origin_mm[1]) / v.spacing_mm[1],
          (w[2] - v.origin_mm[2]) / v.spacing_mm[2]};
}

inline Landmark convert_landmark(const Landmark& l, Frame target, const Volume3D& geom) {
  if (l.frame == target) return l;
  Vec3 vox = l.coords;
  switch (l.frame) {
    case Frame::voxel: break;
    case Frame::normalized: vox = normalized_to_voxel(l.coords, geom.shape); break;
    case Frame::world_mm: vox = world_to_voxel(l.coords, geom); break;
  }
  Vec3 out = vox;
  switch (target) {
    case Frame::voxel: break;
    case Frame::normalized: out = voxel_to_normalized(vox, geom.shape); break;
    case Frame::world_mm: out = voxel_to_world(vox, geom); break;
  }
  return Landmark{l.id, target, out};
}

// ---------------------------------------------------------------------------
// Interpolation
// ---------------------------------------------------------------------------

enum class Border { clamp, zero };

// Trilinear sample at continuous voxel coordinate p (in units of v's voxel
// indices). Border::clamp replicates edge values, Border::zero treats outside
// as 0.
inline double trilinear_sample(const Volume3D& v, Vec3 p, Border border) {
  if (border == Border::clamp) {
    for (int a = 0; a < 3; ++a) p[a] = std::clamp(p[a], 0.0, double(v.shape[a] - 1));
  }
  const int x0 = int(std::floor(p[0])), y0 = int(std::floor(p[1])), z0 = int(std::floor(p[2]));
  const double fx = p[0] - x0, fy = p[1] - y0, fz = p[2] - z0;

  auto fetch = [&](int x, int y, int z) -> double {
    if (!v.in_bounds(x, y, z)) {
      if (border == Border::zero) return 0.0;
      x = std::clamp(x, 0, v.shape[0] - 1);
      y = std::clamp(y, 0, v.shape[1] - 1);
      z = std::clamp(z, 0, v.shape[2] - 1);
    }
    return v.at(x, y, z);
  };

  const double c000 = fetch(x0, y0, z0), c001 = fetch(x0, y0, z0 + 1);
  const double c010 = fetch(x0, y0 + 1, z0), c011 = fetch(x0, y0 + 1, z0 + 1);
  const double c100 = fetch(x0 + 1, y0, z0), c101 = fetch(x0 + 1, y0, z0 + 1);
  const double c110 = fetch(x0 + 1, y0 + 1, z0), c111 = fetch(x0 + 1, y0 + 1, z0 + 1);

  const double c00 = c000 * (1 - fz) + c001 * fz;
  const double c01 = c010 * (1 - fz) + c011 * fz;
  const double c10 = c100 * (1 - fz) + c101 * fz;
  const double c11 = c110 * (1 - fz) + c111 * fz;
  const double c0 = c00 * (1 - fy) + c01 * fy;
  const double c1 = c10 * (1 - fy) + c11 * fy;
  return c0 * (1 - fx) + c1 * fx;
}

// ---------------------------------------------------------------------------
// Volume operations
// ---------------------------------------------------------------------------

// Resample to isotropic target spacing by trilinear interpolation at the
// output voxel centers. Output shape per axis is round(N*s/t), clamped to >=2.
// The world origin is kept, so world extent is preserved up to one voxel.
inline Volume3D resample_isotropic(const Volume3D& v, double target_spacing_mm) {
  v.validate_geometry();
  require(target_spacing_mm > 0, "resample_isotropic: target spacing must be > 0");
  require(v.all_finite(), "resample_isotropic: input data must be finite");

  Index3 out_shape;
  for (int a = 0; a < 3; ++a) {
    out_shape[a] =
        std::max(2, int(std::llround(double(v.shape[a]) * v.spacing_mm[a] / target_spacing_mm)));
  }
  Volume3D out(out_shape, {target_spacing_mm, target_spacing_mm, target_spacing_mm}, v.origin_mm);
  const double rx = target_spacing_mm / v.spacing_mm[0];
  const double ry = target_spacing_mm / v.spacing_mm[1];
  const double rz = target_spacing_mm / v.spacing_mm[2];
  std::int64_t idx = 0;
  for (int x = 0; x < out_shape[0]; ++x)
    for (int y = 0; y < out_shape[1]; ++y)
      for (int z = 0; z < out_shape[2]; ++z)
        out.data[std::size_t(idx++)] =
            float(trilinear_sample(v, {x * rx, y * ry, z * rz}, Border::clamp));
  return out;
}

// Affine min-max rescale to [0,1]. Constant volumes map to all-zeros.
inline Volume3D normalize_intensity(const Volume3D& v) {
  v.validate_geometry();
  require(v.all_finite(), "normalize_intensity: input data must be finite");
  float lo = v.data[0], hi = v.data[0];
  for (float x : v.data) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  Volume3D out = v;
  if (hi == lo) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const double scale = 1.0 / (double(hi) - double(lo));
  for (auto& x : out.data) x = float((double(x) - lo) * scale);
  return out;
}

// Crop a size-sized box whose lower corner is center - size/2 (componentwise
// integer floor). Regions outside the parent are zero-padded. The crop's
// origin_mm is set so that world coordinates are preserved.
inline std::pair<Volume3D, RoiBox> crop_roi(const Volume3D& v, const Index3& center_voxel,
                                            const Index3& size) {
  v.validate_geometry();
  require(size[0] >= 2 && size[1] >= 2 && size[2] >= 2, "crop_roi: size must be >= 2 per axis");

  RoiBox box;
  box.size = size;
  // floor(center - size/2); for integer center this is center - (size+1)/2
  for (int a = 0; a < 3; ++a) box.origin_voxel[a] = center_voxel[a] - (size[a] + 1) / 2;

  Volume3D out(size, v.spacing_mm,
               voxel_to_world(to_vec3(box.origin_voxel), v));
  for (int x = 0; x < size[0]; ++x) {
    const int px = box.origin_voxel[0] + x;
    for (int y = 0; y < size[1]; ++y) {
      const int py = box.origin_voxel[1] + y;
      for (int z = 0; z < size[2]; ++z) {
        const int pz = box.origin_voxel[2] + z;
        if (v.in_bounds(px, py, pz)) out.at(x, y, z) = v.at(px, py, pz);
      }
    }
  }
  return {std::move(out), box};
}

// Mirror along the x axis. Applying twice is the identity (bit-exact).
inline Volume3D flip_x(const Volume3D& v) {
  v.validate_geometry();
  Volume3D out = v;
  for (int x = 0; x < v.shape[0]; ++x) {
    const int xs = v.shape[0] - 1 - x;
    for (int y = 0; y < v.shape[1]; ++y)
      for (int z = 0; z < v.shape[2]; ++z) out.at(x, y, z) = v.at(xs, y, z);
  }
  return out;
}

inline Landmark flip_landmark_x(const Landmark& l, int nx) {
  require(l.frame == Frame::voxel, "flip_landmark_x: landmark must be in voxel frame");
  require(l.coords[0] >= 0.0 && l.coords[0] <= double(nx - 1),
          "flip_landmark_x: landmark x outside [0, Nx-1]");
  Landmark out = l;
  out.coords[0] = double(nx - 1) - l.coords[0];
  return out;
}

// ROI-frame <-> parent-frame voxel coordinates through the RoiBox bookkeeping
// (including the unflip when the crop was mirrored).
inline Vec3 roi_to_parent_voxel(const RoiBox& box, Vec3 roi_voxel) {
  if (box.flipped_x) roi_voxel[0] = double(box.size[0] - 1) - roi_voxel[0];
  return {roi_voxel[0] + box.origin_voxel[0], roi_voxel[1] + box.origin_voxel[1],
          roi_voxel[2] + box.origin_voxel[2]};
}

inline Vec3 parent_to_roi_voxel(const RoiBox& box, Vec3 parent_voxel) {
  Vec3 r{parent_voxel[0] - box.origin_voxel[0], parent_voxel[1] - box.origin_voxel[1],
         parent_voxel[2] - box.origin_voxel[2]};
  if (box.flipped_x) r[0] = double(box.size[0] - 1) - r[0];
  return r;
}

}  // namespace loc3d
