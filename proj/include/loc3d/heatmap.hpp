#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <mutex>

#include "loc3d/volume.hpp"

namespace loc3d {

struct HeatmapConfig {
  double sigma_mm = 1.5;
  double cutoff = 0.05;
  double peak = 1.0;

  void validate() const {
    require(sigma_mm > 0, "HeatmapConfig: sigma_mm must be > 0");
    require(cutoff >= 0 && cutoff < 1, "HeatmapConfig: cutoff must lie in [0,1)");
  }
};

// Non-negative scalar field over an ROI. `normalized` marks fields whose
// values sum to 1 (a probability distribution over voxels).
struct Heatmap3D {
  Volume3D volume;
  bool normalized = false;

  double sum() const {
    double s = 0;
    for (float v : volume.data) s += v;
    return s;
  }
};

// Per-voxel normalized coordinates, one field per axis; X varies only along
// x (likewise Y, Z) and the corner voxel centers read exactly -1 / +1.
struct CoordGrids {
  Index3 shape{0, 0, 0};
  std::vector<float> x, y, z;
};

inline CoordGrids make_coord_grids(const Index3& shape) {
  check_norm_shape(shape);
  CoordGrids g;
  g.shape = shape;
  const std::size_t n = std::size_t(Volume3D::voxels_of(shape));
  g.x.resize(n);
  g.y.resize(n);
  g.z.resize(n);
  std::size_t idx = 0;
  for (int x = 0; x < shape[0]; ++x) {
    const float cx = float(-1.0 + 2.0 * x / (shape[0] - 1));
    for (int y = 0; y < shape[1]; ++y) {
      const float cy = float(-1.0 + 2.0 * y / (shape[1] - 1));
      for (int z = 0; z < shape[2]; ++z, ++idx) {
        g.x[idx] = cx;
        g.y[idx] = cy;
        g.z[idx] = float(-1.0 + 2.0 * z / (shape[2] - 1));
      }
    }
  }
  return g;
}

// Share-on-read cache of coordinate grids keyed by shape. Returned grids are
// immutable; safe for concurrent readers.
inline std::shared_ptr<const CoordGrids> coord_grids_cached(const Index3& shape) {
  static std::mutex mu;
  static std::map<Index3, std::shared_ptr<const CoordGrids>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(shape);
  if (it != cache.end()) return it->second;
  auto g = std::make_shared<const CoordGrids>(make_coord_grids(shape));
  cache.emplace(shape, g);
  return g;
}

// Render the Gaussian target heatmap: exp(-d^2 / (2 sigma^2)) with d the
// distance in mm to `center_voxel`, values below cfg.cutoff zeroed, then the
// maximum rescaled to cfg.peak. Cutoff is applied before the rescale.
inline Heatmap3D render_gaussian_target(const Vec3& center_voxel, const Index3& shape,
                                        const Vec3& spacing_mm, const HeatmapConfig& cfg) {
  cfg.validate();
  check_norm_shape(shape);
  for (int a = 0; a < 3; ++a)
    require(center_voxel[a] >= 0.0 && center_voxel[a] <= double(shape[a] - 1),
            "render_gaussian_target: center outside volume bounds");

  Heatmap3D h;
  h.volume = Volume3D(shape, spacing_mm, {0, 0, 0});
  const double inv2s2 = 1.0 / (2.0 * cfg.sigma_mm * cfg.sigma_mm);
  double maxv = 0.0;
  std::int64_t idx = 0;
  for (int x = 0; x < shape[0]; ++x) {
    const double dx = (x - center_voxel[0]) * spacing_mm[0];
    for (int y = 0; y < shape[1]; ++y) {
      const double dy = (y - center_voxel[1]) * spacing_mm[1];
      for (int z = 0; z < shape[2]; ++z, ++idx) {
        const double dz = (z - center_voxel[2]) * spacing_mm[2];
        double v = std::exp(-(dx * dx + dy * dy + dz * dz) * inv2s2);
        if (v < cfg.cutoff) v = 0.0;
        h.volume.data[std::size_t(idx)] = float(v);
        maxv = std::max(maxv, v);
      }
    }
  }
  // center is in bounds, so the nearest voxel keeps a value well above cutoff
  const double rescale = cfg.peak / maxv;
  for (auto& v : h.volume.data) v = float(v * rescale);
  h.normalized = false;
  return h;
}

// Softmax over all voxels: exp(v - max) / sum. Order-preserving, sums to 1.
inline Heatmap3D softmax_normalize(const Volume3D& field) {
  field.validate_geometry();
  require(field.all_finite(), "softmax_normalize: input must be finite");
  Heatmap3D out;
  out.volume = field;
  float maxv = field.data[0];
  for (float v : field.data) maxv = std::max(maxv, v);
  double sum = 0.0;
  std::vector<double> e(field.data.size());
  for (std::size_t i = 0; i < field.data.size(); ++i) {
    e[i] = std::exp(double(field.data[i]) - double(maxv));
    sum += e[i];
  }
  for (std::size_t i = 0; i < e.size(); ++i) out.volume.data[i] = float(e[i] / sum);
  out.normalized = true;
  return out;
}

inline Heatmap3D softmax_normalize(const Heatmap3D& h) { return softmax_normalize(h.volume); }

// Voxel of the maximum value; ties broken by lowest linear index.
inline Landmark hard_argmax(const Heatmap3D& h) {
  h.volume.validate_geometry();
  const auto& d = h.volume.data;
  std::size_t best = 0;
  for (std::size_t i = 1; i < d.size(); ++i)
    if (d[i] > d[best]) best = i;
  const auto ny = h.volume.shape[1], nz = h.volume.shape[2];
  const std::int64_t li = std::int64_t(best);
  Landmark l;
  l.frame = Frame::voxel;
  l.coords = {double(li / (std::int64_t(ny) * nz)), double((li / nz) % ny), double(li % nz)};
  return l;
}

inline void check_normalized(const Heatmap3D& h, const char* who, double tol = 1e-4) {
  require(h.normalized, std::string(who) + ": heatmap must be normalized");
  const double s = h.sum();
  require(std::abs(s - 1.0) <= tol, std::string(who) + ": normalized heatmap must sum to 1");
}

// DSNT coordinate extraction: the expectation of the normalized coordinate
// grids under the heatmap, p = (<h,X>, <h,Y>, <h,Z>).
inline Landmark dsnt_extract(const Heatmap3D& hn, const CoordGrids& g) {
  check_normalized(hn, "dsnt_extract");
  require(hn.volume.shape == g.shape, "dsnt_extract: grid shape mismatch");
  double px = 0, py = 0, pz = 0;
  const auto& d = hn.volume.data;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double w = d[i];
    px += w * g.x[i];
    py += w * g.y[i];
    pz += w * g.z[i];
  }
  Landmark l;
  l.frame = Frame::normalized;
  l.coords = {px, py, pz};
  return l;
}

inline Landmark dsnt_extract(const Heatmap3D& hn) {
  auto g = coord_grids_cached(hn.volume.shape);
  return dsnt_extract(hn, *g);
}

}  // namespace loc3d
