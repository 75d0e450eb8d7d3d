#pragma once

#include <chrono>
#include <cmath>
#include <limits>
#include <vector>

#include "loc3d/geometry.hpp"
#include "loc3d/volume.hpp"

namespace loc3d {

// Affine map from atlas world coordinates to query world coordinates:
// q = A*a + t, with A orientation-preserving (det > 0).
struct AffineTransform {
  Mat3 A = Mat3::identity();
  Vec3 t{0, 0, 0};

  Vec3 apply(const Vec3& a) const { return add3(A.apply(a), t); }

  void validate() const {
    for (double x : A.m) require(std::isfinite(x), "AffineTransform: non-finite matrix entry");
    require(finite3(t), "AffineTransform: non-finite translation");
    require(A.det() > 0.0, "AffineTransform: det(A) must be positive");
  }

  // (this o other): first apply `other`, then `this`.
  AffineTransform compose(const AffineTransform& other) const {
    return AffineTransform{A.mul(other.A), add3(A.apply(other.t), t)};
  }

  AffineTransform inverse() const {
    validate();
    const Mat3 Ainv = A.inverse();
    return AffineTransform{Ainv, scale3(Ainv.apply(t), -1.0)};
  }
};

enum class RegMetric { ncc, mse };

inline std::string reg_metric_name(RegMetric m) { return m == RegMetric::ncc ? "ncc" : "mse"; }

inline RegMetric reg_metric_from_name(const std::string& s) {
  if (s == "ncc") return RegMetric::ncc;
  if (s == "mse") return RegMetric::mse;
  fail_invalid("unknown registration metric: " + s);
}

struct RegConfig {
  RegMetric metric = RegMetric::ncc;
  int levels = 3;       // pyramid levels, x2 downsampling per level
  int max_iters = 100;  // coordinate-descent sweeps per level
  double tol = 1e-6;    // stop a level once an accepted sweep improves less than this

  void validate() const {
    require(levels >= 1, "RegConfig: levels must be >= 1");
    require(max_iters >= 1, "RegConfig: max_iters must be >= 1");
    require(std::isfinite(tol) && tol >= 0.0, "RegConfig: tol must be finite and >= 0");
  }
};

struct RegResult {
  AffineTransform transform;  // atlas world -> query world
  double metric_value = 0.0;  // NCC (higher better) or MSE (lower better), per cfg.metric
  RegMetric metric = RegMetric::ncc;
  long evaluations = 0;
  // Internal optimizer score (NCC, or -MSE) after each accepted step; strictly
  // increasing by construction.
  std::vector<double> accepted_scores;
};

namespace detail {

// 2x block-mean downsample; coarse voxel i averages fine voxels {2i, 2i+1}
// (partial blocks at odd tails average what exists). Spacing doubles; the
// origin shifts by half a fine voxel so full blocks keep their world centers.
inline Volume3D reg_downsample2(const Volume3D& v) {
  Volume3D out;
  for (int a = 0; a < 3; ++a) {
    out.shape[a] = (v.shape[a] + 1) / 2;
    out.spacing_mm[a] = v.spacing_mm[a] * 2.0;
    out.origin_mm[a] = v.origin_mm[a] + 0.5 * v.spacing_mm[a];
  }
  out.data.assign(std::size_t(out.voxels()), 0.0f);
  for (int x = 0; x < out.shape[0]; ++x)
    for (int y = 0; y < out.shape[1]; ++y)
      for (int z = 0; z < out.shape[2]; ++z) {
        double sum = 0.0;
        int n = 0;
        for (int dx = 0; dx < 2; ++dx)
          for (int dy = 0; dy < 2; ++dy)
            for (int dz = 0; dz < 2; ++dz) {
              const int fx = 2 * x + dx, fy = 2 * y + dy, fz = 2 * z + dz;
              if (fx >= v.shape[0] || fy >= v.shape[1] || fz >= v.shape[2]) continue;
              sum += v.at(fx, fy, fz);
              ++n;
            }
        out.data[std::size_t(out.lin(x, y, z))] = float(sum / n);
      }
  return out;
}

// 12-parameter pose: translation (mm), rotation (rad), log-scale, shear.
// The linear part acts about a fixed world-space center c:
//   q = R*S*H*(a - c) + c + t
struct RegParams {
  std::array<double, 12> p{};  // tx ty tz rx ry rz lsx lsy lsz hxy hxz hyz

  AffineTransform to_transform(const Vec3& center) const {
    const Mat3 R = Mat3::euler_xyz(p[3], p[4], p[5]);
    const Mat3 S = Mat3::diag(std::exp(p[6]), std::exp(p[7]), std::exp(p[8]));
    Mat3 H = Mat3::identity();
    H.m[1] = p[9];
    H.m[2] = p[10];
    H.m[5] = p[11];
    const Mat3 A = R.mul(S).mul(H);
    const Vec3 t{center[0] - dot3({A.m[0], A.m[1], A.m[2]}, center) + p[0],
                 center[1] - dot3({A.m[3], A.m[4], A.m[5]}, center) + p[1],
                 center[2] - dot3({A.m[6], A.m[7], A.m[8]}, center) + p[2]};
    return AffineTransform{A, t};
  }
};

// Similarity score (higher is better): NCC, or negative MSE, between the
// query and the atlas resampled through T^-1, over the in-bounds overlap.
// Returns -inf when the overlap is too small or NCC is degenerate.
inline double reg_score(const Volume3D& atlas, const Volume3D& query, const AffineTransform& T,
                        RegMetric metric) {
  const AffineTransform Tinv = T.inverse();
  // Compose query-voxel -> atlas-voxel into one affine map M*qv + b.
  Mat3 M = Tinv.A;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) M.m[3 * r + c] *= query.spacing_mm[c] / atlas.spacing_mm[r];
  Vec3 b = Tinv.apply(query.origin_mm);
  for (int r = 0; r < 3; ++r) b[r] = (b[r] - atlas.origin_mm[r]) / atlas.spacing_mm[r];

  const double hx = atlas.shape[0] - 1.0, hy = atlas.shape[1] - 1.0, hz = atlas.shape[2] - 1.0;
  double n = 0, sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
  std::int64_t idx = 0;
  for (int qx = 0; qx < query.shape[0]; ++qx)
    for (int qy = 0; qy < query.shape[1]; ++qy) {
      Vec3 av{b[0] + M.m[0] * qx + M.m[1] * qy, b[1] + M.m[3] * qx + M.m[4] * qy,
              b[2] + M.m[6] * qx + M.m[7] * qy};
      for (int qz = 0; qz < query.shape[2]; ++qz, ++idx) {
        if (av[0] >= 0.0 && av[0] <= hx && av[1] >= 0.0 && av[1] <= hy && av[2] >= 0.0 &&
            av[2] <= hz) {
          const double x = trilinear_sample(atlas, av, Border::clamp);
          const double y = query.data[std::size_t(idx)];
          n += 1.0;
          sx += x;
          sy += y;
          sxx += x * x;
          syy += y * y;
          sxy += x * y;
        }
        av[0] += M.m[2];
        av[1] += M.m[5];
        av[2] += M.m[8];
      }
    }

  const double ninf = -std::numeric_limits<double>::infinity();
  const double min_overlap = std::max(32.0, double(query.voxels()) / 8.0);
  if (n < min_overlap) return ninf;
  if (metric == RegMetric::mse) return -(sxx - 2.0 * sxy + syy) / n;
  const double vx = sxx - sx * sx / n, vy = syy - sy * sy / n;
  if (vx <= 1e-20 || vy <= 1e-20) return ninf;
  return (sxy - sx * sy / n) / std::sqrt(vx * vy);
}

inline double volume_variance(const Volume3D& v) {
  double s = 0, ss = 0;
  for (float x : v.data) {
    s += x;
    ss += double(x) * x;
  }
  const double n = double(v.voxels());
  return ss / n - (s / n) * (s / n);
}

}  // namespace detail

// Multi-resolution derivative-free affine registration, atlas -> query.
// Coordinate descent over 12 parameters with shrinking steps; only strictly
// improving moves are accepted, so the score history is monotone.
inline RegResult register_affine(const Volume3D& atlas, const Volume3D& query,
                                 const RegConfig& cfg) {
  cfg.validate();
  atlas.validate_geometry();
  query.validate_geometry();
  for (int a = 0; a < 3; ++a)
    require(std::abs(atlas.spacing_mm[a] - query.spacing_mm[a]) < 1e-9,
            "register_affine: atlas and query must share voxel spacing");
  if (cfg.metric == RegMetric::ncc) {
    require(detail::volume_variance(atlas) > 1e-20,
            "register_affine: constant atlas image rejected for NCC");
    require(detail::volume_variance(query) > 1e-20,
            "register_affine: constant query image rejected for NCC");
  }

  // Pyramids, coarse to fine; stop coarsening once a volume gets small.
  std::vector<Volume3D> ap{atlas}, qp{query};
  for (int l = 1; l < cfg.levels; ++l) {
    const Index3 sa = ap.back().shape, sq = qp.back().shape;
    const int mn = std::min({sa[0], sa[1], sa[2], sq[0], sq[1], sq[2]});
    if (mn < 8) break;
    ap.push_back(detail::reg_downsample2(ap.back()));
    qp.push_back(detail::reg_downsample2(qp.back()));
  }

  const Vec3 center = voxel_to_world({(atlas.shape[0] - 1) / 2.0, (atlas.shape[1] - 1) / 2.0,
                                      (atlas.shape[2] - 1) / 2.0},
                                     atlas);

  detail::RegParams params;
  RegResult res;
  res.metric = cfg.metric;

  for (int level = int(ap.size()) - 1; level >= 0; --level) {
    const Volume3D& a = ap[std::size_t(level)];
    const Volume3D& q = qp[std::size_t(level)];
    const double f = double(std::int64_t(1) << level);  // spacing ratio vs finest

    // Initial step per parameter, in its own units; 8 halvings end a level.
    std::array<double, 12> step{};
    const double t0 = 2.0 * f * (query.spacing_mm[0] + query.spacing_mm[1] + query.spacing_mm[2]) / 3.0;
    for (int i = 0; i < 3; ++i) step[std::size_t(i)] = t0;
    for (int i = 3; i < 6; ++i) step[std::size_t(i)] = deg_to_rad(2.0 * f);
    for (int i = 6; i < 12; ++i) step[std::size_t(i)] = 0.02 * f;

    double best = detail::reg_score(a, q, params.to_transform(center), cfg.metric);
    ++res.evaluations;
    int halvings = 0;
    for (int sweep = 0; sweep < cfg.max_iters && halvings < 8; ++sweep) {
      bool accepted = false;
      double sweep_gain = 0.0;
      for (int i = 0; i < 12; ++i) {
        for (double sgn : {+1.0, -1.0}) {
          detail::RegParams cand = params;
          cand.p[std::size_t(i)] += sgn * step[std::size_t(i)];
          const double s = detail::reg_score(a, q, cand.to_transform(center), cfg.metric);
          ++res.evaluations;
          if (s > best) {
            sweep_gain += s - best;
            best = s;
            params = cand;
            accepted = true;
            res.accepted_scores.push_back(s);
            break;  // keep the sign that works, move to the next parameter
          }
        }
      }
      if (!accepted) {
        for (double& s : step) s *= 0.5;
        ++halvings;
      } else if (sweep_gain < cfg.tol) {
        break;
      }
    }
  }

  res.transform = params.to_transform(center);
  res.transform.validate();
  const double score = detail::reg_score(atlas, query, res.transform, cfg.metric);
  ++res.evaluations;
  res.metric_value = cfg.metric == RegMetric::ncc ? score : -score;
  return res;
}

// Project an atlas-space target into query space: q = A*a + t.
inline Landmark project_target(const AffineTransform& T, const Landmark& atlas_target) {
  require(atlas_target.frame == Frame::world_mm, "project_target: target must be in world_mm");
  T.validate();
  Landmark out = atlas_target;
  out.coords = T.apply(atlas_target.coords);
  return out;
}

struct RegLocalizeResult {
  Landmark prediction;  // world_mm, in query space
  RegResult reg;
  double seconds = 0.0;
};

// Registration-based localization: fit atlas ROI -> query ROI, then project
// the atlas target through the recovered transform. Wall-clock time covers
// registration + projection (the part competing with network inference).
inline RegLocalizeResult registration_localize(const Volume3D& atlas_roi,
                                               const Landmark& atlas_target,
                                               const Volume3D& query_roi, const RegConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  RegLocalizeResult out;
  out.reg = register_affine(atlas_roi, query_roi, cfg);
  out.prediction = project_target(out.reg.transform, atlas_target);
  const auto t1 = std::chrono::steady_clock::now();
  out.seconds = std::chrono::duration<double>(t1 - t0).count();
  return out;
}

}  // namespace loc3d
