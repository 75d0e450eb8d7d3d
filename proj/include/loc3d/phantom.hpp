#pragma once

#include <string>
#include <vector>

#include "loc3d/geometry.hpp"
#include "loc3d/volume.hpp"

namespace loc3d {

// Synthetic head-scale phantom: smooth background plus two mirror-symmetric
// soft ellipsoid blobs. Each blob carries an invisible target at a fixed
// offset in the blob's local frame; pseudo-labels are the targets corrupted
// by isotropic Gaussian noise (a stand-in for registration-derived labels).
struct PhantomSpec {
  int n_train = 200, n_val = 50, n_test = 50;
  Index3 head_shape{128, 128, 128};
  double spacing_mm = 1.0;

  Vec3 semiaxes_lo_mm{8.0, 6.5, 5.5};
  Vec3 semiaxes_hi_mm{11.0, 9.0, 7.5};
  double blob_rot_deg = 10.0;       // pose range, degrees per axis
  double blob_contrast = 0.7;       // blob intensity above background
  double edge_softness = 0.12;      // sigmoid falloff width in ellipsoid-radius units
  double lateral_offset_lo_mm = 16.0, lateral_offset_hi_mm = 24.0;  // blob distance from midline
  double center_jitter_mm = 6.0;    // in-plane placement jitter
  double mirror_jitter_mm = 0.5;    // left/right asymmetry

  double background_level = 0.15;
  double background_amp = 0.03;     // amplitude of the smooth background field
  double noise_bg = 0.02;           // per-voxel additive Gaussian noise

  Vec3 target_offset_mm{4.0, 3.0, 2.0};  // right-side offset in the blob-local frame
  double sigma_anat_mm = 0.5;       // inter-case anatomical jitter
  double sigma_label_mm = 1.5;      // pseudo-label noise

  std::uint64_t seed = 0;

  int n_cases() const { return n_train + n_val + n_test; }

  void validate() const {
    require(n_train >= 1 && n_val >= 0 && n_test >= 0, "PhantomSpec: bad split sizes");
    require(head_shape[0] >= 2 && head_shape[1] >= 2 && head_shape[2] >= 2,
            "PhantomSpec: head shape must be >= 2 per axis");
    require(spacing_mm > 0, "PhantomSpec: spacing must be > 0");
    for (int a = 0; a < 3; ++a)
      require(semiaxes_lo_mm[a] > 0 && semiaxes_lo_mm[a] <= semiaxes_hi_mm[a],
              "PhantomSpec: semi-axes range ill-ordered");
    require(sigma_anat_mm >= 0 && sigma_label_mm >= 0 && noise_bg >= 0,
            "PhantomSpec: sigmas must be >= 0");
    require(blob_contrast > 0, "PhantomSpec: contrast must be > 0");
    // the blob (with falloff margin) must fit between midline offset and volume edge
    const double margin = max_blob_extent_mm() + 2.0;
    const Vec3 ext{head_shape[0] * spacing_mm, head_shape[1] * spacing_mm,
                   head_shape[2] * spacing_mm};
    require(ext[0] / 2.0 > lateral_offset_hi_mm + margin,
            "PhantomSpec: blobs do not fit laterally in the volume");
    require(ext[1] / 2.0 > center_jitter_mm + margin && ext[2] / 2.0 > center_jitter_mm + margin,
            "PhantomSpec: blobs do not fit in the volume cross-section");
  }

  double max_blob_extent_mm() const {
    double m = 0;
    for (int a = 0; a < 3; ++a) m = std::max(m, semiaxes_hi_mm[a]);
    return m * (1.0 + 8.0 * edge_softness);
  }

  std::string case_id(int index) const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%04d", index);
    return buf;
  }

  std::string split_of(int index) const {
    if (index < n_train) return "train";
    if (index < n_train + n_val) return "val";
    return "test";
  }
};

struct PhantomCase {
  std::string id;
  Volume3D volume;
  Landmark truth_left, truth_right;    // world mm
  Landmark pseudo_left, pseudo_right;  // world mm
  Volume3D mask_left, mask_right;      // binary, 1 inside the ellipsoid
  Vec3 blob_center_left_mm{0, 0, 0}, blob_center_right_mm{0, 0, 0};
};

namespace detail {

struct BlobParams {
  Vec3 center_mm;
  Vec3 semiaxes_mm;
  Mat3 rot;
};

// Additive soft ellipsoid: contrast * sigmoid((1 - r)/softness) with r the
// normalized ellipsoid radius. Rendered only inside its bounding box. Also
// fills the binary mask (r <= 1).
inline void render_blob(Volume3D& vol, Volume3D* mask, const BlobParams& bp, double contrast,
                        double softness) {
  const Mat3 rt = bp.rot.transpose();
  Vec3 half_extent;
  for (int i = 0; i < 3; ++i) {
    double acc = 0;
    for (int j = 0; j < 3; ++j) {
      const double v = bp.rot.m[std::size_t(3 * i + j)] * bp.semiaxes_mm[std::size_t(j)];
      acc += v * v;
    }
    half_extent[std::size_t(i)] = std::sqrt(acc) * (1.0 + 8.0 * softness) + 1.0;
  }
  Index3 lo, hi;
  for (int a = 0; a < 3; ++a) {
    const Vec3 cv = world_to_voxel(bp.center_mm, vol);
    lo[a] = std::max(0, int(std::floor(cv[a] - half_extent[a] / vol.spacing_mm[a])));
    hi[a] = std::min(vol.shape[a] - 1, int(std::ceil(cv[a] + half_extent[a] / vol.spacing_mm[a])));
  }
  for (int x = lo[0]; x <= hi[0]; ++x)
    for (int y = lo[1]; y <= hi[1]; ++y)
      for (int z = lo[2]; z <= hi[2]; ++z) {
        const Vec3 p = voxel_to_world({double(x), double(y), double(z)}, vol);
        const Vec3 u = rt.apply(sub3(p, bp.center_mm));
        const double r = std::sqrt((u[0] / bp.semiaxes_mm[0]) * (u[0] / bp.semiaxes_mm[0]) +
                                   (u[1] / bp.semiaxes_mm[1]) * (u[1] / bp.semiaxes_mm[1]) +
                                   (u[2] / bp.semiaxes_mm[2]) * (u[2] / bp.semiaxes_mm[2]));
        vol.at(x, y, z) += float(contrast / (1.0 + std::exp((r - 1.0) / softness)));
        if (mask && r <= 1.0) mask->at(x, y, z) = 1.0f;
      }
}

}  // namespace detail

// Deterministic per-case generation; cases are independent given a PhantomSpec.
inline PhantomCase generate_case(const PhantomSpec& spec, int index, bool with_masks = true) {
  spec.validate();
  Rng rng = rng_stream(spec.seed, "dataset", std::uint64_t(index));

  const Index3 sh = spec.head_shape;
  const double sp = spec.spacing_mm;
  PhantomCase pc;
  pc.id = spec.case_id(index);
  pc.volume = Volume3D(sh, {sp, sp, sp}, {0, 0, 0});

  const Vec3 mid{(sh[0] - 1) * sp / 2.0, (sh[1] - 1) * sp / 2.0, (sh[2] - 1) * sp / 2.0};

  // blob pose (right side; left is its mirror through the midplane)
  const double lateral = rng.uniform(spec.lateral_offset_lo_mm, spec.lateral_offset_hi_mm);
  const double jy = rng.uniform(-spec.center_jitter_mm, spec.center_jitter_mm);
  const double jz = rng.uniform(-spec.center_jitter_mm, spec.center_jitter_mm);
  Vec3 semiaxes;
  for (int a = 0; a < 3; ++a)
    semiaxes[a] = rng.uniform(spec.semiaxes_lo_mm[a], spec.semiaxes_hi_mm[a]);
  const double rr = deg_to_rad(spec.blob_rot_deg);
  const double ax = rng.uniform(-rr, rr), ay = rng.uniform(-rr, rr), az = rng.uniform(-rr, rr);
  const Vec3 mirror_jit = scale3(rng.normal3(), spec.mirror_jitter_mm);

  detail::BlobParams right;
  right.center_mm = {mid[0] + lateral, mid[1] + jy, mid[2] + jz};
  right.semiaxes_mm = semiaxes;
  right.rot = Mat3::euler_xyz(ax, ay, az);

  const Mat3 mirror = Mat3::diag(-1, 1, 1);
  detail::BlobParams left;
  left.center_mm = add3(Vec3{mid[0] - lateral, mid[1] + jy, mid[2] + jz}, mirror_jit);
  left.semiaxes_mm = semiaxes;
  left.rot = mirror.mul(right.rot).mul(mirror);

  // targets: fixed offset in the blob-local frame (+ anatomical jitter)
  const Vec3 off_r = right.rot.apply(spec.target_offset_mm);
  const Vec3 off_l = left.rot.apply({-spec.target_offset_mm[0], spec.target_offset_mm[1],
                                     spec.target_offset_mm[2]});
  Vec3 truth_r = add3(add3(right.center_mm, off_r), scale3(rng.normal3(), spec.sigma_anat_mm));
  Vec3 truth_l = add3(add3(left.center_mm, off_l), scale3(rng.normal3(), spec.sigma_anat_mm));

  // pseudo labels: truth + isotropic label noise
  const Vec3 pseudo_r = add3(truth_r, scale3(rng.normal3(), spec.sigma_label_mm));
  const Vec3 pseudo_l = add3(truth_l, scale3(rng.normal3(), spec.sigma_label_mm));

  // smooth background: base level + three broad Gaussian bumps
  struct Bump {
    Vec3 c;
    double s, a;
  };
  std::array<Bump, 3> bumps;
  for (auto& b : bumps) {
    b.c = {rng.uniform(0, (sh[0] - 1) * sp), rng.uniform(0, (sh[1] - 1) * sp),
           rng.uniform(0, (sh[2] - 1) * sp)};
    b.s = rng.uniform(30.0, 60.0);
    b.a = rng.uniform(-spec.background_amp, spec.background_amp);
  }
  std::int64_t idx = 0;
  for (int x = 0; x < sh[0]; ++x)
    for (int y = 0; y < sh[1]; ++y)
      for (int z = 0; z < sh[2]; ++z, ++idx) {
        const Vec3 p{x * sp, y * sp, z * sp};
        double v = spec.background_level;
        for (const auto& b : bumps) {
          const Vec3 d = sub3(p, b.c);
          v += b.a * std::exp(-dot3(d, d) / (2.0 * b.s * b.s));
        }
        pc.volume.data[std::size_t(idx)] = float(v);
      }

  if (with_masks) {
    pc.mask_left = Volume3D(sh, {sp, sp, sp}, {0, 0, 0});
    pc.mask_right = Volume3D(sh, {sp, sp, sp}, {0, 0, 0});
  }
  detail::render_blob(pc.volume, with_masks ? &pc.mask_left : nullptr, left, spec.blob_contrast,
                      spec.edge_softness);
  detail::render_blob(pc.volume, with_masks ? &pc.mask_right : nullptr, right, spec.blob_contrast,
                      spec.edge_softness);

  if (spec.noise_bg > 0)
    for (auto& v : pc.volume.data) v = float(double(v) + spec.noise_bg * rng.normal());

  pc.blob_center_left_mm = left.center_mm;
  pc.blob_center_right_mm = right.center_mm;
  pc.truth_left = Landmark{"truth_left", Frame::world_mm, truth_l};
  pc.truth_right = Landmark{"truth_right", Frame::world_mm, truth_r};
  pc.pseudo_left = Landmark{"pseudo_left", Frame::world_mm, pseudo_l};
  pc.pseudo_right = Landmark{"pseudo_right", Frame::world_mm, pseudo_r};
  return pc;
}

// ---------------------------------------------------------------------------
// Stage 1: blob detection
// ---------------------------------------------------------------------------

struct DetectionFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Otsu's threshold over a 256-bin histogram. If the foreground fraction is
// implausibly large for a two-blob scan (background got split instead), the
// threshold is recomputed among above-threshold voxels, up to 3 rounds.
inline float otsu_threshold(const std::vector<float>& data) {
  float lo = data[0], hi = data[0];
  for (float v : data) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  if (hi == lo) return hi;

  float floor_v = lo;
  float thr = lo;
  for (int round = 0; round < 3; ++round) {
    constexpr int kBins = 256;
    std::array<std::int64_t, kBins> hist{};
    const double scale = kBins / (double(hi) - double(floor_v));
    std::int64_t total = 0;
    for (float v : data) {
      if (v < floor_v) continue;
      int b = int((double(v) - floor_v) * scale);
      b = std::clamp(b, 0, kBins - 1);
      ++hist[std::size_t(b)];
      ++total;
    }
    double sum_all = 0;
    for (int b = 0; b < kBins; ++b) sum_all += double(b) * double(hist[std::size_t(b)]);
    double w0 = 0, sum0 = 0, best_score = -1;
    int best_bin = 0;
    for (int b = 0; b < kBins - 1; ++b) {
      w0 += double(hist[std::size_t(b)]);
      sum0 += double(b) * double(hist[std::size_t(b)]);
      const double w1 = double(total) - w0;
      if (w0 <= 0 || w1 <= 0) continue;
      const double mu0 = sum0 / w0, mu1 = (sum_all - sum0) / w1;
      const double score = w0 * w1 * (mu0 - mu1) * (mu0 - mu1);
      if (score > best_score) {
        best_score = score;
        best_bin = b;
      }
    }
    thr = floor_v + float((best_bin + 1) / scale);
    std::int64_t above = 0;
    for (float v : data)
      if (v > thr) ++above;
    if (double(above) / double(data.size()) <= 0.10) break;
    floor_v = thr;
  }
  return thr;
}

struct DetectResult {
  Vec3 centroid_left, centroid_right;  // real-valued voxel coordinates
  Index3 center_left, center_right;    // rounded
  RoiBox box_left, box_right;
};

// Threshold -> 26-connected components -> two largest -> centroids; sides
// assigned by centroid x. Returns ROI boxes centered on the rounded
// centroids. Throws DetectionFailure if fewer than two components are found.
inline DetectResult detect_roi(const Volume3D& v, const Index3& roi_size = {64, 64, 64}) {
  v.validate_geometry();
  require(roi_size[0] >= 2 && roi_size[1] >= 2 && roi_size[2] >= 2,
          "detect_roi: roi size must be >= 2 per axis");
  const float thr = otsu_threshold(v.data);

  const int NY = v.shape[1], NZ = v.shape[2];
  std::vector<std::int32_t> label(std::size_t(v.voxels()), 0);
  struct Comp {
    std::int64_t count = 0;
    Vec3 sum{0, 0, 0};
  };
  std::vector<Comp> comps;
  std::vector<std::int64_t> stack;

  for (std::int64_t seed = 0; seed < v.voxels(); ++seed) {
    if (label[std::size_t(seed)] != 0 || v.data[std::size_t(seed)] <= thr) continue;
    const std::int32_t id = std::int32_t(comps.size()) + 1;
    comps.emplace_back();
    Comp& comp = comps.back();
    stack.assign(1, seed);
    label[std::size_t(seed)] = id;
    while (!stack.empty()) {
      const std::int64_t cur = stack.back();
      stack.pop_back();
      const int x = int(cur / (std::int64_t(NY) * NZ));
      const int y = int((cur / NZ) % NY);
      const int z = int(cur % NZ);
      ++comp.count;
      comp.sum = add3(comp.sum, {double(x), double(y), double(z)});
      for (int dx = -1; dx <= 1; ++dx)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dz = -1; dz <= 1; ++dz) {
            if (!dx && !dy && !dz) continue;
            const int nx = x + dx, ny = y + dy, nz = z + dz;
            if (!v.in_bounds(nx, ny, nz)) continue;
            const std::int64_t ni = v.lin(nx, ny, nz);
            if (label[std::size_t(ni)] != 0 || v.data[std::size_t(ni)] <= thr) continue;
            label[std::size_t(ni)] = id;
            stack.push_back(ni);
          }
    }
  }

  // ignore specks; keep the two largest components
  constexpr std::int64_t kMinVoxels = 8;
  int first = -1, second = -1;
  for (int i = 0; i < int(comps.size()); ++i) {
    if (comps[std::size_t(i)].count < kMinVoxels) continue;
    if (first < 0 || comps[std::size_t(i)].count > comps[std::size_t(first)].count) {
      second = first;
      first = i;
    } else if (second < 0 || comps[std::size_t(i)].count > comps[std::size_t(second)].count) {
      second = i;
    }
  }
  if (first < 0 || second < 0)
    throw DetectionFailure("detect_roi: expected two blob components, found " +
                           std::to_string(first < 0 ? 0 : 1));

  Vec3 ca = scale3(comps[std::size_t(first)].sum, 1.0 / double(comps[std::size_t(first)].count));
  Vec3 cb = scale3(comps[std::size_t(second)].sum, 1.0 / double(comps[std::size_t(second)].count));
  DetectResult r;
  r.centroid_left = ca[0] <= cb[0] ? ca : cb;
  r.centroid_right = ca[0] <= cb[0] ? cb : ca;
  for (int a = 0; a < 3; ++a) {
    r.center_left[a] = int(std::llround(r.centroid_left[a]));
    r.center_right[a] = int(std::llround(r.centroid_right[a]));
  }
  auto box_for = [&](const Index3& center) {
    RoiBox box;
    box.size = roi_size;
    for (int a = 0; a < 3; ++a) box.origin_voxel[a] = center[a] - (roi_size[a] + 1) / 2;
    return box;
  };
  r.box_left = box_for(r.center_left);
  r.box_right = box_for(r.center_right);
  return r;
}

}  // namespace loc3d
