// Acceptance gate: one pass/fail line per criterion, nonzero exit if any
// criterion fails. Runs the full fast-profile training for both methods, so
// expect several minutes of wall clock on one core.

#include <chrono>
#include <cmath>
#include <cstdarg>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "loc3d/experiment.hpp"

using namespace loc3d;
namespace fs = std::filesystem;
using clk = std::chrono::steady_clock;

namespace {

void check(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

std::string fmt(const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof buf, f, ap);
  va_end(ap);
  return buf;
}

struct Gate {
  int failed = 0;

  template <typename F>
  void criterion(int n, const char* what, F&& fn) {
    const auto t0 = clk::now();
    bool ok = false;
    std::string note;
    try {
      note = fn();
      ok = true;
    } catch (const std::exception& e) {
      note = e.what();
    }
    const double s = std::chrono::duration<double>(clk::now() - t0).count();
    std::printf("[%s] criterion %d: %s — %s (%.1f s)\n", ok ? "PASS" : "FAIL", n, what,
                note.c_str(), s);
    std::fflush(stdout);
    if (!ok) ++failed;
  }
};

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("loc3d_acceptance_" + std::to_string(std::rand()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

// Blob geometry shrunk so cases fit an 80^3 head (fast to render/train).
PhantomSpec small_spec(int n_train, int n_val, int n_test, std::uint64_t seed) {
  PhantomSpec s;
  s.n_train = n_train;
  s.n_val = n_val;
  s.n_test = n_test;
  s.head_shape = {80, 80, 80};
  s.semiaxes_lo_mm = {6.0, 5.0, 4.5};
  s.semiaxes_hi_mm = {8.0, 6.5, 5.5};
  s.lateral_offset_lo_mm = 14.0;
  s.lateral_offset_hi_mm = 18.0;
  s.center_jitter_mm = 4.0;
  s.seed = seed;
  return s;
}

Heatmap3D one_hot(const Index3& shape, int x, int y, int z) {
  Heatmap3D h;
  h.volume = Volume3D(shape, {1, 1, 1}, {0, 0, 0});
  h.volume.at(x, y, z) = 1.0f;
  h.normalized = true;
  return h;
}

// query(qv) = atlas(T^-1(world(qv))): resample the atlas through T
Volume3D warp_through(const Volume3D& v, const AffineTransform& T) {
  Volume3D out = v;
  const AffineTransform Ti = T.inverse();
  for (int x = 0; x < v.shape[0]; ++x)
    for (int y = 0; y < v.shape[1]; ++y)
      for (int z = 0; z < v.shape[2]; ++z) {
        const Vec3 w = voxel_to_world({double(x), double(y), double(z)}, v);
        const Vec3 a = world_to_voxel(Ti.apply(w), v);
        out.data[std::size_t(out.lin(x, y, z))] = float(trilinear_sample(v, a, Border::zero));
      }
  return out;
}

Volume3D reg_blobs(int n = 40) {
  Volume3D v({n, n, n}, {1, 1, 1}, {0, 0, 0});
  auto bump = [&](Vec3 c, Vec3 s, double amp) {
    for (int x = 0; x < n; ++x)
      for (int y = 0; y < n; ++y)
        for (int z = 0; z < n; ++z) {
          const double dx = (x - c[0]) / s[0], dy = (y - c[1]) / s[1], dz = (z - c[2]) / s[2];
          v.data[std::size_t(v.lin(x, y, z))] +=
              float(amp * std::exp(-0.5 * (dx * dx + dy * dy + dz * dz)));
        }
  };
  bump({17, 20, 19}, {5, 7, 4}, 1.0);
  bump({26, 14, 22}, {4, 3, 6}, 0.7);
  bump({20, 28, 14}, {6, 4, 3}, 0.5);
  return v;
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  check(f.good(), "cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig compare_config(const fs::path& dataset, const fs::path& out) {
  RunConfig cfg;
  cfg.dataset_dir = dataset.string();
  cfg.out_dir = out.string();
  cfg.roi_size_vox = 24;
  cfg.channels = {4, 8, 8, 4};
  cfg.epochs = 2;
  cfg.batch_size = 4;
  cfg.seed = 7;
  cfg.fractions = {1.0, 0.5, 0.25};
  cfg.verbose = false;
  return cfg;
}

}  // namespace

int main() {
  Gate gate;
  TempDir work;

  // -- 1: pipeline gradients match 64-bit central finite differences --------
  gate.criterion(1, "analytic gradients match finite differences on both pipelines", [&] {
    const auto results = gradcheck_suite(/*seed=*/1, /*n_checks=*/200, /*tol=*/1e-4,
                                         /*input_size=*/6);
    double total_s = 0.0;
    std::string note;
    for (const auto& r : results) {
      check(r.checked >= 200, r.name + ": fewer than 200 parameter checks");
      check(r.pass(), fmt("%s: %d/%d checks exceeded rel tol 1e-4 (max %.3e)", r.name.c_str(),
                          r.failed, r.checked, r.max_rel_err));
      total_s += r.seconds;
      note += fmt("%s%s max rel %.2e over %d params", note.empty() ? "" : ", ",
                  r.name.c_str(), r.max_rel_err, r.checked);
    }
    check(total_s < 60.0, fmt("runtime %.1f s exceeds 60 s", total_s));
    return note + fmt(", %.1f s total", total_s);
  });

  // -- 2: DSNT exactness -----------------------------------------------------
  gate.criterion(2, "soft-argmax is exact on Diracs, uniform maps, and mixtures", [&] {
    const Index3 shape{7, 6, 5};
    const CoordGrids grids = make_coord_grids(shape);
    Rng rng(2);
    double worst = 0.0;

    for (int k = 0; k < 100; ++k) {
      const int x = rng.below(shape[0]), y = rng.below(shape[1]), z = rng.below(shape[2]);
      const Landmark p = dsnt_extract(one_hot(shape, x, y, z), grids);
      const Vec3 want{-1.0 + 2.0 * x / (shape[0] - 1), -1.0 + 2.0 * y / (shape[1] - 1),
                      -1.0 + 2.0 * z / (shape[2] - 1)};
      for (int a = 0; a < 3; ++a) worst = std::max(worst, std::abs(p.coords[a] - want[a]));
    }
    check(worst <= 1e-6, fmt("Dirac error %.3e > 1e-6", worst));

    Heatmap3D u;
    u.volume = Volume3D(shape, {1, 1, 1}, {0, 0, 0});
    for (auto& v : u.volume.data) v = 1.0f / float(u.volume.data.size());
    u.normalized = true;
    const Landmark c = dsnt_extract(u, grids);
    for (int a = 0; a < 3; ++a)
      check(std::abs(c.coords[a]) <= 1e-6, "uniform heatmap is not centered");

    double worst_lin = 0.0;
    for (int k = 0; k < 100; ++k) {
      Volume3D f1(shape, {1, 1, 1}, {0, 0, 0}), f2 = f1;
      for (auto& v : f1.data) v = float(rng.uniform(-2.0, 2.0));
      for (auto& v : f2.data) v = float(rng.uniform(-2.0, 2.0));
      const Heatmap3D p = softmax_normalize(f1), q = softmax_normalize(f2);
      const double lam = rng.uniform(0.05, 0.95);
      Heatmap3D mix = p;
      for (std::size_t i = 0; i < mix.volume.data.size(); ++i)
        mix.volume.data[i] =
            float(lam * p.volume.data[i] + (1.0 - lam) * q.volume.data[i]);
      const Landmark lp = dsnt_extract(p, grids), lq = dsnt_extract(q, grids);
      const Landmark lm = dsnt_extract(mix, grids);
      for (int a = 0; a < 3; ++a)
        worst_lin = std::max(worst_lin, std::abs(lm.coords[a] - (lam * lp.coords[a] +
                                                                 (1.0 - lam) * lq.coords[a])));
    }
    check(worst_lin <= 1e-6, fmt("linearity error %.3e > 1e-6", worst_lin));
    return fmt("Dirac %.1e, linearity %.1e over 100 pairs", worst, worst_lin);
  });

  // -- 3: loss identities ------------------------------------------------------
  gate.criterion(3, "loss identities hold", [&] {
    Rng rng(3);
    const Index3 shape{17, 17, 17};
    double worst_w = 0.0;
    for (int k = 0; k < 20; ++k) {
      const Vec3 c{rng.uniform(3.0, 13.0), rng.uniform(3.0, 13.0), rng.uniform(3.0, 13.0)};
      const Heatmap3D target = render_gaussian_target(c, shape, {1, 1, 1}, HeatmapConfig{});
      const WmseWeights w = wmse_weights(target);
      worst_w = std::max(worst_w, std::abs(w.w_p + w.w_z - 1.0));
      check(wmse_loss(target.volume, target, w) == 0.0, "wmse(pred=target) != 0");
    }
    check(worst_w <= 1e-12, fmt("|W_p+W_z-1| = %.3e > 1e-12", worst_w));

    Volume3D f(shape, {1, 1, 1}, {0, 0, 0});
    for (auto& v : f.data) v = float(rng.uniform(-1.0, 1.0));
    const Heatmap3D p = softmax_normalize(f);
    check(js_divergence(p, p) == 0.0, "JS(P,P) != 0");

    const double js = js_divergence(one_hot(shape, 2, 3, 4), one_hot(shape, 10, 11, 12));
    check(std::abs(js - std::log(2.0)) <= 1e-9,
          fmt("JS of disjoint Diracs %.12f != ln 2 within 1e-9", js));
    return fmt("max |W_p+W_z-1| %.1e, |JS-ln2| %.1e", worst_w, std::abs(js - std::log(2.0)));
  });

  // -- 4: fast-profile phantom training, both methods -------------------------
  std::string note4;
  gate.criterion(4, "both methods reach test MRE <= 1.5 vox, SDR(4) >= 90%", [&] {
    const fs::path dir = work.path / "train_data";
    generate_dataset(small_spec(200, 20, 50, 424242), dir);
    const DatasetManifest man = read_dataset_manifest(dir);
    const PipelineConfig pcfg{32, 1.0};
    const SplitBundles train_b = prepare_split(dir, man.train_ids, pcfg);
    const SplitBundles val_b = prepare_split(dir, man.val_ids, pcfg);
    const SplitBundles test_b = prepare_split(dir, man.test_ids, pcfg);
    check(train_b.failures.empty() && val_b.failures.empty() && test_b.failures.empty(),
          "stage-1 detection failed on phantom cases");
    const TrainSet tr = bundles_to_train_set(train_b.cases);
    const TrainSet va = bundles_to_train_set(val_b.cases);

    std::string note;
    for (const std::string method : {"hm", "dsnt"}) {
      RunConfig cfg;
      cfg.roi_size_vox = 32;
      cfg.batch_size = 16;
      cfg.seed = 0;
      cfg.verbose = false;
      if (method == "hm") {
        cfg.epochs = 10;  // well under the 30-epoch budget
        cfg.heatmap.sigma_mm = 2.5;  // broader targets optimize better under WMSE
      } else {
        cfg.epochs = 12;
      }
      const LossVariant variant = method == "hm" ? LossVariant::hm_wmse : LossVariant::dsnt;
      const auto t0 = clk::now();
      const TrainResult r =
          train_localizer(NetArchitecture::default_localizer(cfg.channels), tr, va,
                          cfg.trainer(variant, derive_seed(cfg.seed, "train:" + method)));
      const double train_s = std::chrono::duration<double>(clk::now() - t0).count();
      const EvalReport rep =
          evaluate_net(net_from_checkpoint(r.best), test_b.cases, method, 1.0, false);
      check(r.best_epoch <= 30, method + ": exceeded 30 epochs");
      check(train_s < 900.0, fmt("%s: training took %.0f s (>= 15 min)", method.c_str(), train_s));
      check(rep.mre_mm.mean <= 1.5,
            fmt("%s: test MRE %.3f mm > 1.5 voxels", method.c_str(), rep.mre_mm.mean));
      check(rep.sdr_pct[1] >= 90.0,
            fmt("%s: SDR(4 vox) %.1f%% < 90%%", method.c_str(), rep.sdr_pct[1]));
      note += fmt("%s%s MRE %.3f mm SDR4 %.0f%% in %.0f s/%d epochs",
                  note.empty() ? "" : "; ", method.c_str(), rep.mre_mm.mean, rep.sdr_pct[1],
                  train_s, cfg.epochs);
    }
    note4 = note;
    return note;
  });

  // -- 5: network inference vs registration timing ----------------------------
  gate.criterion(5, "network inference >= 10x faster than registration per 64^3 ROI", [&] {
    PhantomSpec s;  // default geometry needs the full 128^3 head
    s.n_train = 2;
    s.n_val = 0;
    s.n_test = 0;
    s.seed = 5;
    const PhantomCase a = generate_case(s, 0, false);
    const PhantomCase b = generate_case(s, 1, false);
    const PipelineConfig pcfg{64, 1.0};
    const PreparedCase pa = prepare_case(a.id, a.volume, pcfg);
    const PreparedCase pb = prepare_case(b.id, b.volume, pcfg);

    const LocalizerNet net = LocalizerNet::init(NetArchitecture::default_localizer(), 5);
    const double t_net = timing_harness(
        [&] { decode_prediction_vox(net_forward_roi(net, pb.roi_right), false); }, 5);

    const RegAtlas atlas = make_reg_atlas(pa, a.pseudo_left.coords, a.pseudo_right.coords);
    const RegConfig rcfg;
    const double t_reg = timing_harness(
        [&] { localize_side_with_registration(atlas.roi_right, atlas.target_right_vox, pb,
                                              false, rcfg); },
        5);
    const double ratio = t_reg / t_net;
    check(ratio >= 10.0, fmt("only %.1fx (net %.3f s, reg %.3f s)", ratio, t_net, t_reg));
    return fmt("net %.3f s, registration %.3f s per ROI: %.0fx", t_net, t_reg, ratio);
  });

  // -- 6 & 9: the comparison protocol (shared small dataset) -------------------
  const fs::path cmp_data = work.path / "cmp_data";
  fs::path cmp_report_a;
  gate.criterion(6, "fraction comparison completes and reports the low-data trend", [&] {
    generate_dataset(small_spec(12, 2, 4, 77), cmp_data);
    const RunConfig cfg = compare_config(cmp_data, work.path / "cmp_a");
    const CompareOutputs out = run_compare(cfg);
    check(out.cells.size() == 7, fmt("expected 7 cells, got %zu", out.cells.size()));
    const nlohmann::json rep = detail::read_json_file(out.report_json);
    const auto& trend = rep.at("trend_dsnt_minus_hm_mre_mm");
    check(trend.size() == 3, "trend report missing fractions");
    check(rep.at("ttests").is_array() && !rep.at("ttests").empty(), "t-tests missing");
    cmp_report_a = out.report_json;
    std::string note = "DSNT-HM MRE trend (reported, not asserted):";
    for (const auto& [key, val] : trend.items())
      note += fmt(" %s%%: %+.2f mm", key.c_str(), val.get<double>());
    return note;
  });

  gate.criterion(9, "repeated comparison runs are byte-identical", [&] {
    check(!cmp_report_a.empty(), "criterion 6 did not produce a report");
    const RunConfig cfg = compare_config(cmp_data, work.path / "cmp_b");
    const CompareOutputs out = run_compare(cfg);
    check(read_bytes(cmp_report_a) == read_bytes(out.report_json),
          "report.json differs between reruns with the same seed");
    return fmt("report.json identical across reruns (%zu bytes)",
               read_bytes(out.report_json).size());
  });

  // -- 7: registration baseline recovery ---------------------------------------
  gate.criterion(7, "affine registration recovers known perturbations", [&] {
    const Volume3D atlas = reg_blobs();
    const RegConfig cfg;
    const Vec3 center{19.5, 19.5, 19.5};

    // self-registration: identity within 1e-6
    const RegResult self = register_affine(atlas, atlas, cfg);
    for (int i = 0; i < 9; ++i)
      check(std::abs(self.transform.A.m[std::size_t(i)] - (i % 4 == 0 ? 1.0 : 0.0)) <= 1e-6,
            "self-registration linear part is not identity");
    for (int a = 0; a < 3; ++a)
      check(std::abs(self.transform.t[a]) <= 1e-6, "self-registration translation != 0");

    // translation (2, -3, 1) mm: endpoint error at probe points <= 0.25 mm
    AffineTransform T;
    T.t = {2.0, -3.0, 1.0};
    const RegResult rt = register_affine(atlas, warp_through(atlas, T), cfg);
    double worst_t = 0.0;
    for (const Vec3& p : {Vec3{12, 14, 13}, Vec3{20, 20, 20}, Vec3{27, 25, 24}}) {
      const Vec3 want = T.apply(p), got = rt.transform.apply(p);
      for (int a = 0; a < 3; ++a) worst_t = std::max(worst_t, std::abs(want[a] - got[a]));
    }
    check(worst_t <= 0.25, fmt("translation endpoint error %.3f mm > 0.25", worst_t));

    // 5 degree z-rotation about the volume center: angle error <= 0.5 deg
    const double ang = deg_to_rad(5.0);
    AffineTransform R;
    R.A = Mat3{{std::cos(ang), -std::sin(ang), 0, std::sin(ang), std::cos(ang), 0, 0, 0, 1}};
    R.t = sub3(center, R.A.apply(center));
    const RegResult rr = register_affine(atlas, warp_through(atlas, R), cfg);
    const double got_deg =
        std::atan2(rr.transform.A.m[3], rr.transform.A.m[0]) * 180.0 / M_PI;
    check(std::abs(got_deg - 5.0) <= 0.5, fmt("rotation recovered as %.2f deg", got_deg));
    return fmt("translation err %.3f mm, rotation %.2f deg, self-reg exact", worst_t, got_deg);
  });

  // -- 8: statistics -------------------------------------------------------------
  gate.criterion(8, "t-test matches the derived check and SDR is monotone", [&] {
    const TTestResult tt = paired_ttest({1.0, 2.0, 3.0}, {0.0, 0.0, 0.0});
    check(std::abs(tt.t - 3.4641) <= 1e-3, fmt("t = %.6f != 3.4641", tt.t));
    check(tt.df == 2.0, "df != 2");
    check(std::abs(tt.p - 0.0742) <= 1e-3, fmt("p = %.6f != 0.0742", tt.p));

    Rng rng(8);
    for (int k = 0; k < 1000; ++k) {
      std::vector<double> errors(20);
      for (auto& e : errors) e = rng.uniform(0.0, 8.0);
      const std::array<double, 3> s = sdr(errors);
      check(s[0] <= s[1] && s[1] <= s[2], "SDR not monotone in the radius");
    }
    return fmt("t %.4f, p %.4f, 1000 SDR lists monotone", tt.t, tt.p);
  });

  std::printf("%d/9 criteria passed\n", 9 - gate.failed);
  return gate.failed == 0 ? 0 : 1;
}
