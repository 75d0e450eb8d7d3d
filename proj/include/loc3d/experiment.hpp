#pragma once

#include <cstdio>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "loc3d/evalstats.hpp"
#include "loc3d/gradcheck.hpp"
#include "loc3d/io.hpp"
#include "loc3d/pipeline.hpp"
#include "loc3d/train.hpp"

namespace loc3d {

// ---------------------------------------------------------------------------
// RunConfig: one structured config for all commands. CLI flags override file
// values; the effective config is echoed into every output directory.
// ---------------------------------------------------------------------------

struct RunConfig {
  std::string dataset_dir;
  std::string out_dir = "out";
  std::string method = "hm";  // hm | dsnt | reg
  int roi_size_vox = 64;
  double iso_spacing_mm = 1.0;
  std::vector<int> channels{8, 16, 16, 8};
  HeatmapConfig heatmap;
  double alpha = 1.0;
  AdamConfig adam;
  AugmentConfig augment;
  bool use_augment = true;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 0;
  std::vector<double> fractions{1.0, 0.5, 0.25};
  double early_stop_val_mre_mm = 0.0;
  bool lr_search = false;
  std::vector<double> lr_grid{1e-2, 1e-3, 1e-4, 1e-5};
  bool dsnt_coordinate_output = false;
  std::string reg_metric = "ncc";
  int reg_levels = 3;
  int reg_max_iters = 100;
  int timing_repeats = 5;
  bool verbose = true;

  void validate() const {
    require(method == "hm" || method == "dsnt" || method == "reg",
            "RunConfig: method must be hm, dsnt, or reg");
    require(roi_size_vox >= 4, "RunConfig: roi_size_vox must be >= 4");
    require(iso_spacing_mm > 0, "RunConfig: iso_spacing_mm must be > 0");
    require(channels.size() == 4, "RunConfig: channels must list 4 widths");
    heatmap.validate();
    require(alpha >= 0, "RunConfig: alpha must be >= 0");
    augment.validate();
    require(epochs >= 1 && batch_size >= 1, "RunConfig: bad epochs/batch_size");
    require(!fractions.empty(), "RunConfig: fractions must be non-empty");
    for (double f : fractions)
      require(f > 0.0 && f <= 1.0, "RunConfig: fractions must lie in (0, 1]");
    require(!lr_grid.empty(), "RunConfig: lr_grid must be non-empty");
    reg_metric_from_name(reg_metric);
    require(reg_levels >= 1 && reg_max_iters >= 1, "RunConfig: bad registration settings");
    require(timing_repeats >= 5, "RunConfig: timing_repeats must be >= 5");
  }

  PipelineConfig pipeline() const { return PipelineConfig{roi_size_vox, iso_spacing_mm}; }

  RegConfig reg() const {
    RegConfig rc;
    rc.metric = reg_metric_from_name(reg_metric);
    rc.levels = reg_levels;
    rc.max_iters = reg_max_iters;
    return rc;
  }

  TrainConfig trainer(LossVariant variant, std::uint64_t train_seed) const {
    TrainConfig tc;
    tc.loss.variant = variant;
    tc.loss.alpha = alpha;
    tc.heatmap = heatmap;
    tc.adam = adam;
    tc.augment = augment;
    tc.use_augment = use_augment;
    tc.epochs = epochs;
    tc.batch_size = batch_size;
    tc.seed = train_seed;
    tc.verbose = verbose;
    tc.early_stop_val_mre_mm = early_stop_val_mre_mm;
    return tc;
  }
};

namespace detail {

inline nlohmann::json run_config_to_json(const RunConfig& c) {
  nlohmann::json j;
  j["dataset_dir"] = c.dataset_dir;
  j["out_dir"] = c.out_dir;
  j["method"] = c.method;
  j["roi_size_vox"] = c.roi_size_vox;
  j["iso_spacing_mm"] = c.iso_spacing_mm;
  j["channels"] = c.channels;
  j["heatmap_sigma_mm"] = c.heatmap.sigma_mm;
  j["heatmap_cutoff"] = c.heatmap.cutoff;
  j["heatmap_peak"] = c.heatmap.peak;
  j["alpha"] = c.alpha;
  j["lr"] = c.adam.lr;
  j["weight_decay"] = c.adam.weight_decay;
  j["beta1"] = c.adam.beta1;
  j["beta2"] = c.adam.beta2;
  j["eps"] = c.adam.eps;
  j["augment_intensity"] = {c.augment.intensity_lo, c.augment.intensity_hi};
  j["augment_scale"] = {c.augment.scale_lo, c.augment.scale_hi};
  j["augment_rot_deg"] = {c.augment.rot_deg_lo, c.augment.rot_deg_hi};
  j["use_augment"] = c.use_augment;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["fractions"] = c.fractions;
  j["early_stop_val_mre_mm"] = c.early_stop_val_mre_mm;
  j["lr_search"] = c.lr_search;
  j["lr_grid"] = c.lr_grid;
  j["dsnt_coordinate_output"] = c.dsnt_coordinate_output;
  j["reg_metric"] = c.reg_metric;
  j["reg_levels"] = c.reg_levels;
  j["reg_max_iters"] = c.reg_max_iters;
  j["timing_repeats"] = c.timing_repeats;
  j["verbose"] = c.verbose;
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known{
      "dataset_dir",   "out_dir",       "method",        "roi_size_vox",
      "iso_spacing_mm", "channels",     "heatmap_sigma_mm", "heatmap_cutoff",
      "heatmap_peak",  "alpha",         "lr",            "weight_decay",
      "beta1",         "beta2",         "eps",           "augment_intensity",
      "augment_scale", "augment_rot_deg", "use_augment", "epochs",
      "batch_size",    "seed",          "fractions",     "early_stop_val_mre_mm",
      "lr_search",     "lr_grid",       "dsnt_coordinate_output", "reg_metric",
      "reg_levels",    "reg_max_iters", "timing_repeats", "verbose"};
  for (const auto& [key, _] : j.items())
    require(known.count(key) > 0, "config: unknown key '" + key + "'");

  RunConfig c;
  auto opt = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  opt("dataset_dir", c.dataset_dir);
  opt("out_dir", c.out_dir);
  opt("method", c.method);
  opt("roi_size_vox", c.roi_size_vox);
  opt("iso_spacing_mm", c.iso_spacing_mm);
  opt("channels", c.channels);
  opt("heatmap_sigma_mm", c.heatmap.sigma_mm);
  opt("heatmap_cutoff", c.heatmap.cutoff);
  opt("heatmap_peak", c.heatmap.peak);
  opt("alpha", c.alpha);
  opt("lr", c.adam.lr);
  opt("weight_decay", c.adam.weight_decay);
  opt("beta1", c.adam.beta1);
  opt("beta2", c.adam.beta2);
  opt("eps", c.adam.eps);
  if (j.contains("augment_intensity")) {
    c.augment.intensity_lo = j["augment_intensity"].at(0).get<double>();
    c.augment.intensity_hi = j["augment_intensity"].at(1).get<double>();
  }
  if (j.contains("augment_scale")) {
    c.augment.scale_lo = j["augment_scale"].at(0).get<double>();
    c.augment.scale_hi = j["augment_scale"].at(1).get<double>();
  }
  if (j.contains("augment_rot_deg")) {
    c.augment.rot_deg_lo = j["augment_rot_deg"].at(0).get<double>();
    c.augment.rot_deg_hi = j["augment_rot_deg"].at(1).get<double>();
  }
  opt("use_augment", c.use_augment);
  opt("epochs", c.epochs);
  opt("batch_size", c.batch_size);
  opt("seed", c.seed);
  opt("fractions", c.fractions);
  opt("early_stop_val_mre_mm", c.early_stop_val_mre_mm);
  opt("lr_search", c.lr_search);
  opt("lr_grid", c.lr_grid);
  opt("dsnt_coordinate_output", c.dsnt_coordinate_output);
  opt("reg_metric", c.reg_metric);
  opt("reg_levels", c.reg_levels);
  opt("reg_max_iters", c.reg_max_iters);
  opt("timing_repeats", c.timing_repeats);
  opt("verbose", c.verbose);
  return c;
}

}  // namespace detail

inline RunConfig load_run_config(const std::filesystem::path& path) {
  return detail::run_config_from_json(detail::read_json_file(path));
}

inline void echo_effective_config(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
  detail::write_json_file(std::filesystem::path(cfg.out_dir) / "effective_config.json",
                          detail::run_config_to_json(cfg));
}

inline std::uint64_t derive_seed(std::uint64_t master, const std::string& tag) {
  return mix64(master ^ hash_str(tag));
}

// ---------------------------------------------------------------------------
// Dataset -> prepared cases -> train sets.
// ---------------------------------------------------------------------------

struct CaseBundle {
  PreparedCase pc;
  Landmark truth_left, truth_right, pseudo_left, pseudo_right;  // world_mm
};

struct SplitBundles {
  std::vector<CaseBundle> cases;
  std::vector<std::pair<std::string, std::string>> failures;  // id -> reason
};

// Run stage 1 on every case of a split. Detection failures are recorded and
// the case is skipped; everything else propagates.
inline SplitBundles prepare_split(const std::filesystem::path& dataset_dir,
                                  const std::vector<std::string>& ids,
                                  const PipelineConfig& pcfg) {
  SplitBundles out;
  for (const auto& id : ids) {
    StoredCase sc = load_case(dataset_dir, id);
    try {
      CaseBundle b;
      b.pc = prepare_case(id, sc.volume, pcfg);
      b.truth_left = sc.truth_left;
      b.truth_right = sc.truth_right;
      b.pseudo_left = sc.pseudo_left;
      b.pseudo_right = sc.pseudo_right;
      out.cases.push_back(std::move(b));
    } catch (const DetectionFailure& e) {
      out.failures.emplace_back(id, e.what());
    }
  }
  return out;
}

// Two samples per case (left mirrored + right), labelled with the pseudo
// annotations mapped into the ROI voxel frame. Samples whose label falls
// outside the ROI are dropped (counted by the caller via size difference).
inline TrainSet bundles_to_train_set(const std::vector<CaseBundle>& bundles) {
  TrainSet set;
  set.reserve(2 * bundles.size());
  for (const auto& b : bundles) {
    for (bool left : {true, false}) {
      TrainSample s;
      s.roi = left ? b.pc.roi_left : b.pc.roi_right;
      s.label_vox = world_to_roi_vox(left ? b.pseudo_left.coords : b.pseudo_right.coords, b.pc, left);
      bool inside = true;
      for (int a = 0; a < 3; ++a)
        inside = inside && s.label_vox[a] >= 0.0 && s.label_vox[a] <= double(s.roi.shape[a] - 1);
      if (inside) set.push_back(std::move(s));
    }
  }
  return set;
}

// ---------------------------------------------------------------------------
// Evaluation on test bundles.
// ---------------------------------------------------------------------------

inline EvalReport evaluate_net(const LocalizerNet& net, const std::vector<CaseBundle>& test,
                               const std::string& method, double fraction,
                               bool coordinate_output) {
  std::vector<std::string> ids;
  std::vector<double> errors, seconds;
  for (const auto& b : test) {
    const CasePrediction p = localize_with_net(net, b.pc, coordinate_output);
    ids.push_back(b.pc.id + "/left");
    errors.push_back(norm3(sub3(p.left.coords, b.truth_left.coords)));
    ids.push_back(b.pc.id + "/right");
    errors.push_back(norm3(sub3(p.right.coords, b.truth_right.coords)));
    seconds.push_back(p.seconds);
  }
  return make_eval_report(method, fraction, std::move(ids), std::move(errors),
                          std::move(seconds));
}

inline EvalReport evaluate_registration(const RegAtlas& atlas, const std::vector<CaseBundle>& test,
                                        const RegConfig& rcfg, double fraction = 1.0) {
  std::vector<std::string> ids;
  std::vector<double> errors, seconds;
  for (const auto& b : test) {
    const CasePrediction p = localize_with_registration(atlas, b.pc, rcfg);
    ids.push_back(b.pc.id + "/left");
    errors.push_back(norm3(sub3(p.left.coords, b.truth_left.coords)));
    ids.push_back(b.pc.id + "/right");
    errors.push_back(norm3(sub3(p.right.coords, b.truth_right.coords)));
    seconds.push_back(p.seconds);
  }
  return make_eval_report("reg", fraction, std::move(ids), std::move(errors), std::move(seconds));
}

// The atlas for the registration baseline: the first training case, annotated
// with its pseudo labels (the single "expert annotation" available to it).
inline RegAtlas atlas_from_bundle(const CaseBundle& b) {
  return make_reg_atlas(b.pc, b.pseudo_left.coords, b.pseudo_right.coords);
}

// ---------------------------------------------------------------------------
// Commands.
// ---------------------------------------------------------------------------

inline DatasetManifest run_phantom_gen(const PhantomSpec& spec, const std::string& out_dir) {
  const DatasetManifest man = generate_dataset(spec, out_dir);
  std::printf("wrote %d cases (%zu train / %zu val / %zu test) to %s\n", spec.n_cases(),
              man.train_ids.size(), man.val_ids.size(), man.test_ids.size(), out_dir.c_str());
  return man;
}

struct TrainOutputs {
  TrainResult result;
  std::filesystem::path checkpoint_dir;
  double best_lr = 0.0;
};

namespace detail {

inline nlohmann::json train_log_json(const TrainResult& r) {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& e : r.log)
    log.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_mre_mm", e.train_mre_mm},
                   {"val_mre_mm", e.val_mre_mm}});
  return {{"epochs", log},
          {"best_epoch", r.best_epoch},
          {"best_val_mre_mm", r.best_val_mre_mm},
          {"diverged", r.diverged}};
}

}  // namespace detail

// Train one model on the dataset's train split, select on the val split,
// write the checkpoint + log under out_dir.
inline TrainOutputs run_train(const RunConfig& cfg) {
  cfg.validate();
  require(cfg.method == "hm" || cfg.method == "dsnt", "run_train: method must be hm or dsnt");
  echo_effective_config(cfg);
  const DatasetManifest man = read_dataset_manifest(cfg.dataset_dir);

  SplitBundles train_b = prepare_split(cfg.dataset_dir, man.train_ids, cfg.pipeline());
  SplitBundles val_b = prepare_split(cfg.dataset_dir, man.val_ids, cfg.pipeline());
  require(train_b.failures.empty() && val_b.failures.empty(),
          "run_train: stage-1 detection failed on a train/val case");
  const TrainSet train = bundles_to_train_set(train_b.cases);
  const TrainSet val = bundles_to_train_set(val_b.cases);

  const LossVariant variant =
      cfg.method == "hm" ? LossVariant::hm_wmse : LossVariant::dsnt;
  const NetArchitecture arch = NetArchitecture::default_localizer(cfg.channels);
  const std::uint64_t train_seed = derive_seed(cfg.seed, "train:" + cfg.method);

  TrainOutputs out;
  if (cfg.lr_search) {
    LrGridResult g = lr_grid_search(arch, train, val, cfg.trainer(variant, train_seed),
                                    cfg.lr_grid);
    out.result = std::move(g.best);
    out.best_lr = g.best_lr;
    if (cfg.verbose)
      for (const auto& [lr, mre] : g.lr_to_val_mre)
        std::printf("lr %g -> val MRE %.3f mm\n", lr, mre);
  } else {
    out.result = train_localizer(arch, train, val, cfg.trainer(variant, train_seed));
    out.best_lr = cfg.adam.lr;
  }

  out.checkpoint_dir = std::filesystem::path(cfg.out_dir) / "checkpoint";
  Checkpoint ck = out.result.best;
  ck.adam.lr = out.best_lr;
  save_checkpoint(out.checkpoint_dir, ck);
  detail::write_json_file(std::filesystem::path(cfg.out_dir) / "train_log.json",
                          detail::train_log_json(out.result));
  if (cfg.verbose)
    std::printf("best epoch %d, val MRE %.3f mm -> %s\n", out.result.best_epoch,
                out.result.best_val_mre_mm, out.checkpoint_dir.string().c_str());
  return out;
}

namespace detail {

inline nlohmann::json eval_report_json(const EvalReport& r) {
  nlohmann::json j;
  j["method"] = r.method;
  j["fraction"] = r.fraction;
  j["n"] = r.errors_mm.size();
  j["mre_mm"] = r.mre_mm.mean;
  j["std_mm"] = r.mre_mm.std;
  j["sdr_radii_mm"] = kSdrRadiiMm;
  j["sdr_pct"] = r.sdr_pct;
  j["ids"] = r.ids;
  j["errors_mm"] = r.errors_mm;
  return j;
}

inline std::string fmt_mre(const MeanStd& m) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.2f±%.2f", m.mean, m.std);
  return buf;
}

// Pad to a display width counting UTF-8 glyphs, not bytes (for the ± sign).
inline std::string pad_utf8(std::string s, std::size_t width) {
  std::size_t glyphs = 0;
  for (unsigned char c : s)
    if ((c & 0xC0) != 0x80) ++glyphs;
  while (glyphs++ < width) s += ' ';
  return s;
}

inline std::string fmt_sdr(const std::array<double, 3>& s) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.0f/%.0f/%.0f", s[0], s[1], s[2]);
  return buf;
}

}  // namespace detail

// Evaluate one trained checkpoint (or the registration baseline) on the test
// split; writes report.json / report.txt / timing.json under out_dir.
inline EvalReport run_eval(const RunConfig& cfg, const std::string& checkpoint_dir) {
  cfg.validate();
  echo_effective_config(cfg);
  const DatasetManifest man = read_dataset_manifest(cfg.dataset_dir);
  SplitBundles test_b = prepare_split(cfg.dataset_dir, man.test_ids, cfg.pipeline());

  EvalReport report;
  if (cfg.method == "reg") {
    SplitBundles atlas_b =
        prepare_split(cfg.dataset_dir, {man.train_ids.at(0)}, cfg.pipeline());
    require(!atlas_b.cases.empty(), "run_eval: atlas case failed stage-1 detection");
    report = evaluate_registration(atlas_from_bundle(atlas_b.cases[0]), test_b.cases, cfg.reg());
  } else {
    const Checkpoint ck = load_checkpoint(checkpoint_dir);
    require(ck.roi_size_vox == cfg.roi_size_vox,
            "run_eval: checkpoint ROI size differs from configured ROI size");
    report = evaluate_net(net_from_checkpoint(ck), test_b.cases, cfg.method, 1.0,
                          cfg.dsnt_coordinate_output);
  }

  nlohmann::json j = detail::eval_report_json(report);
  nlohmann::json fails = nlohmann::json::array();
  for (const auto& [id, why] : test_b.failures) fails.push_back({{"id", id}, {"reason", why}});
  j["detection_failures"] = fails;
  detail::write_json_file(std::filesystem::path(cfg.out_dir) / "report.json", j);
  detail::write_json_file(std::filesystem::path(cfg.out_dir) / "timing.json",
                          {{"seconds_per_case", report.seconds_per_case}});

  std::string txt = "method  MRE (mm)    SDR 2/4/6 mm (%)  sec/case\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-7s %-11s %-17s %.4f\n", report.method.c_str(),
                detail::fmt_mre(report.mre_mm).c_str(), detail::fmt_sdr(report.sdr_pct).c_str(),
                report.seconds_per_case);
  txt += line;
  detail::write_text_file(std::filesystem::path(cfg.out_dir) / "report.txt", txt);
  if (cfg.verbose) std::fputs(txt.c_str(), stdout);
  return report;
}

// ---------------------------------------------------------------------------
// The comparison protocol: HM and DSNT at each training fraction + the
// registration baseline, all evaluated on the same test ROIs.
// ---------------------------------------------------------------------------

struct CompareOutputs {
  std::vector<EvalReport> cells;          // hm/dsnt per fraction, then reg
  std::filesystem::path report_json, report_txt;
};

namespace detail {

// Step-by-step progress log so a failed sub-step leaves partial logs behind.
class StepLog {
 public:
  StepLog(std::filesystem::path path) : path_(std::move(path)) { flush(); }

  template <typename F>
  auto step(const std::string& name, F&& f) {
    try {
      auto result = f();
      done_.push_back(name);
      flush();
      return result;
    } catch (const std::exception& e) {
      failed_ = name + ": " + e.what();
      flush();
      fail_runtime("compare step '" + name + "' failed: " + e.what());
    }
  }

 private:
  void flush() const {
    nlohmann::json j;
    j["completed"] = done_;
    if (!failed_.empty()) j["failed"] = failed_;
    write_json_file(path_, j);
  }

  std::filesystem::path path_;
  std::vector<std::string> done_;
  std::string failed_;
};

inline std::string frac_tag(double f) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%d", int(std::lround(f * 100.0)));
  return buf;
}

}  // namespace detail

inline CompareOutputs run_compare(const RunConfig& cfg) {
  cfg.validate();
  echo_effective_config(cfg);
  const std::filesystem::path out_dir(cfg.out_dir);
  detail::StepLog steps(out_dir / "steps.json");

  const DatasetManifest man = read_dataset_manifest(cfg.dataset_dir);
  const PipelineConfig pcfg = cfg.pipeline();

  // Stage-1 ROIs shared by every method and fraction.
  SplitBundles train_b = steps.step("prepare_train", [&] {
    return prepare_split(cfg.dataset_dir, man.train_ids, pcfg);
  });
  SplitBundles val_b = steps.step("prepare_val", [&] {
    return prepare_split(cfg.dataset_dir, man.val_ids, pcfg);
  });
  SplitBundles test_b = steps.step("prepare_test", [&] {
    return prepare_split(cfg.dataset_dir, man.test_ids, pcfg);
  });
  require(train_b.failures.empty() && val_b.failures.empty(),
          "run_compare: stage-1 detection failed on a train/val case");
  require(!test_b.cases.empty(), "run_compare: no evaluable test cases");

  const TrainSet val_set = bundles_to_train_set(val_b.cases);

  // Nested training subsets: a fixed seeded permutation, prefix per fraction.
  std::vector<int> perm(train_b.cases.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = int(i);
  rng_stream(cfg.seed, "fractions").shuffle(perm);

  const NetArchitecture arch = NetArchitecture::default_localizer(cfg.channels);
  CompareOutputs out;
  std::map<std::string, double> train_seconds;

  for (double frac : cfg.fractions) {
    const std::size_t n_sub = std::max<std::size_t>(
        1, std::size_t(std::lround(frac * double(train_b.cases.size()))));
    std::vector<CaseBundle> sub;
    sub.reserve(n_sub);
    for (std::size_t i = 0; i < n_sub; ++i)
      sub.push_back(train_b.cases[std::size_t(perm[i])]);
    const TrainSet train_set = bundles_to_train_set(sub);

    for (const std::string method : {"hm", "dsnt"}) {
      const std::string tag = method + "_f" + detail::frac_tag(frac);
      const LossVariant variant =
          method == "hm" ? LossVariant::hm_wmse : LossVariant::dsnt;
      const std::uint64_t tseed =
          derive_seed(cfg.seed, "train:" + method + ":" + detail::frac_tag(frac));

      EvalReport cell = steps.step("train_eval_" + tag, [&] {
        if (cfg.verbose)
          std::printf("== %s, %zu training cases ==\n", tag.c_str(), sub.size());
        const auto t0 = std::chrono::steady_clock::now();
        TrainResult r = train_localizer(arch, train_set, val_set, cfg.trainer(variant, tseed));
        train_seconds[tag] =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        save_checkpoint(out_dir / "checkpoints" / tag, r.best);
        detail::write_json_file(out_dir / "checkpoints" / (tag + "_log.json"),
                                detail::train_log_json(r));
        return evaluate_net(net_from_checkpoint(r.best), test_b.cases, method, frac,
                            cfg.dsnt_coordinate_output);
      });
      out.cells.push_back(std::move(cell));
    }
  }

  EvalReport reg_cell = steps.step("registration_baseline", [&] {
    return evaluate_registration(atlas_from_bundle(train_b.cases[std::size_t(perm[0])]),
                                 test_b.cases, cfg.reg());
  });
  out.cells.push_back(reg_cell);

  // Paired t-tests between methods on matched per-case-side errors.
  nlohmann::json ttests = nlohmann::json::array();
  auto cell_of = [&](const std::string& m, double f) -> const EvalReport* {
    for (const auto& c : out.cells)
      if (c.method == m && (m == "reg" || c.fraction == f)) return &c;
    return nullptr;
  };
  for (double frac : cfg.fractions) {
    const std::vector<std::pair<std::string, std::string>> pairs{
        {"hm", "dsnt"}, {"hm", "reg"}, {"dsnt", "reg"}};
    for (const auto& [a, b] : pairs) {
      const EvalReport* ra = cell_of(a, frac);
      const EvalReport* rb = cell_of(b, frac);
      if (ra == nullptr || rb == nullptr) continue;
      const TTestResult t = paired_ttest(ra->errors_mm, rb->errors_mm);
      nlohmann::json jt;
      jt["fraction"] = frac;
      jt["a"] = a;
      jt["b"] = b;
      jt["df"] = t.df;
      jt["degenerate"] = t.degenerate;
      if (!t.degenerate) {
        jt["t"] = t.t;
        jt["p"] = t.p;
        jt["significant_at_0.05"] = t.p < 0.05;
      }
      ttests.push_back(jt);
    }
  }

  // Deterministic report: metrics only (timing lives in timing.json).
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["fractions"] = cfg.fractions;
  j["sdr_radii_mm"] = kSdrRadiiMm;
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : out.cells) cells.push_back(detail::eval_report_json(c));
  j["cells"] = cells;
  j["ttests"] = ttests;
  nlohmann::json trend;
  for (double frac : cfg.fractions) {
    const EvalReport* hm = cell_of("hm", frac);
    const EvalReport* ds = cell_of("dsnt", frac);
    if (hm != nullptr && ds != nullptr)
      trend[detail::frac_tag(frac)] = ds->mre_mm.mean - hm->mre_mm.mean;
  }
  j["trend_dsnt_minus_hm_mre_mm"] = trend;
  j["reference_rater_mre_mm"] = {{"intra", {kIntraRaterReference.mean, kIntraRaterReference.std}},
                                 {"inter", {kInterRaterReference.mean, kInterRaterReference.std}}};
  nlohmann::json fails = nlohmann::json::array();
  for (const auto& [id, why] : test_b.failures) fails.push_back({{"id", id}, {"reason", why}});
  j["detection_failures"] = fails;
  out.report_json = out_dir / "report.json";
  detail::write_json_file(out.report_json, j);

  nlohmann::json timing;
  for (const auto& c : out.cells)
    timing[c.method + (c.method == "reg" ? "" : "_f" + detail::frac_tag(c.fraction))] = {
        {"seconds_per_case", c.seconds_per_case}};
  timing["train_seconds"] = train_seconds;
  detail::write_json_file(out_dir / "timing.json", timing);

  // Fixed-width table, one row per method, columns per requested fraction +
  // timing.
  std::string txt;
  {
    char line[240];
    const std::size_t nf = cfg.fractions.size();
    txt += "              " + detail::pad_utf8("MRE (mm)", 12 * nf) +
           detail::pad_utf8("SDR 2/4/6 mm (%)", 14 * nf) + "sec/ROI\n";
    std::string head = detail::pad_utf8("method", 14);
    for (double frac : cfg.fractions) head += detail::pad_utf8(detail::frac_tag(frac) + "%", 12);
    for (double frac : cfg.fractions) head += detail::pad_utf8(detail::frac_tag(frac) + "%", 14);
    txt += head + "\n";
    for (const std::string m : {"reg", "hm", "dsnt"}) {
      std::string mre_cols, sdr_cols;
      double sec = 0.0;
      for (double frac : cfg.fractions) {
        const EvalReport* c = cell_of(m, frac);
        if (c != nullptr) {
          mre_cols += detail::pad_utf8(detail::fmt_mre(c->mre_mm), 12);
          sdr_cols += detail::pad_utf8(detail::fmt_sdr(c->sdr_pct), 14);
          sec = c->seconds_per_case / 2.0;  // two ROIs per case
        } else {
          mre_cols += detail::pad_utf8("-", 12);
          sdr_cols += detail::pad_utf8("-", 14);
        }
      }
      std::snprintf(line, sizeof line, "%-13s %s%s%.4f\n", m.c_str(), mre_cols.c_str(),
                    sdr_cols.c_str(), sec);
      txt += line;
    }
    std::snprintf(line, sizeof line, "%-13s %s (reference)\n", "intra-rater",
                  detail::fmt_mre(kIntraRaterReference).c_str());
    txt += line;
    std::snprintf(line, sizeof line, "%-13s %s (reference)\n", "inter-rater",
                  detail::fmt_mre(kInterRaterReference).c_str());
    txt += line;
    txt += "\nlow-data trend (DSNT MRE - HM MRE, mm; negative favors DSNT):\n";
    for (double frac : cfg.fractions) {
      const EvalReport* hm = cell_of("hm", frac);
      const EvalReport* ds = cell_of("dsnt", frac);
      if (hm == nullptr || ds == nullptr) continue;
      std::snprintf(line, sizeof line, "  %3s%%: %+.3f\n", detail::frac_tag(frac).c_str(),
                    ds->mre_mm.mean - hm->mre_mm.mean);
      txt += line;
    }
  }
  out.report_txt = out_dir / "report.txt";
  detail::write_text_file(out.report_txt, txt);
  if (cfg.verbose) std::fputs(txt.c_str(), stdout);
  return out;
}

// ---------------------------------------------------------------------------
// Inference on standalone volumes.
// ---------------------------------------------------------------------------

struct InferOutputs {
  int succeeded = 0;
  std::vector<std::pair<std::string, std::string>> failures;
  std::filesystem::path csv_path;
};

inline InferOutputs run_infer(const RunConfig& cfg, const std::string& checkpoint_dir,
                              const std::vector<std::string>& volume_paths) {
  cfg.validate();
  require(!volume_paths.empty(), "run_infer: no input volumes");
  echo_effective_config(cfg);
  const Checkpoint ck = load_checkpoint(checkpoint_dir);
  const LocalizerNet net = net_from_checkpoint(ck);
  PipelineConfig pcfg;
  pcfg.roi_size_vox = ck.roi_size_vox;
  pcfg.iso_spacing_mm = ck.roi_spacing_mm;

  InferOutputs out;
  std::vector<LandmarkRow> rows;
  for (const auto& path : volume_paths) {
    const std::filesystem::path p(path);
    // generic payload names (volume.rvol) identify the case by their directory
    std::string case_id = p.stem().string();
    if (case_id == "volume" && p.has_parent_path())
      case_id = p.parent_path().filename().string();
    try {
      const Volume3D vol = read_rvol(path);
      const PreparedCase pc = prepare_case(case_id, vol, pcfg);
      const CasePrediction p = localize_with_net(net, pc, cfg.dsnt_coordinate_output);
      rows.push_back({case_id, p.left});
      rows.push_back({case_id, p.right});
      ++out.succeeded;
    } catch (const std::exception& e) {
      out.failures.emplace_back(case_id, e.what());
      std::fprintf(stderr, "case %s failed: %s\n", case_id.c_str(), e.what());
    }
  }
  out.csv_path = std::filesystem::path(cfg.out_dir) / "predictions.csv";
  write_landmarks_csv(out.csv_path, rows);
  if (!out.failures.empty()) {
    nlohmann::json fails = nlohmann::json::array();
    for (const auto& [id, why] : out.failures) fails.push_back({{"id", id}, {"reason", why}});
    detail::write_json_file(std::filesystem::path(cfg.out_dir) / "infer_failures.json", fails);
  }
  return out;
}

}  // namespace loc3d
