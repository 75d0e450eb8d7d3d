// loc3d command-line driver: dataset synthesis, training, evaluation, the
// three-method comparison, inference on standalone volumes, gradient checks,
// and single-pair affine registration.

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "loc3d/experiment.hpp"

namespace {

using namespace loc3d;

// Options shared by train/eval/compare/infer. Values from --config are applied
// first, then any flag the user passed explicitly overrides the file.
struct RunOpts {
  CLI::App* cmd = nullptr;
  std::string config_path;
  RunConfig flags;  // parse target; only fields whose flag was seen are copied
  std::string fractions_csv;
  bool no_augment = false;
  bool quiet = false;

  void attach(CLI::App* c) {
    cmd = c;
    c->add_option("--config", config_path, "JSON config file (flags override it)");
    c->add_option("--dataset", flags.dataset_dir, "dataset directory");
    c->add_option("--out", flags.out_dir, "output directory");
    c->add_option("--method", flags.method, "hm | dsnt | reg");
    c->add_option("--roi", flags.roi_size_vox, "cubic ROI size in voxels");
    c->add_option("--spacing", flags.iso_spacing_mm, "isotropic working spacing (mm)");
    c->add_option("--channels", flags.channels, "conv channel widths (4 ints)")->expected(4);
    c->add_option("--sigma", flags.heatmap.sigma_mm, "target Gaussian sigma (mm)");
    c->add_option("--alpha", flags.alpha, "divergence weight in the coordinate loss");
    c->add_option("--lr", flags.adam.lr, "learning rate");
    c->add_option("--weight-decay", flags.adam.weight_decay, "decoupled weight decay");
    c->add_option("--epochs", flags.epochs, "training epochs");
    c->add_option("--batch", flags.batch_size, "batch size");
    c->add_option("--seed", flags.seed, "master seed");
    c->add_option("--fractions", fractions_csv, "training fractions, e.g. 1.0,0.5,0.25");
    c->add_option("--early-stop", flags.early_stop_val_mre_mm,
                  "stop when val MRE (mm) drops below this (0 = off)");
    c->add_flag("--lr-search", flags.lr_search, "grid-search the learning rate");
    c->add_flag("--no-augment", no_augment, "disable training augmentation");
    c->add_flag("--coord-output", flags.dsnt_coordinate_output,
                "decode via the differentiable coordinate readout");
    c->add_option("--reg-metric", flags.reg_metric, "registration metric: ncc | mse");
    c->add_option("--reg-levels", flags.reg_levels, "registration pyramid levels");
    c->add_option("--reg-iters", flags.reg_max_iters, "registration sweeps per level");
    c->add_option("--timing-repeats", flags.timing_repeats, "timing harness repeats");
    c->add_flag("--quiet", quiet, "suppress progress output");
  }

  RunConfig build() const {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_run_config(config_path);
    auto seen = [&](const char* name) { return cmd->count(name) > 0; };
    if (seen("--dataset")) cfg.dataset_dir = flags.dataset_dir;
    if (seen("--out")) cfg.out_dir = flags.out_dir;
    if (seen("--method")) cfg.method = flags.method;
    if (seen("--roi")) cfg.roi_size_vox = flags.roi_size_vox;
    if (seen("--spacing")) cfg.iso_spacing_mm = flags.iso_spacing_mm;
    if (seen("--channels")) cfg.channels = flags.channels;
    if (seen("--sigma")) cfg.heatmap.sigma_mm = flags.heatmap.sigma_mm;
    if (seen("--alpha")) cfg.alpha = flags.alpha;
    if (seen("--lr")) cfg.adam.lr = flags.adam.lr;
    if (seen("--weight-decay")) cfg.adam.weight_decay = flags.adam.weight_decay;
    if (seen("--epochs")) cfg.epochs = flags.epochs;
    if (seen("--batch")) cfg.batch_size = flags.batch_size;
    if (seen("--seed")) cfg.seed = flags.seed;
    if (seen("--fractions")) {
      cfg.fractions.clear();
      std::string tok;
      for (char ch : fractions_csv + ",")
        if (ch == ',') {
          if (!tok.empty()) cfg.fractions.push_back(std::stod(tok));
          tok.clear();
        } else {
          tok += ch;
        }
    }
    if (seen("--early-stop")) cfg.early_stop_val_mre_mm = flags.early_stop_val_mre_mm;
    if (seen("--lr-search")) cfg.lr_search = flags.lr_search;
    if (seen("--no-augment")) cfg.use_augment = !no_augment;
    if (seen("--coord-output")) cfg.dsnt_coordinate_output = flags.dsnt_coordinate_output;
    if (seen("--reg-metric")) cfg.reg_metric = flags.reg_metric;
    if (seen("--reg-levels")) cfg.reg_levels = flags.reg_levels;
    if (seen("--reg-iters")) cfg.reg_max_iters = flags.reg_max_iters;
    if (seen("--timing-repeats")) cfg.timing_repeats = flags.timing_repeats;
    if (seen("--quiet")) cfg.verbose = !quiet;
    cfg.validate();
    return cfg;
  }
};

int cmd_phantom_gen(const std::string& out_dir, const std::string& spec_path, int n_train,
                    int n_val, int n_test, int shape, double spacing, std::uint64_t seed,
                    double sigma_label, const CLI::App* cmd) {
  PhantomSpec spec;
  if (!spec_path.empty()) spec = read_phantom_spec(spec_path);
  if (cmd->count("--n-train")) spec.n_train = n_train;
  if (cmd->count("--n-val")) spec.n_val = n_val;
  if (cmd->count("--n-test")) spec.n_test = n_test;
  if (cmd->count("--shape")) spec.head_shape = {shape, shape, shape};
  if (cmd->count("--spacing")) spec.spacing_mm = spacing;
  if (cmd->count("--seed")) spec.seed = seed;
  if (cmd->count("--sigma-label")) spec.sigma_label_mm = sigma_label;
  spec.validate();
  run_phantom_gen(spec, out_dir);
  return 0;
}

int cmd_gradcheck(std::uint64_t seed, int checks, double tol, int size) {
  const auto results = gradcheck_suite(seed, checks, tol, size);
  bool ok = true;
  for (const auto& r : results) {
    std::printf("%-4s checked %d  failed %d  skipped %d  max_rel %.3e  (%.2fs)  %s\n",
                r.name.c_str(), r.checked, r.failed, r.skipped, r.max_rel_err, r.seconds,
                r.pass() ? "PASS" : "FAIL");
    ok = ok && r.pass();
  }
  return ok ? 0 : 1;
}

int cmd_register(const std::string& atlas_path, const std::string& query_path,
                 const std::string& out_path, const std::string& metric, int levels, int iters) {
  const Volume3D atlas = read_rvol(atlas_path);
  const Volume3D query = read_rvol(query_path);
  RegConfig rc;
  rc.metric = reg_metric_from_name(metric);
  rc.levels = levels;
  rc.max_iters = iters;
  const RegResult r = register_affine(atlas, query, rc);
  if (!out_path.empty()) {
    TransformFile tf;
    tf.transform = r.transform;
    tf.metric = r.metric;
    tf.value = r.metric_value;
    write_transform_json(out_path, tf);
  }
  std::printf("%s = %.6f after %lld metric evaluations\n", reg_metric_name(r.metric).c_str(),
              r.metric_value, static_cast<long long>(r.evaluations));
  std::printf("A = [%9.5f %9.5f %9.5f; %9.5f %9.5f %9.5f; %9.5f %9.5f %9.5f]\n",
              r.transform.A.m[0], r.transform.A.m[1], r.transform.A.m[2], r.transform.A.m[3],
              r.transform.A.m[4], r.transform.A.m[5], r.transform.A.m[6], r.transform.A.m[7],
              r.transform.A.m[8]);
  std::printf("t = [%9.5f %9.5f %9.5f] mm\n", r.transform.t[0], r.transform.t[1],
              r.transform.t[2]);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"3D landmark localization: heatmap / coordinate-regression / registration"};
  app.require_subcommand(1);

  // phantom-gen
  auto* pg = app.add_subcommand("phantom-gen", "synthesize a phantom dataset");
  std::string pg_out = "dataset", pg_spec;
  int pg_train = 200, pg_val = 50, pg_test = 50, pg_shape = 128;
  double pg_spacing = 1.0, pg_sigma_label = 1.5;
  std::uint64_t pg_seed = 0;
  pg->add_option("--out", pg_out, "dataset output directory")->required();
  pg->add_option("--spec", pg_spec, "phantom spec JSON (flags override it)");
  pg->add_option("--n-train", pg_train, "training cases");
  pg->add_option("--n-val", pg_val, "validation cases");
  pg->add_option("--n-test", pg_test, "test cases");
  pg->add_option("--shape", pg_shape, "cubic head volume size (voxels)");
  pg->add_option("--spacing", pg_spacing, "voxel spacing (mm)");
  pg->add_option("--seed", pg_seed, "dataset seed");
  pg->add_option("--sigma-label", pg_sigma_label, "pseudo-label noise sigma (mm)");

  // train / eval / compare / infer share RunOpts
  auto* tr = app.add_subcommand("train", "train one localizer on the train split");
  RunOpts tr_o;
  tr_o.attach(tr);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint (or reg) on the test split");
  RunOpts ev_o;
  ev_o.attach(ev);
  std::string ev_ckpt;
  ev->add_option("--checkpoint", ev_ckpt, "checkpoint directory (hm/dsnt methods)");

  auto* cp = app.add_subcommand("compare", "run all methods across training fractions");
  RunOpts cp_o;
  cp_o.attach(cp);

  auto* in = app.add_subcommand("infer", "predict landmarks for standalone volumes");
  RunOpts in_o;
  in_o.attach(in);
  std::string in_ckpt;
  std::vector<std::string> in_vols;
  in->add_option("--checkpoint", in_ckpt, "checkpoint directory")->required();
  in->add_option("volumes", in_vols, "input .rvol volumes")->required();

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of both loss pipelines");
  std::uint64_t gc_seed = 0;
  int gc_checks = 200, gc_size = 6;
  double gc_tol = 1e-4;
  gc->add_option("--seed", gc_seed, "seed");
  gc->add_option("--checks", gc_checks, "parameter samples per pipeline");
  gc->add_option("--tol", gc_tol, "max allowed relative error");
  gc->add_option("--size", gc_size, "cubic input size (voxels)");

  // register
  auto* rg = app.add_subcommand("register", "affine-register a query volume to an atlas");
  std::string rg_atlas, rg_query, rg_out, rg_metric = "ncc";
  int rg_levels = 3, rg_iters = 100;
  rg->add_option("--atlas", rg_atlas, "atlas .rvol")->required();
  rg->add_option("--query", rg_query, "query .rvol")->required();
  rg->add_option("--out", rg_out, "output transform JSON");
  rg->add_option("--metric", rg_metric, "ncc | mse");
  rg->add_option("--levels", rg_levels, "pyramid levels");
  rg->add_option("--iters", rg_iters, "sweeps per level");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*pg)
      return cmd_phantom_gen(pg_out, pg_spec, pg_train, pg_val, pg_test, pg_shape, pg_spacing,
                             pg_seed, pg_sigma_label, pg);
    if (*tr) {
      run_train(tr_o.build());
      return 0;
    }
    if (*ev) {
      const RunConfig cfg = ev_o.build();
      if (cfg.method != "reg")
        loc3d::require(!ev_ckpt.empty(), "eval: --checkpoint is required for hm/dsnt");
      run_eval(cfg, ev_ckpt);
      return 0;
    }
    if (*cp) {
      run_compare(cp_o.build());
      return 0;
    }
    if (*in) {
      const InferOutputs out = run_infer(in_o.build(), in_ckpt, in_vols);
      std::printf("%d/%zu cases succeeded -> %s\n", out.succeeded, in_vols.size(),
                  out.csv_path.string().c_str());
      return out.succeeded > 0 ? 0 : 1;
    }
    if (*gc) return cmd_gradcheck(gc_seed, gc_checks, gc_tol, gc_size);
    if (*rg) return cmd_register(rg_atlas, rg_query, rg_out, rg_metric, rg_levels, rg_iters);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 1;
}
