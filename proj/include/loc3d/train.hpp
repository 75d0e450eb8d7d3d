#pragma once

#include <algorithm>
#include <cstdio>
#include <limits>
#include <utility>
#include <vector>

#include "loc3d/augment.hpp"
#include "loc3d/io.hpp"
#include "loc3d/lossgraph.hpp"

namespace loc3d {

// One training/validation sample: a canonical-orientation ROI plus its label
// in the ROI voxel frame (real-valued).
struct TrainSample {
  Volume3D roi;
  Vec3 label_vox{0, 0, 0};
};

using TrainSet = std::vector<TrainSample>;

struct TrainConfig {
  LossConfig loss;
  HeatmapConfig heatmap;
  AdamConfig adam;
  AugmentConfig augment;
  bool use_augment = true;
  int epochs = 30;
  int batch_size = 16;
  std::uint64_t seed = 0;
  bool verbose = false;
  double early_stop_val_mre_mm = 0.0;  // > 0: stop once val MRE drops to this

  void validate() const {
    loss.validate();
    heatmap.validate();
    augment.validate();
    require(epochs >= 1, "TrainConfig: epochs must be >= 1");
    require(batch_size >= 1, "TrainConfig: batch_size must be >= 1");
    require(adam.lr > 0, "TrainConfig: learning rate must be > 0");
  }
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;   // mean over the epoch's batches
  double train_mre_mm = 0.0; // argmax decode on the (augmented) training stream
  double val_mre_mm = 0.0;
};

struct TrainResult {
  Checkpoint best;  // parameters at the best-validation epoch
  int best_epoch = -1;
  double best_val_mre_mm = std::numeric_limits<double>::infinity();
  std::vector<EpochLog> log;
  bool diverged = false;
};

// ---------------------------------------------------------------------------
// Decoding predictions from the network output field.
// ---------------------------------------------------------------------------

// Predicted position (ROI voxel frame). Default decode is the hard argmax of
// the output field, which equals the argmax of its softmax heatmap for both
// losses. With coordinate_output the soft DSNT coordinate is returned instead.
inline Vec3 decode_prediction_vox(const Volume3D& field, bool coordinate_output = false) {
  if (!coordinate_output) return hard_argmax(Heatmap3D{field, false}).coords;
  const Heatmap3D hn = softmax_normalize(field);
  const Landmark nc = dsnt_extract(hn);
  return normalized_to_voxel(nc.coords, field.shape);
}

inline double voxel_error_mm(const Vec3& a_vox, const Vec3& b_vox, const Vec3& spacing_mm) {
  const Vec3 d{(a_vox[0] - b_vox[0]) * spacing_mm[0], (a_vox[1] - b_vox[1]) * spacing_mm[1],
               (a_vox[2] - b_vox[2]) * spacing_mm[2]};
  return norm3(d);
}

namespace detail {

inline Volume3D field_slice(const Tensor<float>& out, int n, const Volume3D& geom) {
  Volume3D f(geom.shape, geom.spacing_mm, geom.origin_mm);
  const std::int64_t V = geom.voxels();
  f.data.assign(out.data.begin() + std::size_t(n) * std::size_t(V),
                out.data.begin() + std::size_t(n + 1) * std::size_t(V));
  return f;
}

}  // namespace detail

// Batched no-grad prediction for same-shape ROIs, in the ROI voxel frame.
inline std::vector<Vec3> predict_vox(const LocalizerNet& net, const std::vector<const Volume3D*>& rois,
                                     bool coordinate_output = false, int batch_size = 16) {
  require(batch_size >= 1, "predict_vox: batch_size must be >= 1");
  std::vector<Vec3> preds;
  preds.reserve(rois.size());
  for (std::size_t start = 0; start < rois.size(); start += std::size_t(batch_size)) {
    const int nb = int(std::min(std::size_t(batch_size), rois.size() - start));
    const Volume3D& g0 = *rois[start];
    Tensor<float> x = Tensor<float>::zeros({nb, 1, g0.shape[0], g0.shape[1], g0.shape[2]});
    for (int n = 0; n < nb; ++n) {
      const Volume3D& r = *rois[start + std::size_t(n)];
      require(r.shape == g0.shape, "predict_vox: mixed ROI shapes in one batch");
      std::copy(r.data.begin(), r.data.end(),
                x.data.begin() + std::size_t(n) * std::size_t(g0.voxels()));
    }
    const Tensor<float> out = net_forward(net, x);
    for (int n = 0; n < nb; ++n)
      preds.push_back(decode_prediction_vox(detail::field_slice(out, n, g0), coordinate_output));
  }
  return preds;
}

// Mean radial error (mm) of argmax-decoded predictions over a sample set.
inline double eval_mre_mm(const LocalizerNet& net, const TrainSet& samples, int batch_size = 16) {
  require(!samples.empty(), "eval_mre_mm: empty sample set");
  std::vector<const Volume3D*> rois;
  rois.reserve(samples.size());
  for (const auto& s : samples) rois.push_back(&s.roi);
  const std::vector<Vec3> preds = predict_vox(net, rois, false, batch_size);
  double acc = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    acc += voxel_error_mm(preds[i], samples[i].label_vox, samples[i].roi.spacing_mm);
  return acc / double(samples.size());
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

namespace detail {

struct BatchTensors {
  Tensor<float> x;  // (B,1,X,Y,Z) input
  LossGraphInputs<float> loss_in;
  std::vector<Vec3> labels_vox;
};

inline BatchTensors build_batch(const TrainSet& train, const std::vector<int>& order,
                                std::size_t start, int nb, const TrainConfig& cfg,
                                std::uint64_t seed, int epoch) {
  const Index3 shape = train[0].roi.shape;
  const std::int64_t V = train[0].roi.voxels();
  BatchTensors b;
  b.x = Tensor<float>::zeros({nb, 1, shape[0], shape[1], shape[2]});
  b.loss_in.variant = cfg.loss.variant;
  b.loss_in.alpha = cfg.loss.alpha;
  b.loss_in.target = Tensor<float>::zeros(b.x.shape);
  if (cfg.loss.variant == LossVariant::hm_wmse) {
    b.loss_in.weights = Tensor<float>::zeros(b.x.shape);
  } else {
    b.loss_in.cx = Tensor<float>::zeros({nb, 1, 1, 1, 1});
    b.loss_in.cy = b.loss_in.cx;
    b.loss_in.cz = b.loss_in.cx;
  }

  for (int n = 0; n < nb; ++n) {
    const int idx = order[start + std::size_t(n)];
    const TrainSample& s = train[std::size_t(idx)];
    require(s.roi.shape == shape, "train: all ROIs must share one shape");

    Volume3D roi = s.roi;
    Landmark lm{"target", Frame::voxel, s.label_vox};
    if (cfg.use_augment) {
      Rng rng = rng_stream(seed, "aug", std::uint64_t(epoch), std::uint64_t(idx));
      auto aug = augment_sample(roi, lm, cfg.augment, rng);
      roi = std::move(aug.first);
      lm = aug.second;
    }
    b.labels_vox.push_back(lm.coords);
    std::copy(roi.data.begin(), roi.data.end(), b.x.data.begin() + std::size_t(n) * std::size_t(V));

    Heatmap3D target = render_gaussian_target(lm.coords, shape, roi.spacing_mm, cfg.heatmap);
    if (cfg.loss.variant == LossVariant::hm_wmse) {
      const WmseWeights w = wmse_weights(target);
      float* tp = &b.loss_in.target.data[std::size_t(n) * std::size_t(V)];
      float* wp = &b.loss_in.weights.data[std::size_t(n) * std::size_t(V)];
      for (std::int64_t i = 0; i < V; ++i) {
        tp[i] = target.volume.data[std::size_t(i)];
        wp[i] = tp[i] > 0.0f ? float(w.w_p) : float(w.w_z);
      }
    } else {
      const Heatmap3D dist = renormalize_to_distribution(target);
      std::copy(dist.volume.data.begin(), dist.volume.data.end(),
                b.loss_in.target.data.begin() + std::size_t(n) * std::size_t(V));
      const Vec3 nc = voxel_to_normalized(lm.coords, shape);
      b.loss_in.cx.data[std::size_t(n)] = float(nc[0]);
      b.loss_in.cy.data[std::size_t(n)] = float(nc[1]);
      b.loss_in.cz.data[std::size_t(n)] = float(nc[2]);
    }
  }
  return b;
}

}  // namespace detail

// Train the localizer with the WMSE heatmap loss or the DSNT loss. Fully
// deterministic given the seed: init, shuffling, and augmentation draw from
// named substreams; all reductions run in fixed order.
inline TrainResult train_localizer(const NetArchitecture& arch, const TrainSet& train,
                                   const TrainSet& val, const TrainConfig& cfg) {
  cfg.validate();
  require(!train.empty(), "train_localizer: empty training set");
  require(!val.empty(), "train_localizer: empty validation set");
  const Index3 shape = train[0].roi.shape;
  require(shape[0] == shape[1] && shape[1] == shape[2], "train_localizer: ROIs must be cubic");
  const Vec3 spacing = train[0].roi.spacing_mm;
  require(std::abs(spacing[0] - spacing[1]) < 1e-12 && std::abs(spacing[1] - spacing[2]) < 1e-12,
          "train_localizer: ROI spacing must be isotropic");

  LocalizerNet net = LocalizerNet::init(arch, cfg.seed);
  AdamState adam = AdamState::for_params(net.params);

  // DSNT coordinate grids as graph constants; must outlive every tape below.
  Tensor<float> gx, gy, gz;
  if (cfg.loss.variant == LossVariant::dsnt) {
    const CoordGrids g = make_coord_grids(shape);
    gx = Tensor<float>::zeros({1, 1, shape[0], shape[1], shape[2]});
    gy = gx;
    gz = gx;
    gx.data = g.x;
    gy.data = g.y;
    gz.data = g.z;
  }

  TrainResult res;
  std::vector<int> order(train.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = int(i);

  auto snapshot = [&](int epoch, double val_mre) {
    Checkpoint ck;
    ck.arch = arch;
    ck.params = net.params;
    ck.param_names = net.param_names;
    ck.loss = cfg.loss;
    ck.heatmap = cfg.heatmap;
    ck.adam = cfg.adam;
    ck.seed = cfg.seed;
    ck.epoch = epoch;
    ck.val_mre_mm = val_mre;
    ck.roi_size_vox = shape[0];
    ck.roi_spacing_mm = spacing[0];
    return ck;
  };

  for (int epoch = 0; epoch < cfg.epochs && !res.diverged; ++epoch) {
    Rng shuffle_rng = rng_stream(cfg.seed, "shuffle", std::uint64_t(epoch));
    shuffle_rng.shuffle(order);

    double loss_acc = 0.0, mre_acc = 0.0;
    int batches = 0;
    std::int64_t seen = 0;

    for (std::size_t start = 0; start < train.size() && !res.diverged;
         start += std::size_t(cfg.batch_size)) {
      const int nb = int(std::min(std::size_t(cfg.batch_size), train.size() - start));
      detail::BatchTensors batch =
          detail::build_batch(train, order, start, nb, cfg, cfg.seed, epoch);
      batch.loss_in.gx = &gx;
      batch.loss_in.gy = &gy;
      batch.loss_in.gz = &gz;

      Tape<float> tape;
      std::vector<DiffNode<float>*> pnodes;
      pnodes.reserve(net.params.size());
      for (const auto& p : net.params) pnodes.push_back(tape.input(p, true, "param"));
      DiffNode<float>* x = tape.input(batch.x, false, "image");
      DiffNode<float>* out = nullptr;
      DiffNode<float>* loss = build_loss_graph(tape, arch, pnodes, x, batch.loss_in, &out);

      const double loss_val = double(loss->value.data[0]);
      if (!std::isfinite(loss_val)) {
        res.diverged = true;
        break;
      }

      tape.backward(loss);
      std::vector<Tensor<float>> grads;
      grads.reserve(net.params.size());
      for (auto* pn : pnodes) grads.push_back(std::move(pn->grad));
      try {
        adam_step(net.params, grads, adam, cfg.adam);
      } catch (const std::runtime_error&) {
        res.diverged = true;  // non-finite gradients
        break;
      }

      loss_acc += loss_val;
      ++batches;
      const Volume3D geom(shape, spacing, train[0].roi.origin_mm);
      for (int n = 0; n < nb; ++n) {
        const Vec3 pred = decode_prediction_vox(detail::field_slice(out->value, n, geom));
        mre_acc += voxel_error_mm(pred, batch.labels_vox[std::size_t(n)], spacing);
        ++seen;
      }
    }

    if (res.diverged) break;

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = loss_acc / double(batches);
    log.train_mre_mm = mre_acc / double(seen);
    log.val_mre_mm = eval_mre_mm(net, val, cfg.batch_size);
    res.log.push_back(log);
    if (cfg.verbose)
      std::printf("epoch %3d  loss %.6f  train MRE %.3f mm  val MRE %.3f mm\n", epoch,
                  log.train_loss, log.train_mre_mm, log.val_mre_mm);

    if (log.val_mre_mm < res.best_val_mre_mm) {
      res.best_val_mre_mm = log.val_mre_mm;
      res.best_epoch = epoch;
      res.best = snapshot(epoch, log.val_mre_mm);
    }
    if (cfg.early_stop_val_mre_mm > 0 && log.val_mre_mm <= cfg.early_stop_val_mre_mm) break;
  }

  require(res.best_epoch >= 0,
          "train_localizer: training diverged before completing the first epoch");
  return res;
}

// Learning-rate grid search: trains once per rate, keeps the one with the
// lowest validation MRE; exact ties go to the smaller rate.
struct LrGridResult {
  double best_lr = 0.0;
  TrainResult best;
  std::vector<std::pair<double, double>> lr_to_val_mre;
};

inline LrGridResult lr_grid_search(const NetArchitecture& arch, const TrainSet& train,
                                   const TrainSet& val, const TrainConfig& base,
                                   const std::vector<double>& lrs = {1e-2, 1e-3, 1e-4, 1e-5}) {
  require(!lrs.empty(), "lr_grid_search: empty grid");
  LrGridResult res;
  for (double lr : lrs) {
    TrainConfig cfg = base;
    cfg.adam.lr = lr;
    TrainResult r = train_localizer(arch, train, val, cfg);
    res.lr_to_val_mre.emplace_back(lr, r.best_val_mre_mm);
    const bool better = r.best_val_mre_mm < res.best.best_val_mre_mm ||
                        (r.best_val_mre_mm == res.best.best_val_mre_mm && lr < res.best_lr);
    if (res.best_lr == 0.0 || better) {
      res.best_lr = lr;
      res.best = std::move(r);
    }
  }
  return res;
}

// Rebuild a network from a checkpoint.
inline LocalizerNet net_from_checkpoint(const Checkpoint& ck) {
  LocalizerNet net;
  net.arch = ck.arch;
  net.params = ck.params;
  net.param_names = ck.param_names;
  require(net.params.size() == std::size_t(2 * ck.arch.num_convs()),
          "net_from_checkpoint: parameter count does not match architecture");
  return net;
}

}  // namespace loc3d
