#pragma once

#include <chrono>
#include <cstdio>
#include <string>
#include <string_view>
#include <vector>

#include "loc3d/heatmap.hpp"
#include "loc3d/lossgraph.hpp"

namespace loc3d {

struct GradCheckResult {
  std::string name;
  int checked = 0;
  int failed = 0;
  int skipped = 0;  // FD interval crossed a ReLU kink; estimate invalid there
  double max_rel_err = 0.0;
  double tol = 1e-4;
  double seconds = 0.0;

  bool pass() const { return failed == 0 && checked > 0; }
};

// Finite-difference check of the full pipeline gradient (net -> loss) in
// 64-bit: analytic tape gradients vs central differences with step h on
// `n_checks` parameters spread round-robin over all parameter tensors.
inline GradCheckResult gradcheck_pipeline(LossVariant variant, std::uint64_t seed,
                                          int n_checks = 200, double tol = 1e-4,
                                          int input_size = 6, double h = 1e-3) {
  const auto t_start = std::chrono::steady_clock::now();
  const NetArchitecture arch = NetArchitecture::default_localizer();
  const Index3 shape{input_size, input_size, input_size};

  // Double-precision parameters, input, and loss constants.
  LocalizerNet net32 = LocalizerNet::init(arch, seed);
  std::vector<Tensor<double>> params;
  params.reserve(net32.params.size());
  for (const auto& p : net32.params) params.push_back(p.template cast<double>());

  Rng rng = rng_stream(seed, "gradcheck", std::uint64_t(variant == LossVariant::dsnt));
  Tensor<double> x = Tensor<double>::zeros({1, 1, shape[0], shape[1], shape[2]});
  for (auto& v : x.data) v = rng.uniform();

  const Vec3 center{1.0 + 3.0 * rng.uniform(), 1.0 + 3.0 * rng.uniform(),
                    1.0 + 3.0 * rng.uniform()};
  HeatmapConfig hcfg;
  const Heatmap3D target = render_gaussian_target(center, shape, {1, 1, 1}, hcfg);

  LossGraphInputs<double> in;
  in.variant = variant;
  in.alpha = 1.0;
  Tensor<double> gx, gy, gz;
  const std::int64_t V = std::int64_t(shape[0]) * shape[1] * shape[2];
  in.target = Tensor<double>::zeros({1, 1, shape[0], shape[1], shape[2]});
  if (variant == LossVariant::hm_wmse) {
    const WmseWeights w = wmse_weights(target);
    in.weights = in.target;
    for (std::int64_t i = 0; i < V; ++i) {
      in.target.data[std::size_t(i)] = target.volume.data[std::size_t(i)];
      in.weights.data[std::size_t(i)] = in.target.data[std::size_t(i)] > 0 ? w.w_p : w.w_z;
    }
  } else {
    const Heatmap3D dist = renormalize_to_distribution(target);
    for (std::int64_t i = 0; i < V; ++i)
      in.target.data[std::size_t(i)] = dist.volume.data[std::size_t(i)];
    const CoordGrids g = make_coord_grids(shape);
    gx = Tensor<double>::zeros(in.target.shape);
    gy = gx;
    gz = gx;
    for (std::int64_t i = 0; i < V; ++i) {
      gx.data[std::size_t(i)] = g.x[std::size_t(i)];
      gy.data[std::size_t(i)] = g.y[std::size_t(i)];
      gz.data[std::size_t(i)] = g.z[std::size_t(i)];
    }
    in.gx = &gx;
    in.gy = &gy;
    in.gz = &gz;
    const Vec3 nc = voxel_to_normalized(center, shape);
    in.cx = Tensor<double>::zeros({1, 1, 1, 1, 1});
    in.cy = in.cx;
    in.cz = in.cx;
    in.cx.data[0] = nc[0];
    in.cy.data[0] = nc[1];
    in.cz.data[0] = nc[2];
  }

  // Loss value plus a hash of the ReLU activation pattern: central
  // differences are only valid where no ReLU changes sign across the probe
  // interval, so differing patterns at p-h and p+h mark the sample invalid.
  auto loss_value = [&](std::uint64_t* pattern) {
    Tape<double> tape;
    std::vector<DiffNode<double>*> pnodes;
    pnodes.reserve(params.size());
    for (const auto& p : params) pnodes.push_back(tape.input(p, false, "param"));
    DiffNode<double>* xin = tape.input(x, false, "image");
    const double v = build_loss_graph(tape, arch, pnodes, xin, in)->value.data[0];
    if (pattern != nullptr) {
      std::uint64_t hsh = 1469598103934665603ull;
      tape.visit_nodes([&](const DiffNode<double>& n) {
        if (std::string_view(n.op) != "relu") return;
        for (double u : n.value.data) {
          hsh ^= std::uint64_t(u > 0.0);
          hsh *= 1099511628211ull;
        }
      });
      *pattern = hsh;
    }
    return v;
  };

  // Analytic gradients from one backward pass.
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape;
    std::vector<DiffNode<double>*> pnodes;
    pnodes.reserve(params.size());
    for (const auto& p : params) pnodes.push_back(tape.input(p, true, "param"));
    DiffNode<double>* xin = tape.input(x, false, "image");
    DiffNode<double>* loss = build_loss_graph(tape, arch, pnodes, xin, in);
    tape.backward(loss);
    for (auto* pn : pnodes) analytic.push_back(pn->grad);
  }

  GradCheckResult res;
  res.name = loss_variant_name(variant);
  res.tol = tol;
  const int max_attempts = 10 * n_checks;
  for (int attempt = 0; res.checked < n_checks && attempt < max_attempts; ++attempt) {
    const std::size_t ti = std::size_t(attempt) % params.size();
    const std::size_t ei = std::size_t(rng.below(int(params[ti].size())));
    const double orig = params[ti].data[ei];
    std::uint64_t pat_p = 0, pat_m = 0;
    params[ti].data[ei] = orig + h;
    const double fp = loss_value(&pat_p);
    params[ti].data[ei] = orig - h;
    const double fm = loss_value(&pat_m);
    params[ti].data[ei] = orig;
    if (pat_p != pat_m) {
      ++res.skipped;
      continue;
    }

    const double fd = (fp - fm) / (2.0 * h);
    const double an = analytic[ti].data[ei];
    const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-6});
    res.max_rel_err = std::max(res.max_rel_err, rel);
    ++res.checked;
    if (rel >= tol) ++res.failed;
  }
  require(res.checked >= n_checks, "gradcheck: too few kink-free samples");
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

// The standing finite-difference suite: both pipeline variants.
inline std::vector<GradCheckResult> gradcheck_suite(std::uint64_t seed = 0, int n_checks = 200,
                                                    double tol = 1e-4, int input_size = 6) {
  return {gradcheck_pipeline(LossVariant::hm_wmse, seed, n_checks, tol, input_size),
          gradcheck_pipeline(LossVariant::dsnt, seed, n_checks, tol, input_size)};
}

}  // namespace loc3d
