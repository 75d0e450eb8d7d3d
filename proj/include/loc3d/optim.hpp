#pragma once

#include <cmath>
#include <vector>

#include "loc3d/tensor.hpp"

namespace loc3d {

struct AdamConfig {
  double lr = 1e-3;
  double weight_decay = 1e-4;  // decoupled: p <- p - lr*wd*p before the Adam delta
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::int64_t step = 0;
  std::vector<Tensor<float>> m, v;

  static AdamState for_params(const std::vector<Tensor<float>>& params) {
    AdamState st;
    st.m.reserve(params.size());
    st.v.reserve(params.size());
    for (const auto& p : params) {
      st.m.push_back(Tensor<float>::zeros(p.shape));
      st.v.push_back(Tensor<float>::zeros(p.shape));
    }
    return st;
  }
};

// One Adam update with bias correction and decoupled weight decay. Throws on
// non-finite gradients so training can abort with a diagnostic.
inline void adam_step(std::vector<Tensor<float>>& params,
                      const std::vector<Tensor<float>>& grads, AdamState& st,
                      const AdamConfig& cfg) {
  require(cfg.lr > 0, "adam_step: learning rate must be > 0");
  require(params.size() == grads.size() && params.size() == st.m.size(),
          "adam_step: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    require(params[i].shape == grads[i].shape, "adam_step: gradient shape mismatch");
    if (!grads[i].all_finite())
      fail_runtime("adam_step: non-finite gradient in parameter tensor " + std::to_string(i));
  }
  st.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, double(st.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, double(st.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].data;
    const auto& g = grads[i].data;
    auto& m = st.m[i].data;
    auto& v = st.v[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      double pj = double(p[j]) * (1.0 - cfg.lr * cfg.weight_decay);
      const double gj = double(g[j]);
      const double mj = cfg.beta1 * double(m[j]) + (1.0 - cfg.beta1) * gj;
      const double vj = cfg.beta2 * double(v[j]) + (1.0 - cfg.beta2) * gj * gj;
      m[j] = float(mj);
      v[j] = float(vj);
      pj -= cfg.lr * (mj / bc1) / (std::sqrt(vj / bc2) + cfg.eps);
      p[j] = float(pj);
    }
  }
}

}  // namespace loc3d
