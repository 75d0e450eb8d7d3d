#pragma once

#include "loc3d/loss.hpp"
#include "loc3d/network.hpp"

namespace loc3d {

// Constant inputs for one loss-graph build. Everything here must outlive the
// tape the graph is built on. Grids are caller-owned (shared across batches).
template <typename T>
struct LossGraphInputs {
  LossVariant variant = LossVariant::hm_wmse;
  double alpha = 1.0;
  Tensor<T> target;              // wmse: peak-scaled heatmaps; dsnt: distributions
  Tensor<T> weights;             // wmse voxel weights
  Tensor<T> cx, cy, cz;          // dsnt normalized target coords (B,1,1,1,1)
  const Tensor<T>* gx = nullptr; // dsnt coordinate grids (1,1,X,Y,Z)
  const Tensor<T>* gy = nullptr;
  const Tensor<T>* gz = nullptr;
};

// Build net forward + loss on one tape; returns the scalar loss node and,
// optionally, the network output field node.
template <typename T>
DiffNode<T>* build_loss_graph(Tape<T>& tape, const NetArchitecture& arch,
                              const std::vector<DiffNode<T>*>& params, DiffNode<T>* x,
                              const LossGraphInputs<T>& in, DiffNode<T>** out_field = nullptr) {
  DiffNode<T>* out = forward_localizer(tape, arch, params, x);
  if (out_field != nullptr) *out_field = out;
  if (in.variant == LossVariant::hm_wmse) {
    DiffNode<T>* t = tape.input(in.target, false, "target");
    DiffNode<T>* w = tape.input(in.weights, false, "weights");
    DiffNode<T>* d = tape.sub(out, t);
    return tape.mean(tape.mul(w, tape.mul(d, d)));
  }
  require(in.gx != nullptr && in.gy != nullptr && in.gz != nullptr,
          "build_loss_graph: dsnt requires coordinate grids");
  DiffNode<T>* p = tape.softmax_voxels(out);
  DiffNode<T>* dx = tape.sub(tape.inner_grid(p, *in.gx), tape.input(in.cx, false, "cx"));
  DiffNode<T>* dy = tape.sub(tape.inner_grid(p, *in.gy), tape.input(in.cy, false, "cy"));
  DiffNode<T>* dz = tape.sub(tape.inner_grid(p, *in.gz), tape.input(in.cz, false, "cz"));
  DiffNode<T>* coord = tape.scale(
      tape.add(tape.add(tape.mul(dx, dx), tape.mul(dy, dy)), tape.mul(dz, dz)), T(1.0 / 3.0));
  DiffNode<T>* js = tape.js_against(p, in.target);
  return tape.add(tape.mean(coord), tape.scale(tape.mean(js), T(in.alpha)));
}

}  // namespace loc3d
