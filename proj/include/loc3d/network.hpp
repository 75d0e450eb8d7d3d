#pragma once

#include <string>
#include <vector>

#include "loc3d/autodiff.hpp"

namespace loc3d {

// Layer descriptor for the localizer. `conv` layers carry parameters; pool
// and upsample are parameter-free. Upsample layers restore the spatial shape
// recorded by the matching pool (shapes are tracked on a stack), so any
// input >= 2 per axis flows through to an output of identical spatial shape.
struct LayerSpec {
  enum class Kind { conv, pool, upsample };
  Kind kind = Kind::conv;
  int in_ch = 0, out_ch = 0, kernel = 3;
  bool relu = false;
};

struct NetArchitecture {
  std::vector<LayerSpec> layers;

  // Encoder-decoder: conv(1,c0)+relu, pool, conv(c0,c1)+relu, pool,
  // conv(c1,c2)+relu, up, conv(c2,c3)+relu, up, conv3(c3,1).
  // The head kernel is 3x3x3: after a nearest-neighbour upsample a 1x1x1 head
  // would leave the output field piecewise-constant on 2x2x2 blocks, which
  // quantizes the argmax decode to a stride-2 grid.
  static NetArchitecture default_localizer(const std::vector<int>& ch = {8, 16, 16, 8}) {
    require(ch.size() == 4, "default_localizer: expected 4 channel widths");
    NetArchitecture a;
    auto conv = [](int ci, int co, int k, bool relu) {
      return LayerSpec{LayerSpec::Kind::conv, ci, co, k, relu};
    };
    a.layers = {conv(1, ch[0], 3, true),     {LayerSpec::Kind::pool},
                conv(ch[0], ch[1], 3, true), {LayerSpec::Kind::pool},
                conv(ch[1], ch[2], 3, true), {LayerSpec::Kind::upsample},
                conv(ch[2], ch[3], 3, true), {LayerSpec::Kind::upsample},
                conv(ch[3], 1, 3, false)};
    return a;
  }

  int num_convs() const {
    int n = 0;
    for (const auto& l : layers)
      if (l.kind == LayerSpec::Kind::conv) ++n;
    return n;
  }
};

// Trainable 3D convolutional localizer: architecture + named parameter
// tensors (conv{i}.weight / conv{i}.bias, interleaved in layer order).
struct LocalizerNet {
  NetArchitecture arch;
  std::vector<Tensor<float>> params;
  std::vector<std::string> param_names;

  static LocalizerNet init(const NetArchitecture& arch, std::uint64_t seed) {
    LocalizerNet net;
    net.arch = arch;
    Rng rng = rng_stream(seed, "init");
    int conv_idx = 0;
    for (const auto& l : arch.layers) {
      if (l.kind != LayerSpec::Kind::conv) continue;
      const int k = l.kernel;
      Tensor<float> w = Tensor<float>::zeros({l.out_ch, l.in_ch, k, k, k});
      const double stddev = std::sqrt(2.0 / (double(l.in_ch) * k * k * k));
      for (auto& v : w.data) v = float(rng.normal() * stddev);
      Tensor<float> b = Tensor<float>::zeros({1, l.out_ch, 1, 1, 1});
      net.params.push_back(std::move(w));
      net.param_names.push_back("conv" + std::to_string(conv_idx) + ".weight");
      net.params.push_back(std::move(b));
      net.param_names.push_back("conv" + std::to_string(conv_idx) + ".bias");
      ++conv_idx;
    }
    return net;
  }

  std::int64_t param_count() const {
    std::int64_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }
};

// Build the forward graph of `arch` on a tape. `params` must hold one node
// per parameter tensor in LocalizerNet order. Returns the output field node
// (same spatial shape as the input, 1 channel).
template <typename T>
DiffNode<T>* forward_localizer(Tape<T>& tape, const NetArchitecture& arch,
                               const std::vector<DiffNode<T>*>& params, DiffNode<T>* x) {
  std::vector<Index3> pool_shapes;
  DiffNode<T>* cur = x;
  std::size_t pi = 0;
  for (const auto& l : arch.layers) {
    switch (l.kind) {
      case LayerSpec::Kind::conv: {
        require(pi + 1 < params.size() + 1, "forward_localizer: missing parameters");
        DiffNode<T>* w = params[pi++];
        DiffNode<T>* b = params[pi++];
        cur = tape.conv3d(cur, w, b);
        if (l.relu) cur = tape.relu(cur);
        break;
      }
      case LayerSpec::Kind::pool:
        pool_shapes.push_back(cur->value.spatial());
        cur = tape.avgpool2(cur);
        break;
      case LayerSpec::Kind::upsample: {
        require(!pool_shapes.empty(), "forward_localizer: upsample without matching pool");
        Index3 target = pool_shapes.back();
        pool_shapes.pop_back();
        cur = tape.upsample_nearest2(cur, target);
        break;
      }
    }
  }
  require(pi == params.size(), "forward_localizer: unused parameters");
  return cur;
}

// Inference forward pass (no gradients). Input (N,1,X,Y,Z), output same.
inline Tensor<float> net_forward(const LocalizerNet& net, const Tensor<float>& x) {
  Tape<float> tape;
  std::vector<DiffNode<float>*> pnodes;
  pnodes.reserve(net.params.size());
  for (const auto& p : net.params) pnodes.push_back(tape.input(p, false, "param"));
  DiffNode<float>* in = tape.input(x, false, "image");
  return forward_localizer(tape, net.arch, pnodes, in)->value;
}

// Convenience: run one ROI volume through the net, returning the raw output
// field as a volume with the ROI's geometry.
inline Volume3D net_forward_roi(const LocalizerNet& net, const Volume3D& roi) {
  Tensor<float> x = Tensor<float>::zeros({1, 1, roi.shape[0], roi.shape[1], roi.shape[2]});
  x.data = roi.data;
  Tensor<float> out = net_forward(net, x);
  Volume3D field(roi.shape, roi.spacing_mm, roi.origin_mm);
  field.data = std::move(out.data);
  return field;
}

}  // namespace loc3d
