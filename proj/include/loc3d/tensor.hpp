#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "loc3d/common.hpp"

namespace loc3d {

using Shape5 = std::array<int, 5>;  // (n, c, x, y, z); unused dims are 1

// Dense rank-<=5 tensor. Memory layout ((((n*C+c)*X+x)*Y+y)*Z+z: z contiguous,
// matching the project-wide x-slowest spatial order.
template <typename T>
struct Tensor {
  Shape5 shape{1, 1, 1, 1, 1};
  std::vector<T> data;

  Tensor() = default;

  static Tensor zeros(const Shape5& sh) {
    Tensor t;
    t.shape = sh;
    t.data.assign(std::size_t(size_of(sh)), T(0));
    return t;
  }

  static Tensor full(const Shape5& sh, T v) {
    Tensor t = zeros(sh);
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static Tensor scalar(T v) { return full({1, 1, 1, 1, 1}, v); }

  static std::int64_t size_of(const Shape5& sh) {
    return std::int64_t(sh[0]) * sh[1] * sh[2] * sh[3] * sh[4];
  }

  std::int64_t size() const { return size_of(shape); }

  std::int64_t index(int n, int c, int x, int y, int z) const {
    return ((((std::int64_t(n) * shape[1] + c) * shape[2] + x) * shape[3] + y) * shape[4] + z);
  }
  T& at(int n, int c, int x, int y, int z) { return data[std::size_t(index(n, c, x, y, z))]; }
  T at(int n, int c, int x, int y, int z) const { return data[std::size_t(index(n, c, x, y, z))]; }

  Index3 spatial() const { return {shape[2], shape[3], shape[4]}; }
  std::int64_t spatial_size() const { return std::int64_t(shape[2]) * shape[3] * shape[4]; }

  bool all_finite() const {
    for (T v : data)
      if (!std::isfinite(double(v))) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = U(data[i]);
    return out;
  }
};

}  // namespace loc3d
