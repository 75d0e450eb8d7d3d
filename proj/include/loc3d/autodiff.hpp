#pragma once

#include <functional>
#include <limits>
#include <memory>
#include <string>

#include "loc3d/tensor.hpp"

namespace loc3d {

// ---------------------------------------------------------------------------
// Raw kernels. All ops preserve spatial shape except pooling/upsampling.
// Convolutions use zero padding and odd kernels; they are written as sums of
// weight-scaled shifted volumes so the inner z-loop is contiguous and
// vectorizes.
// ---------------------------------------------------------------------------

template <typename T>
void conv3d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& bias,
                    Tensor<T>& out) {
  const int N = in.shape[0], CI = in.shape[1], X = in.shape[2], Y = in.shape[3], Z = in.shape[4];
  const int CO = w.shape[0], K = w.shape[2], P = K / 2;
  out = Tensor<T>::zeros({N, CO, X, Y, Z});
  const std::int64_t plane = std::int64_t(X) * Y * Z;
  for (int n = 0; n < N; ++n) {
    for (int co = 0; co < CO; ++co) {
      T* outp = &out.data[std::size_t(out.index(n, co, 0, 0, 0))];
      const T bv = bias.data[std::size_t(co)];
      for (std::int64_t i = 0; i < plane; ++i) outp[i] = bv;
      for (int ci = 0; ci < CI; ++ci) {
        const T* inp = &in.data[std::size_t(in.index(n, ci, 0, 0, 0))];
        for (int kx = 0; kx < K; ++kx) {
          const int dx = kx - P;
          for (int ky = 0; ky < K; ++ky) {
            const int dy = ky - P;
            for (int kz = 0; kz < K; ++kz) {
              const int dz = kz - P;
              const T wv = w.at(co, ci, kx, ky, kz);
              const int x0 = std::max(0, -dx), x1 = std::min(X, X - dx);
              const int y0 = std::max(0, -dy), y1 = std::min(Y, Y - dy);
              const int z0 = std::max(0, -dz), z1 = std::min(Z, Z - dz);
              for (int x = x0; x < x1; ++x) {
                for (int y = y0; y < y1; ++y) {
                  T* op = outp + (std::int64_t(x) * Y + y) * Z + z0;
                  const T* ip = inp + (std::int64_t(x + dx) * Y + (y + dy)) * Z + (z0 + dz);
                  const int len = z1 - z0;
                  for (int z = 0; z < len; ++z) op[z] += wv * ip[z];
                }
              }
            }
          }
        }
      }
    }
  }
}

// Gradients of conv3d. Any of gin/gw/gb may be null to skip that branch.
template <typename T>
void conv3d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& gout,
                     Tensor<T>* gin, Tensor<T>* gw, Tensor<T>* gb) {
  const int N = in.shape[0], CI = in.shape[1], X = in.shape[2], Y = in.shape[3], Z = in.shape[4];
  const int CO = w.shape[0], K = w.shape[2], P = K / 2;

  if (gb) {
    for (int n = 0; n < N; ++n)
      for (int co = 0; co < CO; ++co) {
        const T* gp = &gout.data[std::size_t(gout.index(n, co, 0, 0, 0))];
        double acc = 0;
        const std::int64_t plane = std::int64_t(X) * Y * Z;
        for (std::int64_t i = 0; i < plane; ++i) acc += double(gp[i]);
        gb->data[std::size_t(co)] += T(acc);
      }
  }

  if (gin) {
    // gin(xi) += w(k) * gout(xi - d); valid when 0 <= xi - d < X
    for (int n = 0; n < N; ++n) {
      for (int ci = 0; ci < CI; ++ci) {
        T* ginp = &gin->data[std::size_t(gin->index(n, ci, 0, 0, 0))];
        for (int co = 0; co < CO; ++co) {
          const T* gp = &gout.data[std::size_t(gout.index(n, co, 0, 0, 0))];
          for (int kx = 0; kx < K; ++kx) {
            const int dx = kx - P;
            for (int ky = 0; ky < K; ++ky) {
              const int dy = ky - P;
              for (int kz = 0; kz < K; ++kz) {
                const int dz = kz - P;
                const T wv = w.at(co, ci, kx, ky, kz);
                const int x0 = std::max(0, dx), x1 = std::min(X, X + dx);
                const int y0 = std::max(0, dy), y1 = std::min(Y, Y + dy);
                const int z0 = std::max(0, dz), z1 = std::min(Z, Z + dz);
                for (int x = x0; x < x1; ++x) {
                  for (int y = y0; y < y1; ++y) {
                    T* ip = ginp + (std::int64_t(x) * Y + y) * Z + z0;
                    const T* op = gp + (std::int64_t(x - dx) * Y + (y - dy)) * Z + (z0 - dz);
                    const int len = z1 - z0;
                    for (int z = 0; z < len; ++z) ip[z] += wv * op[z];
                  }
                }
              }
            }
          }
        }
      }
    }
  }

  if (gw) {
    // gw(co,ci,k) += sum_x in(x + d) * gout(x)
    for (int n = 0; n < N; ++n) {
      for (int co = 0; co < CO; ++co) {
        const T* gp = &gout.data[std::size_t(gout.index(n, co, 0, 0, 0))];
        for (int ci = 0; ci < CI; ++ci) {
          const T* inp = &in.data[std::size_t(in.index(n, ci, 0, 0, 0))];
          for (int kx = 0; kx < K; ++kx) {
            const int dx = kx - P;
            for (int ky = 0; ky < K; ++ky) {
              const int dy = ky - P;
              for (int kz = 0; kz < K; ++kz) {
                const int dz = kz - P;
                const int x0 = std::max(0, -dx), x1 = std::min(X, X - dx);
                const int y0 = std::max(0, -dy), y1 = std::min(Y, Y - dy);
                const int z0 = std::max(0, -dz), z1 = std::min(Z, Z - dz);
                double acc = 0;
                for (int x = x0; x < x1; ++x) {
                  for (int y = y0; y < y1; ++y) {
                    const T* op = gp + (std::int64_t(x) * Y + y) * Z + z0;
                    const T* ip = inp + (std::int64_t(x + dx) * Y + (y + dy)) * Z + (z0 + dz);
                    const int len = z1 - z0;
                    for (int z = 0; z < len; ++z) acc += double(ip[z]) * double(op[z]);
                  }
                }
                gw->at(co, ci, kx, ky, kz) += T(acc);
              }
            }
          }
        }
      }
    }
  }
}

// Average pooling with window 2, stride 2 and ceil semantics: trailing odd
// planes form partial windows averaged over their actual voxel count.
template <typename T>
void avgpool2_forward(const Tensor<T>& in, Tensor<T>& out) {
  const int N = in.shape[0], C = in.shape[1], X = in.shape[2], Y = in.shape[3], Z = in.shape[4];
  const int OX = (X + 1) / 2, OY = (Y + 1) / 2, OZ = (Z + 1) / 2;
  out = Tensor<T>::zeros({N, C, OX, OY, OZ});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ox = 0; ox < OX; ++ox) {
        const int x1 = std::min(2 * ox + 2, X);
        for (int oy = 0; oy < OY; ++oy) {
          const int y1 = std::min(2 * oy + 2, Y);
          for (int oz = 0; oz < OZ; ++oz) {
            const int z1 = std::min(2 * oz + 2, Z);
            double acc = 0;
            int cnt = 0;
            for (int x = 2 * ox; x < x1; ++x)
              for (int y = 2 * oy; y < y1; ++y)
                for (int z = 2 * oz; z < z1; ++z, ++cnt) acc += double(in.at(n, c, x, y, z));
            out.at(n, c, ox, oy, oz) = T(acc / cnt);
          }
        }
      }
}

template <typename T>
void avgpool2_backward(const Tensor<T>& in, const Tensor<T>& gout, Tensor<T>& gin) {
  const int N = in.shape[0], C = in.shape[1], X = in.shape[2], Y = in.shape[3], Z = in.shape[4];
  const int OX = (X + 1) / 2, OY = (Y + 1) / 2, OZ = (Z + 1) / 2;
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int ox = 0; ox < OX; ++ox) {
        const int x1 = std::min(2 * ox + 2, X);
        for (int oy = 0; oy < OY; ++oy) {
          const int y1 = std::min(2 * oy + 2, Y);
          for (int oz = 0; oz < OZ; ++oz) {
            const int z1 = std::min(2 * oz + 2, Z);
            const int cnt = (x1 - 2 * ox) * (y1 - 2 * oy) * (z1 - 2 * oz);
            const T g = gout.at(n, c, ox, oy, oz) / T(cnt);
            for (int x = 2 * ox; x < x1; ++x)
              for (int y = 2 * oy; y < y1; ++y)
                for (int z = 2 * oz; z < z1; ++z) gin.at(n, c, x, y, z) += g;
          }
        }
      }
}

// Nearest-neighbour x2 upsampling, trimmed to `target` (the pre-pool spatial
// shape, which may be odd).
template <typename T>
void upsample_nearest2_forward(const Tensor<T>& in, const Index3& target, Tensor<T>& out) {
  const int N = in.shape[0], C = in.shape[1];
  for (int a = 0; a < 3; ++a)
    require(target[a] <= 2 * in.shape[2 + a] && target[a] >= in.shape[2 + a],
            "upsample_nearest2: target shape out of range");
  out = Tensor<T>::zeros({N, C, target[0], target[1], target[2]});
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int x = 0; x < target[0]; ++x)
        for (int y = 0; y < target[1]; ++y)
          for (int z = 0; z < target[2]; ++z)
            out.at(n, c, x, y, z) = in.at(n, c, x / 2, y / 2, z / 2);
}

template <typename T>
void upsample_nearest2_backward(const Tensor<T>& gout, Tensor<T>& gin) {
  const int N = gin.shape[0], C = gin.shape[1];
  const Index3 target{gout.shape[2], gout.shape[3], gout.shape[4]};
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int x = 0; x < target[0]; ++x)
        for (int y = 0; y < target[1]; ++y)
          for (int z = 0; z < target[2]; ++z)
            gin.at(n, c, x / 2, y / 2, z / 2) += gout.at(n, c, x, y, z);
}

// Softmax over all voxels of each (n, c) field.
template <typename T>
void softmax_voxels_forward(const Tensor<T>& in, Tensor<T>& out) {
  out = Tensor<T>::zeros(in.shape);
  const std::int64_t V = in.spatial_size();
  for (int n = 0; n < in.shape[0]; ++n)
    for (int c = 0; c < in.shape[1]; ++c) {
      const T* ip = &in.data[std::size_t(in.index(n, c, 0, 0, 0))];
      T* op = &out.data[std::size_t(out.index(n, c, 0, 0, 0))];
      T m = ip[0];
      for (std::int64_t i = 1; i < V; ++i) m = std::max(m, ip[i]);
      double sum = 0;
      for (std::int64_t i = 0; i < V; ++i) {
        const double e = std::exp(double(ip[i]) - double(m));
        op[i] = T(e);
        sum += e;
      }
      const double inv = 1.0 / sum;
      for (std::int64_t i = 0; i < V; ++i) op[i] = T(double(op[i]) * inv);
    }
}

template <typename T>
void softmax_voxels_backward(const Tensor<T>& prob, const Tensor<T>& gout, Tensor<T>& gin) {
  const std::int64_t V = prob.spatial_size();
  for (int n = 0; n < prob.shape[0]; ++n)
    for (int c = 0; c < prob.shape[1]; ++c) {
      const T* pp = &prob.data[std::size_t(prob.index(n, c, 0, 0, 0))];
      const T* gp = &gout.data[std::size_t(gout.index(n, c, 0, 0, 0))];
      T* ip = &gin.data[std::size_t(gin.index(n, c, 0, 0, 0))];
      double dot = 0;
      for (std::int64_t i = 0; i < V; ++i) dot += double(gp[i]) * double(pp[i]);
      for (std::int64_t i = 0; i < V; ++i)
        ip[i] += T(double(pp[i]) * (double(gp[i]) - dot));
    }
}

// ---------------------------------------------------------------------------
// Reverse-mode tape
// ---------------------------------------------------------------------------

template <typename T>
struct DiffNode {
  Tensor<T> value;
  Tensor<T> grad;  // allocated iff requires_grad
  bool requires_grad = false;
  std::function<void()> backward;  // accumulates into parents' grads
  const char* op = "input";
};

// Tape of operations built in forward order; backward() replays it in
// reverse. Nodes live as long as the tape. One backward pass per tape.
template <typename T>
class Tape {
 public:
  using Node = DiffNode<T>;

  // When set, every op validates its output for non-finite values.
  bool check_finite = false;

  Node* input(Tensor<T> v, bool requires_grad, const char* name = "input") {
    Node* n = make(std::move(v), requires_grad, name);
    return n;
  }

  Node* conv3d(Node* x, Node* w, Node* b) {
    require(w->value.shape[1] == x->value.shape[1], "conv3d: in_channels mismatch");
    require(w->value.shape[2] % 2 == 1, "conv3d: kernel must be odd");
    require(b->value.size() == w->value.shape[0], "conv3d: bias size mismatch");
    Tensor<T> out;
    conv3d_forward(x->value, w->value, b->value, out);
    Node* r = make(std::move(out), x->requires_grad || w->requires_grad || b->requires_grad,
                   "conv3d");
    if (r->requires_grad)
      r->backward = [x, w, b, r] {
        conv3d_backward(x->value, w->value, r->grad, x->requires_grad ? &x->grad : nullptr,
                        w->requires_grad ? &w->grad : nullptr,
                        b->requires_grad ? &b->grad : nullptr);
      };
    return r;
  }

  Node* relu(Node* x) {
    Tensor<T> out = x->value;
    for (auto& v : out.data) v = std::max(v, T(0));
    Node* r = make(std::move(out), x->requires_grad, "relu");
    if (r->requires_grad)
      r->backward = [x, r] {
        for (std::size_t i = 0; i < x->value.data.size(); ++i)
          if (x->value.data[i] > T(0)) x->grad.data[i] += r->grad.data[i];
      };
    return r;
  }

  Node* avgpool2(Node* x) {
    Tensor<T> out;
    avgpool2_forward(x->value, out);
    Node* r = make(std::move(out), x->requires_grad, "avgpool2");
    if (r->requires_grad) r->backward = [x, r] { avgpool2_backward(x->value, r->grad, x->grad); };
    return r;
  }

  Node* upsample_nearest2(Node* x, const Index3& target) {
    Tensor<T> out;
    upsample_nearest2_forward(x->value, target, out);
    Node* r = make(std::move(out), x->requires_grad, "upsample_nearest2");
    if (r->requires_grad)
      r->backward = [x, r] { upsample_nearest2_backward(r->grad, x->grad); };
    return r;
  }

  Node* softmax_voxels(Node* x) {
    Tensor<T> out;
    softmax_voxels_forward(x->value, out);
    Node* r = make(std::move(out), x->requires_grad, "softmax_voxels");
    if (r->requires_grad)
      r->backward = [x, r] { softmax_voxels_backward(r->value, r->grad, x->grad); };
    return r;
  }

  Node* add(Node* a, Node* b) {
    require(a->value.shape == b->value.shape, "add: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->value.data[i];
    Node* r = make(std::move(out), a->requires_grad || b->requires_grad, "add");
    if (r->requires_grad)
      r->backward = [a, b, r] {
        if (a->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i) a->grad.data[i] += r->grad.data[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i) b->grad.data[i] += r->grad.data[i];
      };
    return r;
  }

  Node* sub(Node* a, Node* b) {
    require(a->value.shape == b->value.shape, "sub: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->value.data[i];
    Node* r = make(std::move(out), a->requires_grad || b->requires_grad, "sub");
    if (r->requires_grad)
      r->backward = [a, b, r] {
        if (a->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i) a->grad.data[i] += r->grad.data[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i) b->grad.data[i] -= r->grad.data[i];
      };
    return r;
  }

  Node* mul(Node* a, Node* b) {
    require(a->value.shape == b->value.shape, "mul: shape mismatch");
    Tensor<T> out = a->value;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->value.data[i];
    Node* r = make(std::move(out), a->requires_grad || b->requires_grad, "mul");
    if (r->requires_grad)
      r->backward = [a, b, r] {
        if (a->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i)
            a->grad.data[i] += r->grad.data[i] * b->value.data[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < r->grad.data.size(); ++i)
            b->grad.data[i] += r->grad.data[i] * a->value.data[i];
      };
    return r;
  }

  Node* scale(Node* a, T s) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) v *= s;
    Node* r = make(std::move(out), a->requires_grad, "scale");
    if (r->requires_grad)
      r->backward = [a, r, s] {
        for (std::size_t i = 0; i < r->grad.data.size(); ++i)
          a->grad.data[i] += s * r->grad.data[i];
      };
    return r;
  }

  // Elementwise natural log; all inputs must be > 0.
  Node* log(Node* a) {
    Tensor<T> out = a->value;
    for (auto& v : out.data) {
      require(v > T(0), "log: input must be positive");
      v = std::log(v);
    }
    Node* r = make(std::move(out), a->requires_grad, "log");
    if (r->requires_grad)
      r->backward = [a, r] {
        for (std::size_t i = 0; i < r->grad.data.size(); ++i)
          a->grad.data[i] += r->grad.data[i] / a->value.data[i];
      };
    return r;
  }

  Node* sum(Node* a) {
    double acc = 0;
    for (T v : a->value.data) acc += double(v);
    Node* r = make(Tensor<T>::scalar(T(acc)), a->requires_grad, "sum");
    if (r->requires_grad)
      r->backward = [a, r] {
        const T g = r->grad.data[0];
        for (auto& gi : a->grad.data) gi += g;
      };
    return r;
  }

  Node* mean(Node* a) {
    const std::int64_t n = a->value.size();
    double acc = 0;
    for (T v : a->value.data) acc += double(v);
    Node* r = make(Tensor<T>::scalar(T(acc / double(n))), a->requires_grad, "mean");
    if (r->requires_grad)
      r->backward = [a, r, n] {
        const T g = r->grad.data[0] / T(n);
        for (auto& gi : a->grad.data) gi += g;
      };
    return r;
  }

  // Frobenius inner product of two same-shape tensors; scalar output.
  Node* frobenius_inner(Node* a, Node* b) {
    require(a->value.shape == b->value.shape, "frobenius_inner: shape mismatch");
    double acc = 0;
    for (std::size_t i = 0; i < a->value.data.size(); ++i)
      acc += double(a->value.data[i]) * double(b->value.data[i]);
    Node* r = make(Tensor<T>::scalar(T(acc)), a->requires_grad || b->requires_grad,
                   "frobenius_inner");
    if (r->requires_grad)
      r->backward = [a, b, r] {
        const T g = r->grad.data[0];
        if (a->requires_grad)
          for (std::size_t i = 0; i < a->grad.data.size(); ++i)
            a->grad.data[i] += g * b->value.data[i];
        if (b->requires_grad)
          for (std::size_t i = 0; i < b->grad.data.size(); ++i)
            b->grad.data[i] += g * a->value.data[i];
      };
    return r;
  }

  // Per-sample Frobenius inner product with a constant single-sample grid
  // broadcast over the batch; x is (N,1,X,Y,Z), grid is (1,1,X,Y,Z); output
  // is (N,1,1,1,1).
  Node* inner_grid(Node* x, const Tensor<T>& grid) {
    require(x->value.shape[1] == 1 && grid.shape[0] == 1 && grid.shape[1] == 1,
            "inner_grid: expected single-channel input and grid");
    require(x->value.spatial() == grid.spatial(), "inner_grid: spatial shape mismatch");
    const int N = x->value.shape[0];
    const std::int64_t V = x->value.spatial_size();
    Tensor<T> out = Tensor<T>::zeros({N, 1, 1, 1, 1});
    for (int n = 0; n < N; ++n) {
      const T* xp = &x->value.data[std::size_t(n) * std::size_t(V)];
      double acc = 0;
      for (std::int64_t i = 0; i < V; ++i) acc += double(xp[i]) * double(grid.data[std::size_t(i)]);
      out.data[std::size_t(n)] = T(acc);
    }
    Node* r = make(std::move(out), x->requires_grad, "inner_grid");
    if (r->requires_grad) {
      const Tensor<T>* gridp = &grid;  // caller keeps grid alive for the tape's lifetime
      r->backward = [x, r, gridp, N, V] {
        for (int n = 0; n < N; ++n) {
          const T g = r->grad.data[std::size_t(n)];
          T* xp = &x->grad.data[std::size_t(n) * std::size_t(V)];
          for (std::int64_t i = 0; i < V; ++i) xp[i] += g * gridp->data[std::size_t(i)];
        }
      };
    }
    return r;
  }

  // Per-sample Jensen-Shannon divergence of P (N,1,X,Y,Z) against a constant
  // per-sample target distribution Q of the same shape; output (N,1,1,1,1).
  // Forward uses the 0*log0 := 0 convention; backward is
  // dJS/dP_k = 0.5 * log(P_k / M_k) with values clamped away from zero.
  Node* js_against(Node* P, const Tensor<T>& Q) {
    require(P->value.shape == Q.shape, "js_against: shape mismatch");
    require(P->value.shape[1] == 1, "js_against: expected single-channel distributions");
    const int N = P->value.shape[0];
    const std::int64_t V = P->value.spatial_size();
    Tensor<T> out = Tensor<T>::zeros({N, 1, 1, 1, 1});
    for (int n = 0; n < N; ++n) {
      const T* pp = &P->value.data[std::size_t(n) * std::size_t(V)];
      const T* qp = &Q.data[std::size_t(n) * std::size_t(V)];
      double acc = 0;
      for (std::int64_t i = 0; i < V; ++i) {
        const double p = pp[i], q = qp[i];
        const double m = 0.5 * (p + q);
        if (m <= 0) continue;
        if (p > 0) acc += 0.5 * p * std::log(p / m);
        if (q > 0) acc += 0.5 * q * std::log(q / m);
      }
      out.data[std::size_t(n)] = T(std::max(0.0, acc));
    }
    Node* r = make(std::move(out), P->requires_grad, "js_against");
    if (r->requires_grad) {
      const Tensor<T>* qt = &Q;  // caller keeps Q alive for the tape's lifetime
      r->backward = [P, r, qt, N, V] {
        constexpr double tiny = std::numeric_limits<double>::min();
        for (int n = 0; n < N; ++n) {
          const T g = r->grad.data[std::size_t(n)];
          const T* pp = &P->value.data[std::size_t(n) * std::size_t(V)];
          const T* qp = &qt->data[std::size_t(n) * std::size_t(V)];
          T* gp = &P->grad.data[std::size_t(n) * std::size_t(V)];
          for (std::int64_t i = 0; i < V; ++i) {
            const double p = std::max(double(pp[i]), tiny);
            const double m = std::max(0.5 * (double(pp[i]) + double(qp[i])), tiny);
            gp[i] += T(double(g) * 0.5 * std::log(p / m));
          }
        }
      };
    }
    return r;
  }

  // Reverse accumulation from a scalar root. Call once per tape.
  void backward(Node* root) {
    require(root->value.size() == 1, "backward: root must be scalar");
    require(!ran_backward_, "backward: tape already differentiated");
    ran_backward_ = true;
    if (root->requires_grad) root->grad.data[0] = T(1);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
      Node* n = it->get();
      if (n->requires_grad && n->backward) n->backward();
    }
  }

  std::size_t num_nodes() const { return nodes_.size(); }

  // Read-only visit of all nodes in creation order.
  template <typename F>
  void visit_nodes(F&& f) const {
    for (const auto& n : nodes_) f(*n);
  }

 private:
  Node* make(Tensor<T> value, bool requires_grad, const char* op) {
    auto n = std::make_unique<Node>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = op;
    if (requires_grad) n->grad = Tensor<T>::zeros(n->value.shape);
    if (check_finite && !n->value.all_finite())
      fail_runtime(std::string("non-finite values produced by op '") + op + "'");
    nodes_.push_back(std::move(n));
    return nodes_.back().get();
  }

  std::vector<std::unique_ptr<Node>> nodes_;
  bool ran_backward_ = false;
};

}  // namespace loc3d
