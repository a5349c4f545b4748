/* Copyright 2026 The mriqa Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
#ifndef MRIQA_TENSOR_HPP_
#define MRIQA_TENSOR_HPP_

// Dense row-major tensors with tape-based reverse-mode differentiation.
// The operator set is exactly what the quality-assessment network needs:
// convolutions (standard / depthwise / pointwise), batch normalization,
// relu, global average pooling, softmax, matmul, and the loss terms.
// Everything is templated on the scalar type: float for training runs,
// double for tests and finite-difference verification.

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "mriqa/errors.hpp"

namespace mriqa {

// Instrumentation counters for the cost model. `macs` counts executed
// multiply-accumulates in conv/matmul forward kernels (loop trip counts,
// not re-derived formulas); `residual_adds` counts elementwise additions
// from residual sums.
namespace opcount {
inline thread_local std::uint64_t macs = 0;
inline thread_local std::uint64_t residual_adds = 0;

inline void reset() {
  macs = 0;
  residual_adds = 0;
}
}  // namespace opcount

template <typename T>
struct TensorT {
  std::vector<int> shape;
  std::vector<T> data;

  TensorT() = default;

  static std::int64_t shape_numel(const std::vector<int>& s) {
    std::int64_t n = 1;
    for (int e : s) {
      if (e < 0) throw ShapeError("negative tensor extent");
      n *= e;
    }
    return n;
  }

  static TensorT zeros(std::vector<int> s) {
    TensorT t;
    std::int64_t n = shape_numel(s);
    t.shape = std::move(s);
    t.data.assign(static_cast<std::size_t>(n), T(0));
    return t;
  }

  static TensorT full(std::vector<int> s, T v) {
    TensorT t = zeros(std::move(s));
    std::fill(t.data.begin(), t.data.end(), v);
    return t;
  }

  static TensorT from(std::vector<int> s, std::vector<T> d) {
    if (shape_numel(s) != static_cast<std::int64_t>(d.size())) {
      throw ShapeError("tensor data length does not match shape");
    }
    TensorT t;
    t.shape = std::move(s);
    t.data = std::move(d);
    return t;
  }

  static TensorT scalar(T v) { return from({1}, {v}); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  bool same_shape(const TensorT& o) const { return shape == o.shape; }

  std::string shape_str() const {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << "]";
    return os.str();
  }
};

using Tensor32 = TensorT<float>;
using Tensor64 = TensorT<double>;

template <typename T>
inline bool all_finite(const TensorT<T>& t) {
  for (T v : t.data) {
    if (!std::isfinite(static_cast<double>(v))) return false;
  }
  return true;
}

// A learnable tensor. Gradients live beside the values; the tape fills
// them after backward().
template <typename T>
struct ParameterT {
  std::string name;
  TensorT<T> value;
  TensorT<T> grad;

  ParameterT() = default;
  ParameterT(std::string n, TensorT<T> v)
      : name(std::move(n)), value(std::move(v)), grad(TensorT<T>::zeros(value.shape)) {}
};

// Per-channel running statistics for batch normalization.
template <typename T>
struct BatchNormStateT {
  TensorT<T> running_mean;
  TensorT<T> running_var;
  T epsilon = T(1e-5);
  T momentum = T(0.9);

  explicit BatchNormStateT(int channels = 0)
      : running_mean(TensorT<T>::zeros({channels})),
        running_var(TensorT<T>::full({channels}, T(1))) {}
};

namespace detail {

// Normalized [n,c,h,w] view of a rank-3 [c,h,w] or rank-4 [n,c,h,w] tensor.
// Rank-3 data has the same layout as [1,c,h,w].
struct Nchw {
  int n, c, h, w;
  bool batched;
};

template <typename T>
inline Nchw as_nchw(const TensorT<T>& t, const char* who) {
  if (t.rank() == 3) return {1, t.shape[0], t.shape[1], t.shape[2], false};
  if (t.rank() == 4) return {t.shape[0], t.shape[1], t.shape[2], t.shape[3], true};
  throw ShapeError(std::string(who) + ": expected rank-3 [c,h,w] or rank-4 [n,c,h,w], got " +
                   t.shape_str());
}

inline std::vector<int> nchw_shape(const Nchw& v, int c, int h, int w) {
  if (v.batched) return {v.n, c, h, w};
  return {c, h, w};
}

inline int conv_out_extent(int in, int pad, int d, int stride) {
  return (in + 2 * pad - d) / stride + 1;
}

}  // namespace detail

// Reverse-mode tape. Operations execute eagerly and append a node holding
// the result plus a closure that propagates the node's gradient to its
// inputs. Nodes are appended in execution order, so walking them backward
// is a valid topological order.
template <typename T>
class GradientTapeT {
 public:
  struct Var {
    int id = -1;
    bool valid() const { return id >= 0; }
  };

  Var leaf(TensorT<T> value) {
    return push(std::move(value), nullptr);
  }

  const TensorT<T>& value(Var v) const { return node(v).value; }
  const TensorT<T>& grad(Var v) const { return node(v).grad; }
  std::size_t size() const { return nodes_.size(); }

  // Accumulates gradients for every recorded node reachable from `loss`,
  // wiping previous gradients first. Node values are left untouched.
  void backward(Var loss) {
    const TensorT<T>& lv = value(loss);
    if (lv.numel() != 1) {
      throw InvalidInputError("backward: loss must be scalar, got shape " + lv.shape_str());
    }
    for (auto& n : nodes_) n.grad = TensorT<T>::zeros(n.value.shape);
    nodes_[static_cast<std::size_t>(loss.id)].grad.data[0] = T(1);
    for (int i = loss.id; i >= 0; --i) {
      if (nodes_[static_cast<std::size_t>(i)].backward) run_backward_of(i);
    }
  }

  // ---- elementwise ----

  Var add(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv)) {
      throw ShapeError("add: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    TensorT<T> out = av;
    const std::int64_t n = out.numel();
    for (std::int64_t i = 0; i < n; ++i) out.data[i] += bv.data[i];
    opcount::residual_adds += static_cast<std::uint64_t>(n);
    int aid = a.id, bid = b.id;
    return push(std::move(out), [aid, bid](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      accumulate(t.mutable_grad(aid), g);
      accumulate(t.mutable_grad(bid), g);
    });
  }

  Var mul(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (!av.same_shape(bv)) {
      throw ShapeError("mul: shape mismatch " + av.shape_str() + " vs " + bv.shape_str());
    }
    TensorT<T> out = av;
    for (std::int64_t i = 0; i < out.numel(); ++i) out.data[i] *= bv.data[i];
    int aid = a.id, bid = b.id;
    return push(std::move(out), [aid, bid](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& av2 = t.nodes_[static_cast<std::size_t>(aid)].value;
      const TensorT<T>& bv2 = t.nodes_[static_cast<std::size_t>(bid)].value;
      TensorT<T>& ga = t.mutable_grad(aid);
      TensorT<T>& gb = t.mutable_grad(bid);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        ga.data[i] += g.data[i] * bv2.data[i];
        gb.data[i] += g.data[i] * av2.data[i];
      }
    });
  }

  Var scale(Var a, T s) {
    TensorT<T> out = value(a);
    for (T& v : out.data) v *= s;
    int aid = a.id;
    return push(std::move(out), [aid, s](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += s * g.data[i];
    });
  }

  Var relu(Var a) {
    const TensorT<T>& av = value(a);
    TensorT<T> out = av;
    for (T& v : out.data) v = v > T(0) ? v : T(0);
    int aid = a.id;
    return push(std::move(out), [aid](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(aid)].value;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        if (in.data[i] > T(0)) ga.data[i] += g.data[i];
      }
    });
  }

  // ---- shape ----

  Var reshape(Var a, std::vector<int> new_shape) {
    const TensorT<T>& av = value(a);
    if (TensorT<T>::shape_numel(new_shape) != av.numel()) {
      throw ShapeError("reshape: element count mismatch " + av.shape_str());
    }
    TensorT<T> out = TensorT<T>::from(std::move(new_shape), av.data);
    int aid = a.id;
    return push(std::move(out), [aid](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    });
  }

  // Swaps the last two axes of a rank-2 or rank-3 tensor.
  Var transpose_last2(Var a) {
    const TensorT<T>& av = value(a);
    if (av.rank() != 2 && av.rank() != 3) {
      throw ShapeError("transpose_last2: expected rank 2 or 3, got " + av.shape_str());
    }
    const int b = av.rank() == 3 ? av.shape[0] : 1;
    const int m = av.shape[av.rank() - 2];
    const int n = av.shape[av.rank() - 1];
    std::vector<int> oshape = av.shape;
    std::swap(oshape[av.rank() - 2], oshape[av.rank() - 1]);
    TensorT<T> out = TensorT<T>::zeros(oshape);
    transpose_copy(out.ptr(), av.ptr(), b, m, n);
    int aid = a.id;
    return push(std::move(out), [aid, b, m, n](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      TensorT<T> gt = TensorT<T>::zeros(t.nodes_[static_cast<std::size_t>(aid)].value.shape);
      transpose_copy(gt.ptr(), g.ptr(), b, n, m);
      accumulate(t.mutable_grad(aid), gt);
    });
  }

  // ---- reductions ----

  Var sum(Var a) {
    const TensorT<T>& av = value(a);
    T s = T(0);
    for (T v : av.data) s += v;
    int aid = a.id;
    return push(TensorT<T>::scalar(s), [aid](GradientTapeT& t) {
      const T g = t.nodes_[t.out_id_].grad.data[0];
      TensorT<T>& ga = t.mutable_grad(aid);
      for (T& v : ga.data) v += g;
    });
  }

  Var sum_squares(Var a) {
    const TensorT<T>& av = value(a);
    T s = T(0);
    for (T v : av.data) s += v * v;
    int aid = a.id;
    return push(TensorT<T>::scalar(s), [aid](GradientTapeT& t) {
      const T g = t.nodes_[t.out_id_].grad.data[0];
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(aid)].value;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t i = 0; i < ga.numel(); ++i) ga.data[i] += T(2) * in.data[i] * g;
    });
  }

  // [c,h,w] -> [c] or [n,c,h,w] -> [n,c]: mean over the spatial extent.
  Var global_avg_pool(Var a) {
    const auto v = detail::as_nchw(value(a), "global_avg_pool");
    const std::int64_t hw = static_cast<std::int64_t>(v.h) * v.w;
    if (hw == 0) throw InvalidInputError("global_avg_pool: empty spatial extent");
    std::vector<int> oshape = v.batched ? std::vector<int>{v.n, v.c} : std::vector<int>{v.c};
    TensorT<T> out = TensorT<T>::zeros(oshape);
    const T* in = value(a).ptr();
    for (std::int64_t i = 0; i < static_cast<std::int64_t>(v.n) * v.c; ++i) {
      T s = T(0);
      for (std::int64_t p = 0; p < hw; ++p) s += in[i * hw + p];
      out.data[static_cast<std::size_t>(i)] = s / static_cast<T>(hw);
    }
    int aid = a.id;
    return push(std::move(out), [aid, hw](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t i = 0; i < g.numel(); ++i) {
        const T gi = g.data[i] / static_cast<T>(hw);
        for (std::int64_t p = 0; p < hw; ++p) ga.data[i * hw + p] += gi;
      }
    });
  }

  // Softmax over the last axis, computed with max-subtraction.
  Var softmax(Var a) {
    const TensorT<T>& av = value(a);
    if (av.rank() < 1) throw ShapeError("softmax: rank-0 input");
    const int k = av.shape[av.rank() - 1];
    if (k == 0) throw InvalidInputError("softmax: empty last axis");
    const std::int64_t rows = av.numel() / k;
    TensorT<T> out = av;
    for (std::int64_t r = 0; r < rows; ++r) {
      T* row = out.ptr() + r * k;
      T mx = row[0];
      for (int i = 1; i < k; ++i) mx = std::max(mx, row[i]);
      T denom = T(0);
      for (int i = 0; i < k; ++i) {
        row[i] = std::exp(row[i] - mx);
        denom += row[i];
      }
      for (int i = 0; i < k; ++i) row[i] /= denom;
    }
    int aid = a.id;
    return push(std::move(out), [aid, k, rows](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& y = t.nodes_[t.out_id_].value;
      TensorT<T>& ga = t.mutable_grad(aid);
      for (std::int64_t r = 0; r < rows; ++r) {
        const T* yr = y.ptr() + r * k;
        const T* gr = g.ptr() + r * k;
        T dot = T(0);
        for (int i = 0; i < k; ++i) dot += yr[i] * gr[i];
        for (int i = 0; i < k; ++i) ga.data[r * k + i] += yr[i] * (gr[i] - dot);
      }
    });
  }

  // ---- linear algebra ----

  // [m,k] x [k,n] -> [m,n], or batched [b,m,k] x [b,k,n] -> [b,m,n].
  Var matmul(Var a, Var b) {
    const TensorT<T>& av = value(a);
    const TensorT<T>& bv = value(b);
    if (av.rank() != bv.rank() || (av.rank() != 2 && av.rank() != 3)) {
      throw ShapeError("matmul: expected matching rank 2 or 3, got " + av.shape_str() + " x " +
                       bv.shape_str());
    }
    const int nb = av.rank() == 3 ? av.shape[0] : 1;
    const int m = av.shape[av.rank() - 2];
    const int k = av.shape[av.rank() - 1];
    const int kb = bv.shape[bv.rank() - 2];
    const int n = bv.shape[bv.rank() - 1];
    if (k != kb || (av.rank() == 3 && bv.shape[0] != nb)) {
      throw ShapeError("matmul: incompatible shapes " + av.shape_str() + " x " + bv.shape_str());
    }
    std::vector<int> oshape = av.rank() == 3 ? std::vector<int>{nb, m, n} : std::vector<int>{m, n};
    TensorT<T> out = TensorT<T>::zeros(oshape);
    for (int bi = 0; bi < nb; ++bi) {
      matmul_acc(out.ptr() + static_cast<std::int64_t>(bi) * m * n,
                 av.ptr() + static_cast<std::int64_t>(bi) * m * k,
                 bv.ptr() + static_cast<std::int64_t>(bi) * k * n, m, k, n, true);
    }
    int aid = a.id, bid = b.id;
    return push(std::move(out), [aid, bid, nb, m, k, n](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& A = t.nodes_[static_cast<std::size_t>(aid)].value;
      const TensorT<T>& B = t.nodes_[static_cast<std::size_t>(bid)].value;
      TensorT<T>& ga = t.mutable_grad(aid);
      TensorT<T>& gb = t.mutable_grad(bid);
      for (int bi = 0; bi < nb; ++bi) {
        const T* gp = g.ptr() + static_cast<std::int64_t>(bi) * m * n;
        const T* ap = A.ptr() + static_cast<std::int64_t>(bi) * m * k;
        const T* bp = B.ptr() + static_cast<std::int64_t>(bi) * k * n;
        T* gap = ga.ptr() + static_cast<std::int64_t>(bi) * m * k;
        T* gbp = gb.ptr() + static_cast<std::int64_t>(bi) * k * n;
        // dA += dC * B^T ; dB += A^T * dC
        for (int i = 0; i < m; ++i) {
          for (int j = 0; j < n; ++j) {
            const T gij = gp[i * n + j];
            for (int kk = 0; kk < k; ++kk) gap[i * k + kk] += gij * bp[kk * n + j];
          }
        }
        for (int kk = 0; kk < k; ++kk) {
          for (int i = 0; i < m; ++i) {
            const T aik = ap[i * k + kk];
            for (int j = 0; j < n; ++j) gbp[kk * n + j] += aik * gp[i * n + j];
          }
        }
      }
    });
  }

  // ---- convolutions ----

  // Standard cross-correlation. input [*,c,h,w], kernel [c_out,c,d,d].
  Var conv2d(Var input, Var kernel, int stride, int padding) {
    const auto v = detail::as_nchw(value(input), "conv2d");
    const TensorT<T>& kv = value(kernel);
    if (kv.rank() != 4) throw ShapeError("conv2d: kernel must be [c_out,c_in,d,d]");
    const int c_out = kv.shape[0], c_in = kv.shape[1], d = kv.shape[2];
    if (kv.shape[3] != d) throw ShapeError("conv2d: kernel must be square");
    if (c_in != v.c) {
      throw ShapeError("conv2d: input has " + std::to_string(v.c) + " channels, kernel expects " +
                       std::to_string(c_in));
    }
    if (stride < 1) throw InvalidInputError("conv2d: stride must be >= 1");
    if (padding < 0) throw InvalidInputError("conv2d: padding must be >= 0");
    const int ho = detail::conv_out_extent(v.h, padding, d, stride);
    const int wo = detail::conv_out_extent(v.w, padding, d, stride);
    if (ho < 1 || wo < 1) throw ShapeError("conv2d: kernel larger than padded input");

    TensorT<T> out = TensorT<T>::zeros(detail::nchw_shape(v, c_out, ho, wo));
    for (int s = 0; s < v.n; ++s) {
      const TensorT<T> padded = pad_input(value(input).ptr() + sample_offset(v, s), v, padding);
      conv_sample_forward(out.ptr() + static_cast<std::int64_t>(s) * c_out * ho * wo, padded,
                          kv.ptr(), c_out, c_in, d, stride, ho, wo);
    }
    int iid = input.id, kid = kernel.id;
    auto shape_in = v;
    return push(std::move(out), [iid, kid, shape_in, c_out, c_in, d, stride, padding, ho,
                                 wo](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(iid)].value;
      const TensorT<T>& ker = t.nodes_[static_cast<std::size_t>(kid)].value;
      TensorT<T>& gin = t.mutable_grad(iid);
      TensorT<T>& gker = t.mutable_grad(kid);
      const int hp = shape_in.h + 2 * padding, wp = shape_in.w + 2 * padding;
      for (int s = 0; s < shape_in.n; ++s) {
        const TensorT<T> padded = pad_input(in.ptr() + sample_offset(shape_in, s), shape_in,
                                            padding);
        TensorT<T> gpad = TensorT<T>::zeros({c_in, hp, wp});
        const T* gp = g.ptr() + static_cast<std::int64_t>(s) * c_out * ho * wo;
        for (int co = 0; co < c_out; ++co) {
          for (int ci = 0; ci < c_in; ++ci) {
            for (int ky = 0; ky < d; ++ky) {
              for (int kx = 0; kx < d; ++kx) {
                const std::int64_t kidx =
                    ((static_cast<std::int64_t>(co) * c_in + ci) * d + ky) * d + kx;
                const T kval = ker.data[kidx];
                T acc = T(0);
                for (int oy = 0; oy < ho; ++oy) {
                  const T* grow = gp + (static_cast<std::int64_t>(co) * ho + oy) * wo;
                  const T* irow = padded.ptr() +
                                  (static_cast<std::int64_t>(ci) * hp + oy * stride + ky) * wp + kx;
                  T* gprow = gpad.ptr() +
                             (static_cast<std::int64_t>(ci) * hp + oy * stride + ky) * wp + kx;
                  for (int ox = 0; ox < wo; ++ox) {
                    acc += grow[ox] * irow[ox * stride];
                    gprow[ox * stride] += kval * grow[ox];
                  }
                }
                gker.data[kidx] += acc;
              }
            }
          }
        }
        unpad_accumulate(gin.ptr() + sample_offset(shape_in, s), gpad, shape_in, padding);
      }
    });
  }

  // Channel-wise spatial convolution. input [*,c,h,w], kernel [c,d,d].
  Var depthwise_conv2d(Var input, Var kernel, int stride, int padding) {
    const auto v = detail::as_nchw(value(input), "depthwise_conv2d");
    const TensorT<T>& kv = value(kernel);
    if (kv.rank() != 3) throw ShapeError("depthwise_conv2d: kernel must be [c,d,d]");
    const int c = kv.shape[0], d = kv.shape[1];
    if (kv.shape[2] != d) throw ShapeError("depthwise_conv2d: kernel must be square");
    if (c != v.c) throw ShapeError("depthwise_conv2d: channel mismatch");
    if (stride < 1) throw InvalidInputError("depthwise_conv2d: stride must be >= 1");
    if (padding < 0) throw InvalidInputError("depthwise_conv2d: padding must be >= 0");
    const int ho = detail::conv_out_extent(v.h, padding, d, stride);
    const int wo = detail::conv_out_extent(v.w, padding, d, stride);
    if (ho < 1 || wo < 1) throw ShapeError("depthwise_conv2d: kernel larger than padded input");

    TensorT<T> out = TensorT<T>::zeros(detail::nchw_shape(v, c, ho, wo));
    for (int s = 0; s < v.n; ++s) {
      const TensorT<T> padded = pad_input(value(input).ptr() + sample_offset(v, s), v, padding);
      const int hp = v.h + 2 * padding, wp = v.w + 2 * padding;
      T* op = out.ptr() + static_cast<std::int64_t>(s) * c * ho * wo;
      std::uint64_t trips = 0;
      for (int ci = 0; ci < c; ++ci) {
        for (int ky = 0; ky < d; ++ky) {
          for (int kx = 0; kx < d; ++kx) {
            const T kval = kv.data[(static_cast<std::int64_t>(ci) * d + ky) * d + kx];
            for (int oy = 0; oy < ho; ++oy) {
              T* orow = op + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
              const T* irow = padded.ptr() +
                              (static_cast<std::int64_t>(ci) * hp + oy * stride + ky) * wp + kx;
              for (int ox = 0; ox < wo; ++ox) orow[ox] += kval * irow[ox * stride];
              trips += static_cast<std::uint64_t>(wo);
            }
          }
        }
      }
      opcount::macs += trips;
    }
    int iid = input.id, kid = kernel.id;
    auto shape_in = v;
    return push(std::move(out), [iid, kid, shape_in, c, d, stride, padding, ho,
                                 wo](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(iid)].value;
      const TensorT<T>& ker = t.nodes_[static_cast<std::size_t>(kid)].value;
      TensorT<T>& gin = t.mutable_grad(iid);
      TensorT<T>& gker = t.mutable_grad(kid);
      const int hp = shape_in.h + 2 * padding, wp = shape_in.w + 2 * padding;
      for (int s = 0; s < shape_in.n; ++s) {
        const TensorT<T> padded = pad_input(in.ptr() + sample_offset(shape_in, s), shape_in,
                                            padding);
        TensorT<T> gpad = TensorT<T>::zeros({c, hp, wp});
        const T* gp = g.ptr() + static_cast<std::int64_t>(s) * c * ho * wo;
        for (int ci = 0; ci < c; ++ci) {
          for (int ky = 0; ky < d; ++ky) {
            for (int kx = 0; kx < d; ++kx) {
              const std::int64_t kidx = (static_cast<std::int64_t>(ci) * d + ky) * d + kx;
              const T kval = ker.data[kidx];
              T acc = T(0);
              for (int oy = 0; oy < ho; ++oy) {
                const T* grow = gp + (static_cast<std::int64_t>(ci) * ho + oy) * wo;
                const T* irow = padded.ptr() +
                                (static_cast<std::int64_t>(ci) * hp + oy * stride + ky) * wp + kx;
                T* gprow = gpad.ptr() +
                           (static_cast<std::int64_t>(ci) * hp + oy * stride + ky) * wp + kx;
                for (int ox = 0; ox < wo; ++ox) {
                  acc += grow[ox] * irow[ox * stride];
                  gprow[ox * stride] += kval * grow[ox];
                }
              }
              gker.data[kidx] += acc;
            }
          }
        }
        unpad_accumulate(gin.ptr() + sample_offset(shape_in, s), gpad, shape_in, padding);
      }
    });
  }

  // Per-pixel channel mixing. input [*,c,h,w], kernel [c_out,c].
  Var pointwise_conv2d(Var input, Var kernel) {
    const auto v = detail::as_nchw(value(input), "pointwise_conv2d");
    const TensorT<T>& kv = value(kernel);
    if (kv.rank() != 2) throw ShapeError("pointwise_conv2d: kernel must be [c_out,c_in]");
    const int c_out = kv.shape[0], c_in = kv.shape[1];
    if (c_in != v.c) throw ShapeError("pointwise_conv2d: channel mismatch");
    const std::int64_t hw = static_cast<std::int64_t>(v.h) * v.w;
    TensorT<T> out = TensorT<T>::zeros(detail::nchw_shape(v, c_out, v.h, v.w));
    const T* in = value(input).ptr();
    for (int s = 0; s < v.n; ++s) {
      const T* ip = in + static_cast<std::int64_t>(s) * v.c * hw;
      T* op = out.ptr() + static_cast<std::int64_t>(s) * c_out * hw;
      std::uint64_t trips = 0;
      for (int co = 0; co < c_out; ++co) {
        for (int ci = 0; ci < c_in; ++ci) {
          const T kval = kv.data[static_cast<std::int64_t>(co) * c_in + ci];
          const T* irow = ip + static_cast<std::int64_t>(ci) * hw;
          T* orow = op + static_cast<std::int64_t>(co) * hw;
          for (std::int64_t p = 0; p < hw; ++p) orow[p] += kval * irow[p];
          trips += static_cast<std::uint64_t>(hw);
        }
      }
      opcount::macs += trips;
    }
    int iid = input.id, kid = kernel.id;
    auto shape_in = v;
    return push(std::move(out), [iid, kid, shape_in, c_out, hw](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(iid)].value;
      const TensorT<T>& ker = t.nodes_[static_cast<std::size_t>(kid)].value;
      TensorT<T>& gin = t.mutable_grad(iid);
      TensorT<T>& gker = t.mutable_grad(kid);
      const int c_in = shape_in.c;
      for (int s = 0; s < shape_in.n; ++s) {
        const T* ip = in.ptr() + static_cast<std::int64_t>(s) * c_in * hw;
        const T* gp = g.ptr() + static_cast<std::int64_t>(s) * c_out * hw;
        T* gip = gin.ptr() + static_cast<std::int64_t>(s) * c_in * hw;
        for (int co = 0; co < c_out; ++co) {
          for (int ci = 0; ci < c_in; ++ci) {
            const T kval = ker.data[static_cast<std::int64_t>(co) * c_in + ci];
            const T* grow = gp + static_cast<std::int64_t>(co) * hw;
            const T* irow = ip + static_cast<std::int64_t>(ci) * hw;
            T* girow = gip + static_cast<std::int64_t>(ci) * hw;
            T acc = T(0);
            for (std::int64_t p = 0; p < hw; ++p) {
              acc += grow[p] * irow[p];
              girow[p] += kval * grow[p];
            }
            gker.data[static_cast<std::int64_t>(co) * c_in + ci] += acc;
          }
        }
      }
    });
  }

  // Adds a per-channel bias vector [c] to a [*,c,h,w] tensor.
  Var bias_add(Var input, Var bias) {
    const auto v = detail::as_nchw(value(input), "bias_add");
    const TensorT<T>& bv = value(bias);
    if (bv.rank() != 1 || bv.shape[0] != v.c) {
      throw ShapeError("bias_add: bias must be [c]");
    }
    const std::int64_t hw = static_cast<std::int64_t>(v.h) * v.w;
    TensorT<T> out = value(input);
    for (int s = 0; s < v.n; ++s) {
      for (int ci = 0; ci < v.c; ++ci) {
        T* row = out.ptr() + (static_cast<std::int64_t>(s) * v.c + ci) * hw;
        const T b = bv.data[ci];
        for (std::int64_t p = 0; p < hw; ++p) row[p] += b;
      }
    }
    int iid = input.id, bid = bias.id;
    auto shape_in = v;
    return push(std::move(out), [iid, bid, shape_in, hw](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      TensorT<T>& gin = t.mutable_grad(iid);
      TensorT<T>& gb = t.mutable_grad(bid);
      accumulate(gin, g);
      for (int s = 0; s < shape_in.n; ++s) {
        for (int ci = 0; ci < shape_in.c; ++ci) {
          const T* row = g.ptr() + (static_cast<std::int64_t>(s) * shape_in.c + ci) * hw;
          T acc = T(0);
          for (std::int64_t p = 0; p < hw; ++p) acc += row[p];
          gb.data[ci] += acc;
        }
      }
    });
  }

  // Batch normalization over all axes except the channel axis. In training
  // mode the batch statistics normalize and the running statistics are
  // updated in place; in inference mode the running statistics normalize.
  Var batchnorm2d(Var input, Var gamma, Var beta, BatchNormStateT<T>* state, bool training) {
    const auto v = detail::as_nchw(value(input), "batchnorm2d");
    const TensorT<T>& gv = value(gamma);
    const TensorT<T>& bv = value(beta);
    if (gv.rank() != 1 || gv.shape[0] != v.c || !gv.same_shape(bv)) {
      throw ShapeError("batchnorm2d: gamma/beta must be [c]");
    }
    if (state == nullptr || state->running_mean.numel() != v.c) {
      throw ShapeError("batchnorm2d: running stats must be [c]");
    }
    const std::int64_t hw = static_cast<std::int64_t>(v.h) * v.w;
    const std::int64_t m = static_cast<std::int64_t>(v.n) * hw;
    if (m == 0) throw InvalidInputError("batchnorm2d: zero-size batch");
    const T eps = state->epsilon;

    TensorT<T> mean = TensorT<T>::zeros({v.c});
    TensorT<T> inv_std = TensorT<T>::zeros({v.c});
    if (training) {
      for (int ci = 0; ci < v.c; ++ci) {
        T mu = T(0);
        for (int s = 0; s < v.n; ++s) {
          const T* row = value(input).ptr() + (static_cast<std::int64_t>(s) * v.c + ci) * hw;
          for (std::int64_t p = 0; p < hw; ++p) mu += row[p];
        }
        mu /= static_cast<T>(m);
        T var = T(0);
        for (int s = 0; s < v.n; ++s) {
          const T* row = value(input).ptr() + (static_cast<std::int64_t>(s) * v.c + ci) * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            const T d = row[p] - mu;
            var += d * d;
          }
        }
        var /= static_cast<T>(m);
        mean.data[ci] = mu;
        inv_std.data[ci] = T(1) / std::sqrt(var + eps);
        state->running_mean.data[ci] =
            state->momentum * state->running_mean.data[ci] + (T(1) - state->momentum) * mu;
        state->running_var.data[ci] =
            state->momentum * state->running_var.data[ci] + (T(1) - state->momentum) * var;
      }
    } else {
      for (int ci = 0; ci < v.c; ++ci) {
        mean.data[ci] = state->running_mean.data[ci];
        inv_std.data[ci] = T(1) / std::sqrt(state->running_var.data[ci] + eps);
      }
    }

    TensorT<T> out = TensorT<T>::zeros(value(input).shape);
    for (int s = 0; s < v.n; ++s) {
      for (int ci = 0; ci < v.c; ++ci) {
        const T* row = value(input).ptr() + (static_cast<std::int64_t>(s) * v.c + ci) * hw;
        T* orow = out.ptr() + (static_cast<std::int64_t>(s) * v.c + ci) * hw;
        const T mu = mean.data[ci], is = inv_std.data[ci];
        const T ga = gv.data[ci], be = bv.data[ci];
        for (std::int64_t p = 0; p < hw; ++p) orow[p] = ga * (row[p] - mu) * is + be;
      }
    }
    int iid = input.id, gid = gamma.id, bid = beta.id;
    auto shape_in = v;
    return push(std::move(out), [iid, gid, bid, shape_in, hw, m, mean, inv_std,
                                 training](GradientTapeT& t) {
      const TensorT<T>& g = t.nodes_[t.out_id_].grad;
      const TensorT<T>& in = t.nodes_[static_cast<std::size_t>(iid)].value;
      const TensorT<T>& ga = t.nodes_[static_cast<std::size_t>(gid)].value;
      TensorT<T>& gin = t.mutable_grad(iid);
      TensorT<T>& ggamma = t.mutable_grad(gid);
      TensorT<T>& gbeta = t.mutable_grad(bid);
      for (int ci = 0; ci < shape_in.c; ++ci) {
        const T mu = mean.data[ci], is = inv_std.data[ci], gam = ga.data[ci];
        T sum_g = T(0), sum_gx = T(0);
        for (int s = 0; s < shape_in.n; ++s) {
          const std::int64_t off = (static_cast<std::int64_t>(s) * shape_in.c + ci) * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            const T xh = (in.data[off + p] - mu) * is;
            sum_g += g.data[off + p];
            sum_gx += g.data[off + p] * xh;
          }
        }
        gbeta.data[ci] += sum_g;
        ggamma.data[ci] += sum_gx;
        const T mg = sum_g / static_cast<T>(m);
        const T mgx = sum_gx / static_cast<T>(m);
        for (int s = 0; s < shape_in.n; ++s) {
          const std::int64_t off = (static_cast<std::int64_t>(s) * shape_in.c + ci) * hw;
          for (std::int64_t p = 0; p < hw; ++p) {
            const T xh = (in.data[off + p] - mu) * is;
            if (training) {
              gin.data[off + p] += gam * is * (g.data[off + p] - mg - xh * mgx);
            } else {
              gin.data[off + p] += gam * is * g.data[off + p];
            }
          }
        }
      }
    });
  }

  // ---- loss terms ----

  // Mean over the batch of -alpha_i (1 - p_i)^kappa log(p_i) with
  // p_i = probs[i, target_i] clamped to [1e-12, 1].
  Var focal_term(Var probs, const std::vector<int>& targets, const std::vector<T>& alphas,
                 T kappa) {
    const TensorT<T>& pv = value(probs);
    if (pv.rank() != 1 && pv.rank() != 2) {
      throw ShapeError("focal_term: probs must be [k] or [n,k]");
    }
    const int k = pv.shape[pv.rank() - 1];
    const std::int64_t n = pv.numel() / k;
    if (static_cast<std::int64_t>(targets.size()) != n ||
        static_cast<std::int64_t>(alphas.size()) != n) {
      throw InvalidInputError("focal_term: need one target and weight per sample");
    }
    if (kappa < T(0)) throw InvalidInputError("focal_term: kappa must be >= 0");
    const T clamp_lo = T(1e-12);
    T loss = T(0);
    for (std::int64_t i = 0; i < n; ++i) {
      if (targets[i] < 0 || targets[i] >= k) {
        throw InvalidInputError("focal_term: target class out of range");
      }
      T p = pv.data[i * k + targets[i]];
      p = std::min(std::max(p, clamp_lo), T(1));
      loss += -alphas[i] * std::pow(T(1) - p, kappa) * std::log(p);
    }
    loss /= static_cast<T>(n);
    int pid = probs.id;
    return push(TensorT<T>::scalar(loss), [pid, targets, alphas, kappa, k, n,
                                           clamp_lo](GradientTapeT& t) {
      const T g = t.nodes_[t.out_id_].grad.data[0];
      const TensorT<T>& pv2 = t.nodes_[static_cast<std::size_t>(pid)].value;
      TensorT<T>& gp = t.mutable_grad(pid);
      for (std::int64_t i = 0; i < n; ++i) {
        const T raw = pv2.data[i * k + targets[i]];
        if (raw < clamp_lo || raw > T(1)) continue;  // clamped: zero gradient
        const T p = raw;
        const T om = T(1) - p;
        T d;
        if (kappa == T(0)) {
          d = -alphas[i] / p;
        } else if (om <= T(0)) {
          d = T(0);
        } else {
          d = alphas[i] * (kappa * std::pow(om, kappa - T(1)) * std::log(p) -
                           std::pow(om, kappa) / p);
        }
        gp.data[i * k + targets[i]] += g * d / static_cast<T>(n);
      }
    });
  }

 private:
  struct Node {
    TensorT<T> value;
    TensorT<T> grad;
    std::function<void(GradientTapeT&)> backward;
  };

  Var push(TensorT<T> value, std::function<void(GradientTapeT&)> back) {
#ifndef NDEBUG
    assert(all_finite(value) && "non-finite tensor produced");
#endif
    Node n;
    n.value = std::move(value);
    n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  const Node& node(Var v) const {
    if (!v.valid() || v.id >= static_cast<int>(nodes_.size())) {
      throw InvalidInputError("tape: invalid variable");
    }
    return nodes_[static_cast<std::size_t>(v.id)];
  }

  TensorT<T>& mutable_grad(int id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.shape != n.value.shape) n.grad = TensorT<T>::zeros(n.value.shape);
    return n.grad;
  }

  static void accumulate(TensorT<T>& dst, const TensorT<T>& src) {
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst.data[i] += src.data[i];
  }

  static void transpose_copy(T* out, const T* in, int b, int m, int n) {
    for (int bi = 0; bi < b; ++bi) {
      const T* ip = in + static_cast<std::int64_t>(bi) * m * n;
      T* op = out + static_cast<std::int64_t>(bi) * m * n;
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) op[static_cast<std::int64_t>(j) * m + i] = ip[i * n + j];
      }
    }
  }

  static void matmul_acc(T* out, const T* a, const T* b, int m, int k, int n, bool count) {
    std::uint64_t trips = 0;
    for (int i = 0; i < m; ++i) {
      for (int kk = 0; kk < k; ++kk) {
        const T aik = a[static_cast<std::int64_t>(i) * k + kk];
        const T* brow = b + static_cast<std::int64_t>(kk) * n;
        T* orow = out + static_cast<std::int64_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += aik * brow[j];
        trips += static_cast<std::uint64_t>(n);
      }
    }
    if (count) opcount::macs += trips;
  }

  static std::int64_t sample_offset(const detail::Nchw& v, int s) {
    return static_cast<std::int64_t>(s) * v.c * v.h * v.w;
  }

  // Copies one [c,h,w] sample into a zero-padded [c,h+2p,w+2p] buffer.
  static TensorT<T> pad_input(const T* sample, const detail::Nchw& v, int padding) {
    const int hp = v.h + 2 * padding, wp = v.w + 2 * padding;
    TensorT<T> padded = TensorT<T>::zeros({v.c, hp, wp});
    for (int ci = 0; ci < v.c; ++ci) {
      for (int y = 0; y < v.h; ++y) {
        const T* src = sample + (static_cast<std::int64_t>(ci) * v.h + y) * v.w;
        T* dst = padded.ptr() + (static_cast<std::int64_t>(ci) * hp + y + padding) * wp + padding;
        std::copy(src, src + v.w, dst);
      }
    }
    return padded;
  }

  static void unpad_accumulate(T* sample_grad, const TensorT<T>& gpad, const detail::Nchw& v,
                               int padding) {
    const int hp = v.h + 2 * padding, wp = v.w + 2 * padding;
    (void)hp;
    for (int ci = 0; ci < v.c; ++ci) {
      for (int y = 0; y < v.h; ++y) {
        const T* src =
            gpad.ptr() + (static_cast<std::int64_t>(ci) * (v.h + 2 * padding) + y + padding) * wp +
            padding;
        T* dst = sample_grad + (static_cast<std::int64_t>(ci) * v.h + y) * v.w;
        for (int x = 0; x < v.w; ++x) dst[x] += src[x];
      }
    }
  }

  static void conv_sample_forward(T* out, const TensorT<T>& padded, const T* kernel, int c_out,
                                  int c_in, int d, int stride, int ho, int wo) {
    const int hp = padded.shape[1], wp = padded.shape[2];
    (void)hp;
    std::uint64_t trips = 0;
    for (int co = 0; co < c_out; ++co) {
      for (int ci = 0; ci < c_in; ++ci) {
        for (int ky = 0; ky < d; ++ky) {
          for (int kx = 0; kx < d; ++kx) {
            const T kval = kernel[((static_cast<std::int64_t>(co) * c_in + ci) * d + ky) * d + kx];
            for (int oy = 0; oy < ho; ++oy) {
              T* orow = out + (static_cast<std::int64_t>(co) * ho + oy) * wo;
              const T* irow = padded.ptr() +
                              (static_cast<std::int64_t>(ci) * padded.shape[1] + oy * stride + ky) *
                                  wp +
                              kx;
              for (int ox = 0; ox < wo; ++ox) orow[ox] += kval * irow[ox * stride];
              trips += static_cast<std::uint64_t>(wo);
            }
          }
        }
      }
    }
    opcount::macs += trips;
  }

  std::vector<Node> nodes_;
  // Set before each node's backward closure runs so closures can locate
  // their own gradient without capturing a self-reference.
  int out_id_ = -1;

  void run_backward_of(int id) {
    out_id_ = id;
    nodes_[static_cast<std::size_t>(id)].backward(*this);
  }
};

// Central finite differences of a scalar-valued function, compared against
// a given analytic gradient. Returns the worst relative error with
// denominator max(|analytic|, |numeric|, 1e-8).
template <typename T>
double finite_diff_check(const std::function<T(const TensorT<T>&)>& f, const TensorT<T>& at,
                         T step, const TensorT<T>& analytic_grad) {
  if (!analytic_grad.same_shape(at)) {
    throw ShapeError("finite_diff_check: gradient shape mismatch");
  }
  double worst = 0.0;
  TensorT<T> x = at;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T saved = x.data[i];
    x.data[i] = saved + step;
    const double fp = static_cast<double>(f(x));
    x.data[i] = saved - step;
    const double fm = static_cast<double>(f(x));
    x.data[i] = saved;
    const double numeric = (fp - fm) / (2.0 * static_cast<double>(step));
    const double analytic = static_cast<double>(analytic_grad.data[i]);
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    worst = std::max(worst, std::abs(analytic - numeric) / denom);
  }
  return worst;
}

}  // namespace mriqa

#endif  // MRIQA_TENSOR_HPP_
