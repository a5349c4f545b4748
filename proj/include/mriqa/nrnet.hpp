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
#ifndef MRIQA_NRNET_HPP_
#define MRIQA_NRNET_HPP_

// The slice quality-assessment network: a convolution stem, stride-2
// residual stages, then either a stride-1 residual head or a nonlocal
// attention block, and a 1x1-conv classifier with global average pooling
// and softmax. Blocks come in standard-convolution (CRes) and
// depthwise-separable (DSRes) flavors; the four ablation variants combine
// them with/without the nonlocal block.

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mriqa/cost_model.hpp"
#include "mriqa/domain.hpp"
#include "mriqa/tensor.hpp"

namespace mriqa {

enum class Variant { CRes, CResNRes, DSRes, DSResNRes };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& token);

struct NRNetConfig {
  Variant variant = Variant::DSResNRes;
  int input_size = 256;
  int stem_channels = 64;
  std::vector<int> stage_channels = {128, 256};  // stride-2 residual stages
  int head_channels = 512;  // stride-1 block used when the variant has no NRes
  int kernel = 3;
  int num_classes = kNumClasses;
  int nres_embed = 0;  // 0 = channels/2
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.9;

  bool has_nres() const {
    return variant == Variant::CResNRes || variant == Variant::DSResNRes;
  }
  bool separable() const {
    return variant == Variant::DSRes || variant == Variant::DSResNRes;
  }
  int max_channels() const;
  int embed_channels() const;  // NRes embedding width

  void validate() const;
  std::string to_text() const;
  static NRNetConfig from_text(const std::string& text);
};

// The four ablation architectures at the channel plan used for the
// published comparison (input 256, stages 128/256, head 512).
NRNetConfig build_variant(Variant tag);

// Same block structure scaled down for desk-size experiments.
NRNetConfig desk_variant(Variant tag, int input_size = 64);

// Per-layer geometry of the network in execution order, for analytic
// MAC/parameter accounting.
std::vector<LayerDesc> layer_plan(const NRNetConfig& cfg);

CostReport network_cost(const NRNetConfig& cfg);

// ---- checkpoint ----

struct NamedTensor {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

// Versioned binary container: magic, format version, the named parameter
// and running-stat tensors as little-endian 32-bit floats, then the
// architecture configuration as key=value text. Round-trips bit-exactly.
struct Checkpoint {
  std::uint32_t version = 1;
  NRNetConfig config;
  std::vector<NamedTensor> tensors;

  void save(const std::string& path) const;
  static Checkpoint load(const std::string& path);
};

// ---- blocks ----

template <typename T>
struct ConvBnLayerT {
  ParameterT<T> w;  // [c_out, c_in, d, d]
  ParameterT<T> gamma, beta;
  BatchNormStateT<T> bn;
  int stride = 2;
};

template <typename T>
struct ResBlockT {
  bool separable = true;
  int c_in = 0, c_out = 0, d = 3, stride = 1;
  // separable path: depthwise + pointwise pairs
  ParameterT<T> dw1, pw1, dw2, pw2;
  // standard path: full kernels
  ParameterT<T> w1, w2;
  ParameterT<T> gamma1, beta1, gamma2, beta2;
  BatchNormStateT<T> bn1, bn2;
  std::optional<ParameterT<T>> skip;  // 1x1 projection when channels/stride change
};

template <typename T>
struct NResBlockT {
  int channels = 0, embed = 0;
  ParameterT<T> phi, psi, g;  // [e, c] pointwise embeddings
  ParameterT<T> wout;         // [c, e], zero-initialized so the block starts as identity
};

template <typename T>
struct ClassifierT {
  ParameterT<T> w;     // [k, c]
  ParameterT<T> bias;  // [k]
};

// ---- block forwards (tape functions over pre-bound variables) ----

template <typename T>
struct ResBlockVars {
  bool separable = true;
  int d = 3, stride = 1;
  typename GradientTapeT<T>::Var dw1, pw1, dw2, pw2;  // separable path
  typename GradientTapeT<T>::Var w1, w2;              // standard path
  typename GradientTapeT<T>::Var gamma1, beta1, gamma2, beta2;
  std::optional<typename GradientTapeT<T>::Var> skip;
  BatchNormStateT<T>* bn1 = nullptr;
  BatchNormStateT<T>* bn2 = nullptr;
};

// depthwise -> pointwise -> bn -> relu -> depthwise -> pointwise -> bn,
// plus the skip path, relu after the sum. The standard flavor replaces
// each depthwise+pointwise pair with one full convolution.
template <typename T>
typename GradientTapeT<T>::Var dsres_forward(GradientTapeT<T>& tape,
                                             typename GradientTapeT<T>::Var x,
                                             const ResBlockVars<T>& p, bool training) {
  using Var = typename GradientTapeT<T>::Var;
  const int pad = p.d / 2;
  Var main = x;
  if (p.separable) {
    main = tape.depthwise_conv2d(main, p.dw1, p.stride, pad);
    main = tape.pointwise_conv2d(main, p.pw1);
  } else {
    main = tape.conv2d(main, p.w1, p.stride, pad);
  }
  main = tape.batchnorm2d(main, p.gamma1, p.beta1, p.bn1, training);
  main = tape.relu(main);
  if (p.separable) {
    main = tape.depthwise_conv2d(main, p.dw2, 1, pad);
    main = tape.pointwise_conv2d(main, p.pw2);
  } else {
    main = tape.conv2d(main, p.w2, 1, pad);
  }
  main = tape.batchnorm2d(main, p.gamma2, p.beta2, p.bn2, training);
  Var shortcut = p.skip ? tape.conv2d(x, *p.skip, p.stride, 0) : x;
  return tape.relu(tape.add(main, shortcut));
}

template <typename T>
struct NResVars {
  typename GradientTapeT<T>::Var phi, psi, g, wout;
};

template <typename T>
struct NResResult {
  typename GradientTapeT<T>::Var attention;    // [n,hw,hw], rows sum to 1
  typename GradientTapeT<T>::Var aggregation;  // attention-weighted features, pre-residual
  typename GradientTapeT<T>::Var output;       // x + wout(aggregation)
};

// For each location i the aggregation is sum_j softmax_j(phi(x_i)^T
// psi(x_j)) g(x_j); the result re-enters through a residual projection.
template <typename T>
NResResult<T> nres_forward(GradientTapeT<T>& tape, typename GradientTapeT<T>::Var x,
                           const NResVars<T>& p) {
  using Var = typename GradientTapeT<T>::Var;
  const TensorT<T>& xv = tape.value(x);
  const auto dims = detail::as_nchw(xv, "nres_forward");
  const int e = tape.value(p.phi).shape[0];
  const int hw = dims.h * dims.w;

  Var phi = tape.pointwise_conv2d(x, p.phi);  // [*,e,h,w]
  Var psi = tape.pointwise_conv2d(x, p.psi);
  Var g = tape.pointwise_conv2d(x, p.g);

  Var phi3 = tape.reshape(phi, {dims.n, e, hw});
  Var psi3 = tape.reshape(psi, {dims.n, e, hw});
  Var g3 = tape.reshape(g, {dims.n, e, hw});

  Var attention = tape.softmax(tape.matmul(tape.transpose_last2(phi3), psi3));  // [n,hw,hw]
  Var agg = tape.transpose_last2(tape.matmul(attention, tape.transpose_last2(g3)));  // [n,e,hw]
  Var agg_map = tape.reshape(agg, detail::nchw_shape(dims, e, dims.h, dims.w));

  Var out = tape.add(x, tape.pointwise_conv2d(agg_map, p.wout));
  return {attention, agg_map, out};
}

// ---- the assembled network ----

template <typename T>
class NRNetT {
 public:
  using Tape = GradientTapeT<T>;
  using Var = typename Tape::Var;

  NRNetT(NRNetConfig cfg, std::uint64_t seed);
  explicit NRNetT(const Checkpoint& ck);

  // Registers every parameter on the tape and runs the network.
  // input: [n,1,s,s] or [1,s,s]; returns class probabilities [n,k] or [k].
  Var forward(Tape& tape, Var input, bool training);

  // Inference convenience: builds a private tape in inference mode.
  TensorT<T> infer_probs(const TensorT<T>& input);

  // Copies tape gradients into the parameters bound by the last forward().
  void collect_grads(const Tape& tape);

  std::vector<ParameterT<T>*> parameters();
  // The L2-regularized subset: convolution/projection kernels only.
  std::vector<ParameterT<T>*> weight_matrices();
  // Tape variables of the weight matrices bound by the last forward().
  const std::vector<Var>& weight_matrix_vars() const { return weight_vars_; }

  Checkpoint to_checkpoint() const;
  const NRNetConfig& config() const { return cfg_; }

  NResBlockT<T>* nres_block() { return nres_ ? &*nres_ : nullptr; }
  ClassifierT<T>& classifier() { return classifier_; }

 private:
  template <typename Fn>
  void for_each_parameter(Fn&& fn);  // fn(name, ParameterT&, is_weight_matrix)
  template <typename Fn>
  void for_each_bn_state(Fn&& fn);  // fn(name, BatchNormStateT&)

  Var bind(Tape& tape, ParameterT<T>& p, bool weight_matrix);
  Var res_block(Tape& tape, ResBlockT<T>& blk, Var x, bool training);

  NRNetConfig cfg_;
  ConvBnLayerT<T> stem_;
  std::vector<ResBlockT<T>> stages_;
  std::optional<ResBlockT<T>> head_;
  std::optional<NResBlockT<T>> nres_;
  ClassifierT<T> classifier_;

  std::vector<std::pair<ParameterT<T>*, Var>> bound_;
  std::vector<Var> weight_vars_;
};

using NRNet32 = NRNetT<float>;
using NRNet64 = NRNetT<double>;

// Runs one preprocessed slice through the network in inference mode.
SlicePrediction nrnet_predict(NRNet32& net, const SliceImage& slice);

// Prediction line format:
// volume_id<TAB>slice_index<TAB>p_pass<TAB>p_ques<TAB>p_fail<TAB>label
// (volume-level rows use slice index -1).
std::string format_prediction_line(const std::string& volume_id, int slice_index,
                                   const SlicePrediction& pred);

// ---- template member definitions ----

namespace nrnet_detail {

template <typename T>
TensorT<T> kaiming_conv(std::vector<int> shape, std::int64_t fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  auto t = TensorT<T>::zeros(std::move(shape));
  for (auto& v : t.data) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
ResBlockT<T> make_res_block(bool separable, int c_in, int c_out, int d, int stride,
                            double bn_eps, double bn_mom, std::mt19937_64& rng) {
  ResBlockT<T> b;
  b.separable = separable;
  b.c_in = c_in;
  b.c_out = c_out;
  b.d = d;
  b.stride = stride;
  if (separable) {
    b.dw1 = ParameterT<T>("dw1", kaiming_conv<T>({c_in, d, d}, d * d, rng));
    b.pw1 = ParameterT<T>("pw1", kaiming_conv<T>({c_out, c_in}, c_in, rng));
    b.dw2 = ParameterT<T>("dw2", kaiming_conv<T>({c_out, d, d}, d * d, rng));
    b.pw2 = ParameterT<T>("pw2", kaiming_conv<T>({c_out, c_out}, c_out, rng));
  } else {
    b.w1 = ParameterT<T>("w1", kaiming_conv<T>({c_out, c_in, d, d},
                                               static_cast<std::int64_t>(c_in) * d * d, rng));
    b.w2 = ParameterT<T>("w2", kaiming_conv<T>({c_out, c_out, d, d},
                                               static_cast<std::int64_t>(c_out) * d * d, rng));
  }
  b.gamma1 = ParameterT<T>("gamma1", TensorT<T>::full({c_out}, T(1)));
  b.beta1 = ParameterT<T>("beta1", TensorT<T>::zeros({c_out}));
  b.gamma2 = ParameterT<T>("gamma2", TensorT<T>::full({c_out}, T(1)));
  b.beta2 = ParameterT<T>("beta2", TensorT<T>::zeros({c_out}));
  b.bn1 = BatchNormStateT<T>(c_out);
  b.bn2 = BatchNormStateT<T>(c_out);
  b.bn1.epsilon = b.bn2.epsilon = static_cast<T>(bn_eps);
  b.bn1.momentum = b.bn2.momentum = static_cast<T>(bn_mom);
  if (c_in != c_out || stride != 1) {
    b.skip = ParameterT<T>("skip", kaiming_conv<T>({c_out, c_in, 1, 1}, c_in, rng));
  }
  return b;
}

}  // namespace nrnet_detail

template <typename T>
NRNetT<T>::NRNetT(NRNetConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg_.kernel;

  stem_.w = ParameterT<T>("stem.w", nrnet_detail::kaiming_conv<T>(
                                        {cfg_.stem_channels, 1, d, d}, d * d, rng));
  stem_.gamma = ParameterT<T>("stem.gamma", TensorT<T>::full({cfg_.stem_channels}, T(1)));
  stem_.beta = ParameterT<T>("stem.beta", TensorT<T>::zeros({cfg_.stem_channels}));
  stem_.bn = BatchNormStateT<T>(cfg_.stem_channels);
  stem_.bn.epsilon = static_cast<T>(cfg_.bn_epsilon);
  stem_.bn.momentum = static_cast<T>(cfg_.bn_momentum);
  stem_.stride = 2;

  int c = cfg_.stem_channels;
  for (int c_out : cfg_.stage_channels) {
    stages_.push_back(nrnet_detail::make_res_block<T>(cfg_.separable(), c, c_out, d, 2,
                                                      cfg_.bn_epsilon, cfg_.bn_momentum, rng));
    c = c_out;
  }
  if (cfg_.has_nres()) {
    NResBlockT<T> nb;
    nb.channels = c;
    nb.embed = cfg_.embed_channels();
    nb.phi = ParameterT<T>("nres.phi", nrnet_detail::kaiming_conv<T>({nb.embed, c}, c, rng));
    nb.psi = ParameterT<T>("nres.psi", nrnet_detail::kaiming_conv<T>({nb.embed, c}, c, rng));
    nb.g = ParameterT<T>("nres.g", nrnet_detail::kaiming_conv<T>({nb.embed, c}, c, rng));
    nb.wout = ParameterT<T>("nres.wout", TensorT<T>::zeros({c, nb.embed}));
    nres_ = std::move(nb);
  } else {
    head_ = nrnet_detail::make_res_block<T>(cfg_.separable(), c, cfg_.head_channels, d, 1,
                                            cfg_.bn_epsilon, cfg_.bn_momentum, rng);
    c = cfg_.head_channels;
  }
  classifier_.w = ParameterT<T>("classifier.w",
                                nrnet_detail::kaiming_conv<T>({cfg_.num_classes, c}, c, rng));
  classifier_.bias = ParameterT<T>("classifier.bias", TensorT<T>::zeros({cfg_.num_classes}));
}

template <typename T>
template <typename Fn>
void NRNetT<T>::for_each_parameter(Fn&& fn) {
  fn("stem.w", stem_.w, true);
  fn("stem.gamma", stem_.gamma, false);
  fn("stem.beta", stem_.beta, false);
  auto visit_block = [&](const std::string& prefix, ResBlockT<T>& b) {
    if (b.separable) {
      fn(prefix + ".dw1", b.dw1, true);
      fn(prefix + ".pw1", b.pw1, true);
    } else {
      fn(prefix + ".w1", b.w1, true);
    }
    fn(prefix + ".gamma1", b.gamma1, false);
    fn(prefix + ".beta1", b.beta1, false);
    if (b.separable) {
      fn(prefix + ".dw2", b.dw2, true);
      fn(prefix + ".pw2", b.pw2, true);
    } else {
      fn(prefix + ".w2", b.w2, true);
    }
    fn(prefix + ".gamma2", b.gamma2, false);
    fn(prefix + ".beta2", b.beta2, false);
    if (b.skip) fn(prefix + ".skip", *b.skip, true);
  };
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    visit_block("stage" + std::to_string(i + 1), stages_[i]);
  }
  if (head_) visit_block("head", *head_);
  if (nres_) {
    fn("nres.phi", nres_->phi, true);
    fn("nres.psi", nres_->psi, true);
    fn("nres.g", nres_->g, true);
    fn("nres.wout", nres_->wout, true);
  }
  fn("classifier.w", classifier_.w, true);
  fn("classifier.bias", classifier_.bias, false);
}

template <typename T>
template <typename Fn>
void NRNetT<T>::for_each_bn_state(Fn&& fn) {
  fn("stem.bn", stem_.bn);
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    fn("stage" + std::to_string(i + 1) + ".bn1", stages_[i].bn1);
    fn("stage" + std::to_string(i + 1) + ".bn2", stages_[i].bn2);
  }
  if (head_) {
    fn("head.bn1", head_->bn1);
    fn("head.bn2", head_->bn2);
  }
}

template <typename T>
typename NRNetT<T>::Var NRNetT<T>::bind(Tape& tape, ParameterT<T>& p, bool weight_matrix) {
  Var v = tape.leaf(p.value);
  bound_.push_back({&p, v});
  if (weight_matrix) weight_vars_.push_back(v);
  return v;
}

template <typename T>
typename NRNetT<T>::Var NRNetT<T>::res_block(Tape& tape, ResBlockT<T>& blk, Var x,
                                             bool training) {
  ResBlockVars<T> v;
  v.separable = blk.separable;
  v.d = blk.d;
  v.stride = blk.stride;
  if (blk.separable) {
    v.dw1 = bind(tape, blk.dw1, true);
    v.pw1 = bind(tape, blk.pw1, true);
    v.dw2 = bind(tape, blk.dw2, true);
    v.pw2 = bind(tape, blk.pw2, true);
  } else {
    v.w1 = bind(tape, blk.w1, true);
    v.w2 = bind(tape, blk.w2, true);
  }
  v.gamma1 = bind(tape, blk.gamma1, false);
  v.beta1 = bind(tape, blk.beta1, false);
  v.gamma2 = bind(tape, blk.gamma2, false);
  v.beta2 = bind(tape, blk.beta2, false);
  if (blk.skip) v.skip = bind(tape, *blk.skip, true);
  v.bn1 = &blk.bn1;
  v.bn2 = &blk.bn2;
  return dsres_forward(tape, x, v, training);
}

template <typename T>
typename NRNetT<T>::Var NRNetT<T>::forward(Tape& tape, Var input, bool training) {
  bound_.clear();
  weight_vars_.clear();
  const TensorT<T>& iv = tape.value(input);
  const auto dims = detail::as_nchw(iv, "nrnet forward");
  if (dims.c != 1 || dims.h != cfg_.input_size || dims.w != cfg_.input_size) {
    throw ShapeError("nrnet forward: expected 1x" + std::to_string(cfg_.input_size) + "x" +
                     std::to_string(cfg_.input_size) + " slices, got " + iv.shape_str());
  }
  Var x = tape.conv2d(input, bind(tape, stem_.w, true), stem_.stride, cfg_.kernel / 2);
  x = tape.batchnorm2d(x, bind(tape, stem_.gamma, false), bind(tape, stem_.beta, false),
                       &stem_.bn, training);
  x = tape.relu(x);
  for (auto& blk : stages_) x = res_block(tape, blk, x, training);
  if (head_) x = res_block(tape, *head_, x, training);
  if (nres_) {
    NResVars<T> nv;
    nv.phi = bind(tape, nres_->phi, true);
    nv.psi = bind(tape, nres_->psi, true);
    nv.g = bind(tape, nres_->g, true);
    nv.wout = bind(tape, nres_->wout, true);
    x = nres_forward(tape, x, nv).output;
  }
  x = tape.pointwise_conv2d(x, bind(tape, classifier_.w, true));
  x = tape.bias_add(x, bind(tape, classifier_.bias, false));
  x = tape.global_avg_pool(x);
  return tape.softmax(x);
}

template <typename T>
TensorT<T> NRNetT<T>::infer_probs(const TensorT<T>& input) {
  Tape tape;
  Var out = forward(tape, tape.leaf(input), false);
  return tape.value(out);
}

template <typename T>
void NRNetT<T>::collect_grads(const Tape& tape) {
  for (auto& [param, var] : bound_) param->grad = tape.grad(var);
}

template <typename T>
std::vector<ParameterT<T>*> NRNetT<T>::parameters() {
  std::vector<ParameterT<T>*> out;
  for_each_parameter([&](const std::string&, ParameterT<T>& p, bool) { out.push_back(&p); });
  return out;
}

template <typename T>
std::vector<ParameterT<T>*> NRNetT<T>::weight_matrices() {
  std::vector<ParameterT<T>*> out;
  for_each_parameter([&](const std::string&, ParameterT<T>& p, bool wm) {
    if (wm) out.push_back(&p);
  });
  return out;
}

template <typename T>
Checkpoint NRNetT<T>::to_checkpoint() const {
  Checkpoint ck;
  ck.config = cfg_;
  auto* self = const_cast<NRNetT<T>*>(this);
  self->for_each_parameter([&](const std::string& name, ParameterT<T>& p, bool) {
    NamedTensor t;
    t.name = name;
    t.shape = p.value.shape;
    t.data.assign(p.value.data.begin(), p.value.data.end());
    ck.tensors.push_back(std::move(t));
  });
  self->for_each_bn_state([&](const std::string& name, BatchNormStateT<T>& s) {
    NamedTensor m{name + ".running_mean", s.running_mean.shape, {}};
    m.data.assign(s.running_mean.data.begin(), s.running_mean.data.end());
    ck.tensors.push_back(std::move(m));
    NamedTensor v{name + ".running_var", s.running_var.shape, {}};
    v.data.assign(s.running_var.data.begin(), s.running_var.data.end());
    ck.tensors.push_back(std::move(v));
  });
  return ck;
}

template <typename T>
NRNetT<T>::NRNetT(const Checkpoint& ck) : NRNetT(ck.config, 0) {
  auto find = [&](const std::string& name) -> const NamedTensor* {
    for (const auto& t : ck.tensors) {
      if (t.name == name) return &t;
    }
    return nullptr;
  };
  auto fill = [&](const std::string& name, TensorT<T>& dst) {
    const NamedTensor* t = find(name);
    if (t == nullptr) throw FormatError("checkpoint: missing tensor '" + name + "'");
    if (t->shape != dst.shape) throw FormatError("checkpoint: shape mismatch for '" + name + "'");
    dst.data.assign(t->data.begin(), t->data.end());
  };
  for_each_parameter([&](const std::string& name, ParameterT<T>& p, bool) {
    fill(name, p.value);
    p.grad = TensorT<T>::zeros(p.value.shape);
  });
  for_each_bn_state([&](const std::string& name, BatchNormStateT<T>& s) {
    fill(name + ".running_mean", s.running_mean);
    fill(name + ".running_var", s.running_var);
  });
}

}  // namespace mriqa

#endif  // MRIQA_NRNET_HPP_
