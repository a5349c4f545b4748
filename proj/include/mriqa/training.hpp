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
#ifndef MRIQA_TRAINING_HPP_
#define MRIQA_TRAINING_HPP_

// Supervised training of the slice network: balanced focal loss with L2
// regularization, RMSprop with a decaying learning rate, rotation/flip
// augmentation, and a deterministic epoch/validation loop.

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "mriqa/domain.hpp"
#include "mriqa/nrnet.hpp"
#include "mriqa/tensor.hpp"

namespace mriqa {

// alpha_t = max(N_1,N_2,N_3) / N_t; the majority class gets weight 1.
std::array<double, kNumClasses> class_weights(const std::array<std::int64_t, kNumClasses>& counts);

struct FocalLossConfig {
  double kappa = 2.0;
  double lambda_reg = 0.01;
  std::array<double, kNumClasses> class_weights = {1.0, 1.0, 1.0};
};

// -alpha_t (1 - p_t)^kappa log(p_t), averaged over the batch, plus
// lambda/(2 n_w) * sum_w ||w||^2 over the given weight matrices.
template <typename T>
typename GradientTapeT<T>::Var focal_loss(
    GradientTapeT<T>& tape, typename GradientTapeT<T>::Var probs, const std::vector<int>& targets,
    const FocalLossConfig& cfg, const std::vector<typename GradientTapeT<T>::Var>& weights) {
  using Var = typename GradientTapeT<T>::Var;
  if (cfg.kappa < 0.0) throw InvalidInputError("focal_loss: kappa must be >= 0");
  if (cfg.lambda_reg < 0.0) throw InvalidInputError("focal_loss: lambda must be >= 0");
  std::vector<T> alphas;
  alphas.reserve(targets.size());
  for (int t : targets) {
    if (t < 0 || t >= kNumClasses) throw InvalidInputError("focal_loss: target out of range");
    const double a = cfg.class_weights[static_cast<std::size_t>(t)];
    if (a <= 0.0) throw InvalidInputError("focal_loss: class weights must be positive");
    alphas.push_back(static_cast<T>(a));
  }
  Var loss = tape.focal_term(probs, targets, alphas, static_cast<T>(cfg.kappa));
  if (cfg.lambda_reg > 0.0 && !weights.empty()) {
    Var ssq = tape.sum_squares(weights[0]);
    for (std::size_t i = 1; i < weights.size(); ++i) {
      ssq = tape.add(ssq, tape.sum_squares(weights[i]));
    }
    const T factor = static_cast<T>(cfg.lambda_reg / (2.0 * static_cast<double>(weights.size())));
    loss = tape.add(loss, tape.scale(ssq, factor));
  }
  return loss;
}

struct RmsPropConfig {
  double learning_rate = 1e-5;
  double decay = 5e-8;
  double rho = 0.9;
  double epsilon = 1e-7;
};

// v <- rho v + (1-rho) g^2 ; p <- p - lr_k g / (sqrt(v) + eps) with
// lr_k = lr_0 / (1 + decay * k).
template <typename T>
class RmsPropT {
 public:
  explicit RmsPropT(RmsPropConfig cfg = {}) : cfg_(cfg) {}

  double current_learning_rate() const {
    return cfg_.learning_rate / (1.0 + cfg_.decay * static_cast<double>(step_count_));
  }
  std::int64_t steps() const { return step_count_; }
  const RmsPropConfig& config() const { return cfg_; }

  void step(const std::vector<ParameterT<T>*>& params) {
    const T lr = static_cast<T>(current_learning_rate());
    const T rho = static_cast<T>(cfg_.rho);
    const T eps = static_cast<T>(cfg_.epsilon);
    for (ParameterT<T>* p : params) {
      if (p->grad.shape != p->value.shape) {
        throw ShapeError("rmsprop: gradient shape mismatch for '" + p->name + "'");
      }
      TensorT<T>& v = accumulator(p);
      for (std::int64_t i = 0; i < p->value.numel(); ++i) {
        const T g = p->grad.data[i];
        v.data[i] = rho * v.data[i] + (T(1) - rho) * g * g;
        p->value.data[i] -= lr * g / (std::sqrt(v.data[i]) + eps);
      }
    }
    ++step_count_;
  }

 private:
  TensorT<T>& accumulator(ParameterT<T>* p) {
    auto it = accum_.find(p);
    if (it == accum_.end()) {
      it = accum_.emplace(p, TensorT<T>::zeros(p->value.shape)).first;
    }
    return it->second;
  }

  RmsPropConfig cfg_;
  std::int64_t step_count_ = 0;
  std::unordered_map<ParameterT<T>*, TensorT<T>> accum_;
};

using RmsProp32 = RmsPropT<float>;

// ---- augmentation ----

struct AugmentationConfig {
  double rotation_deg = 10.0;  // uniform angle in [-rotation_deg, +rotation_deg]
  double flip_prob = 0.5;
  std::uint64_t seed = 0;  // standalone use; pipelines pass their own rng
};

SliceImage rotate_bilinear(const SliceImage& slice, double degrees);
SliceImage hflip(const SliceImage& slice);

// Rotation (bilinear, zero fill) then an optional horizontal flip; output
// clamped to [0,1]. Labels are untouched by construction.
SliceImage augment(const SliceImage& slice, const AugmentationConfig& cfg, std::mt19937_64& rng);

// ---- dataset in memory ----

struct TrainSlice {
  std::string volume_id;
  int slice_index = 0;
  int size = 0;                        // canvas extent
  std::vector<std::uint16_t> pixels;   // quantized [0,1] values
  std::optional<QualityLabel> label;   // current training label
  bool pseudo_labeled = false;

  SliceImage to_slice() const;
  Tensor32 to_tensor() const;  // [1,size,size]
};

using SliceDataset = std::vector<TrainSlice>;

// Loads every manifest record: 16-bit graymap -> min-max normalize ->
// center-pad to `canvas`.
SliceDataset load_slice_dataset(const std::string& manifest_path, int canvas);

// ---- training loop ----

struct SplitIndices {
  std::vector<int> train;
  std::vector<int> validation;
};

// Per-class proportional validation split; class proportions are preserved
// within one sample per class.
SplitIndices stratified_split(const std::vector<int>& indices,
                              const std::vector<int>& labels_by_index, double val_fraction,
                              std::mt19937_64& rng);

struct TrainConfig {
  NRNetConfig net;
  int epochs = 30;
  int batch_size = 16;
  double kappa = 2.0;
  double lambda_reg = 0.01;
  RmsPropConfig optimizer;
  AugmentationConfig augmentation;
  bool augment_enabled = true;
  double validation_fraction = 0.1;  // 9:1
};

struct EpochMetrics {
  int epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
};

std::string to_keyvalue(const EpochMetrics& m);

struct TrainResult {
  Checkpoint best_checkpoint;
  Checkpoint final_checkpoint;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  std::vector<EpochMetrics> history;
};

// Called once per optimizer step with the augmented batch it consumed.
using BatchObserver = std::function<void(int epoch, int batch_index, const Tensor32& inputs,
                                         const std::vector<int>& targets, double loss)>;

// Deterministic given (data, config, seed). Trains on `train_indices`,
// reports accuracy on `val_indices` after every epoch, and keeps the
// best-validation checkpoint. `init` fine-tunes from an existing
// checkpoint instead of a fresh initialization.
TrainResult train(const SliceDataset& data, const std::vector<int>& train_indices,
                  const std::vector<int>& val_indices, const TrainConfig& cfg, std::uint64_t seed,
                  const Checkpoint* init = nullptr, const BatchObserver& observer = {});

// Convenience: stratified 9:1 split of all labeled slices, then train.
TrainResult train(const SliceDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                  const Checkpoint* init = nullptr, const BatchObserver& observer = {});

// Batched inference over `indices` (all slices when empty).
std::vector<SlicePrediction> predict_slices(NRNet32& net, const SliceDataset& data,
                                            const std::vector<int>& indices, int batch_size = 32);

}  // namespace mriqa

#endif  // MRIQA_TRAINING_HPP_
