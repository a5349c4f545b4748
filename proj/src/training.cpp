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
#include "mriqa/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

namespace mriqa {

namespace fs = std::filesystem;

std::array<double, kNumClasses> class_weights(
    const std::array<std::int64_t, kNumClasses>& counts) {
  std::int64_t mx = 0;
  for (std::int64_t n : counts) {
    if (n < 1) {
      throw DegenerateClassError("class_weights: every class needs at least one sample");
    }
    mx = std::max(mx, n);
  }
  std::array<double, kNumClasses> w{};
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i] = static_cast<double>(mx) / static_cast<double>(counts[i]);
  }
  return w;
}

SliceImage rotate_bilinear(const SliceImage& slice, double degrees) {
  const int h = slice.height, w = slice.width;
  const double rad = degrees * 3.14159265358979323846 / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (h - 1) / 2.0, cx = (w - 1) / 2.0;
  SliceImage out;
  out.height = h;
  out.width = w;
  out.data.assign(slice.data.size(), 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double sx = cx + c * dx + s * dy;
      const double sy = cy - s * dx + c * dy;
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      double acc = 0.0;
      for (int oy = 0; oy < 2; ++oy) {
        for (int ox = 0; ox < 2; ++ox) {
          const int yy = y0 + oy, xx = x0 + ox;
          if (yy < 0 || yy >= h || xx < 0 || xx >= w) continue;
          const double wgt = (ox ? fx : 1.0 - fx) * (oy ? fy : 1.0 - fy);
          acc += wgt * slice.at(yy, xx);
        }
      }
      out.at(y, x) = static_cast<float>(acc);
    }
  }
  return out;
}

SliceImage hflip(const SliceImage& slice) {
  SliceImage out = slice;
  for (int y = 0; y < slice.height; ++y) {
    for (int x = 0; x < slice.width; ++x) out.at(y, x) = slice.at(y, slice.width - 1 - x);
  }
  return out;
}

SliceImage augment(const SliceImage& slice, const AugmentationConfig& cfg, std::mt19937_64& rng) {
  if (cfg.flip_prob < 0.0 || cfg.flip_prob > 1.0) {
    throw InvalidInputError("augment: flip probability must lie in [0,1]");
  }
  std::uniform_real_distribution<double> angle(-cfg.rotation_deg, cfg.rotation_deg);
  std::bernoulli_distribution flip(cfg.flip_prob);
  SliceImage out = rotate_bilinear(slice, cfg.rotation_deg > 0.0 ? angle(rng) : 0.0);
  if (flip(rng)) out = hflip(out);
  for (auto& v : out.data) v = std::min(std::max(v, 0.0f), 1.0f);
  return out;
}

SliceImage TrainSlice::to_slice() const {
  SliceImage s;
  s.height = s.width = size;
  s.data.resize(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    s.data[i] = static_cast<float>(pixels[i]) / 65535.0f;
  }
  return s;
}

Tensor32 TrainSlice::to_tensor() const {
  Tensor32 t = Tensor32::zeros({1, size, size});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    t.data[i] = static_cast<float>(pixels[i]) / 65535.0f;
  }
  return t;
}

SliceDataset load_slice_dataset(const std::string& manifest_path, int canvas) {
  const DatasetManifest manifest = load_manifest(manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  SliceDataset data;
  data.reserve(manifest.records.size());
  for (const auto& rec : manifest.records) {
    const RawImage raw = load_pgm((base / rec.image_path).string());
    const SliceImage normalized = minmax_normalize(widen_raw(raw));
    const SliceImage padded = pad_to_size(normalized, canvas);
    TrainSlice ts;
    ts.volume_id = rec.volume_id;
    ts.slice_index = rec.slice_index;
    ts.size = canvas;
    ts.pixels = quantize_to_pgm(padded).data;
    ts.label = rec.label;
    ts.pseudo_labeled = rec.pseudo_labeled;
    data.push_back(std::move(ts));
  }
  return data;
}

SplitIndices stratified_split(const std::vector<int>& indices,
                              const std::vector<int>& labels_by_index, double val_fraction,
                              std::mt19937_64& rng) {
  if (val_fraction < 0.0 || val_fraction >= 1.0) {
    throw InvalidInputError("stratified_split: fraction must lie in [0,1)");
  }
  std::array<std::vector<int>, kNumClasses> by_class;
  for (int idx : indices) {
    const int label = labels_by_index[static_cast<std::size_t>(idx)];
    if (label < 0 || label >= kNumClasses) {
      throw InvalidInputError("stratified_split: label out of range");
    }
    by_class[static_cast<std::size_t>(label)].push_back(idx);
  }
  SplitIndices split;
  for (auto& bucket : by_class) {
    std::shuffle(bucket.begin(), bucket.end(), rng);
    const auto n_val = static_cast<std::size_t>(
        std::llround(val_fraction * static_cast<double>(bucket.size())));
    for (std::size_t i = 0; i < bucket.size(); ++i) {
      (i < n_val ? split.validation : split.train).push_back(bucket[i]);
    }
  }
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.validation.begin(), split.validation.end());
  return split;
}

std::string to_keyvalue(const EpochMetrics& m) {
  std::ostringstream os;
  os << "epoch=" << m.epoch << " train_loss=" << std::fixed << std::setprecision(6)
     << m.train_loss << " val_accuracy=" << std::setprecision(4) << m.val_accuracy;
  return os.str();
}

namespace {

Tensor32 batch_tensor(const std::vector<SliceImage>& slices) {
  const int s = slices[0].height;
  Tensor32 t = Tensor32::zeros({static_cast<int>(slices.size()), 1, s, s});
  for (std::size_t i = 0; i < slices.size(); ++i) {
    std::copy(slices[i].data.begin(), slices[i].data.end(),
              t.data.begin() + static_cast<std::ptrdiff_t>(i) * s * s);
  }
  return t;
}

double validation_accuracy(NRNet32& net, const SliceDataset& data,
                           const std::vector<int>& val_indices) {
  if (val_indices.empty()) return 0.0;
  const std::vector<SlicePrediction> preds = predict_slices(net, data, val_indices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val_indices.size(); ++i) {
    const auto& truth = data[static_cast<std::size_t>(val_indices[i])].label;
    if (truth && preds[i].label == *truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val_indices.size());
}

}  // namespace

std::vector<SlicePrediction> predict_slices(NRNet32& net, const SliceDataset& data,
                                            const std::vector<int>& indices, int batch_size) {
  std::vector<int> all;
  if (indices.empty()) {
    all.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) all[i] = static_cast<int>(i);
  }
  const std::vector<int>& idx = indices.empty() ? all : indices;
  std::vector<SlicePrediction> preds;
  preds.reserve(idx.size());
  for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(idx.size(), start + static_cast<std::size_t>(batch_size));
    std::vector<SliceImage> slices;
    slices.reserve(end - start);
    for (std::size_t i = start; i < end; ++i) {
      slices.push_back(data[static_cast<std::size_t>(idx[i])].to_slice());
    }
    const Tensor32 probs = net.infer_probs(batch_tensor(slices));
    for (std::size_t i = 0; i < end - start; ++i) {
      std::array<double, kNumClasses> p{};
      double sum = 0.0;
      for (int k = 0; k < kNumClasses; ++k) {
        p[static_cast<std::size_t>(k)] =
            static_cast<double>(probs.data[i * kNumClasses + static_cast<std::size_t>(k)]);
        sum += p[static_cast<std::size_t>(k)];
      }
      for (auto& v : p) v /= sum;
      preds.push_back(SlicePrediction::from_probabilities(p));
    }
  }
  return preds;
}

TrainResult train(const SliceDataset& data, const std::vector<int>& train_indices,
                  const std::vector<int>& val_indices, const TrainConfig& cfg, std::uint64_t seed,
                  const Checkpoint* init, const BatchObserver& observer) {
  if (train_indices.empty()) throw InvalidInputError("train: no training slices");
  std::array<std::int64_t, kNumClasses> counts{};
  for (int idx : train_indices) {
    const auto& lbl = data[static_cast<std::size_t>(idx)].label;
    if (!lbl) throw InvalidInputError("train: unlabeled slice in the training set");
    ++counts[static_cast<std::size_t>(static_cast<int>(*lbl))];
  }
  const int present = static_cast<int>(std::count_if(counts.begin(), counts.end(),
                                                     [](std::int64_t n) { return n > 0; }));
  if (present < 2) {
    throw DegenerateClassError("train: need samples from at least two classes");
  }

  FocalLossConfig focal;
  focal.kappa = cfg.kappa;
  focal.lambda_reg = cfg.lambda_reg;
  std::int64_t mx = *std::max_element(counts.begin(), counts.end());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    focal.class_weights[i] =
        counts[i] > 0 ? static_cast<double>(mx) / static_cast<double>(counts[i]) : 1.0;
  }

  std::mt19937_64 master(seed);
  const std::uint64_t init_seed = master();

  NRNet32 net = init ? NRNet32(*init) : NRNet32(cfg.net, init_seed);
  RmsProp32 optimizer(cfg.optimizer);

  TrainResult result;
  result.best_val_accuracy = -1.0;

  std::vector<int> order = train_indices;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::mt19937_64 epoch_rng(master());
    std::shuffle(order.begin(), order.end(), epoch_rng);

    double loss_sum = 0.0;
    int batch_count = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<SliceImage> slices;
      std::vector<int> targets;
      for (std::size_t i = start; i < end; ++i) {
        const TrainSlice& ts = data[static_cast<std::size_t>(order[i])];
        SliceImage img = ts.to_slice();
        if (cfg.augment_enabled) img = augment(img, cfg.augmentation, epoch_rng);
        slices.push_back(std::move(img));
        targets.push_back(static_cast<int>(*ts.label));
      }
      GradientTapeT<float> tape;
      auto input = tape.leaf(batch_tensor(slices));
      auto probs = net.forward(tape, input, true);
      auto loss = focal_loss(tape, probs, targets, focal, net.weight_matrix_vars());
      const double loss_value = static_cast<double>(tape.value(loss).data[0]);
      tape.backward(loss);
      net.collect_grads(tape);
      optimizer.step(net.parameters());

      loss_sum += loss_value;
      ++batch_count;
      if (observer) observer(epoch, batch_count, tape.value(input), targets, loss_value);
    }

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = batch_count > 0 ? loss_sum / batch_count : 0.0;
    m.val_accuracy = validation_accuracy(net, data, val_indices);
    result.history.push_back(m);
    if (m.val_accuracy > result.best_val_accuracy) {
      result.best_val_accuracy = m.val_accuracy;
      result.best_epoch = epoch;
      result.best_checkpoint = net.to_checkpoint();
    }
  }
  result.final_checkpoint = net.to_checkpoint();
  if (result.best_epoch == 0) result.best_checkpoint = result.final_checkpoint;
  return result;
}

TrainResult train(const SliceDataset& data, const TrainConfig& cfg, std::uint64_t seed,
                  const Checkpoint* init, const BatchObserver& observer) {
  std::vector<int> labeled;
  std::vector<int> labels(data.size(), -1);
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label) {
      labeled.push_back(static_cast<int>(i));
      labels[i] = static_cast<int>(*data[i].label);
    }
  }
  std::mt19937_64 split_rng(seed ^ 0x9e3779b97f4a7c15ull);
  const SplitIndices split =
      stratified_split(labeled, labels, cfg.validation_fraction, split_rng);
  return train(data, split.train, split.validation, cfg, seed, init, observer);
}

}  // namespace mriqa
