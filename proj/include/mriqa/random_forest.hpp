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
#ifndef MRIQA_RANDOM_FOREST_HPP_
#define MRIQA_RANDOM_FOREST_HPP_

// Volume-level classifier: an entropy-criterion random forest over
// fixed-length feature vectors summarizing the per-slice quality ratings
// of one volume. Balanced class weights counter label imbalance.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mriqa/domain.hpp"

namespace mriqa {

// Per-volume summary of slice predictions, independent of slice count:
//   [0..2]   fraction of slices predicted pass / questionable / fail
//   [3..5]   mean / min / max of p_pass across slices
//   [6..8]   mean / min / max of p_ques across slices
//   [9..11]  mean / min / max of p_fail across slices
//   [12]     number of consecutive predicted-fail runs / slice count
struct VolumeFeatures {
  static constexpr int kCount = 13;
  std::array<double, kCount> values{};
};

VolumeFeatures volume_features(const std::vector<SlicePrediction>& slice_predictions);

using FeatureMatrix = std::vector<std::vector<double>>;

// Weighted class entropy in bits: H = -sum_t q_t log2 q_t with
// q_t proportional to weight_t * count_t and 0 log 0 = 0.
double entropy(const std::array<std::int64_t, kNumClasses>& counts,
               const std::array<double, kNumClasses>& weights);

struct SplitCandidate {
  int feature = -1;
  double threshold = 0.0;
  double gain = 0.0;  // bits
};

// Maximizes weighted information gain over midpoint thresholds of sorted
// distinct values; ties break toward the lowest feature index, then the
// lowest threshold. Returns nullopt when the node is pure or no split has
// positive gain.
std::optional<SplitCandidate> best_split(const FeatureMatrix& x, const std::vector<int>& y,
                                         const std::vector<int>& sample_indices,
                                         const std::vector<int>& feature_subset,
                                         const std::array<double, kNumClasses>& class_weights);

struct TreeNode {
  int feature = -1;  // -1: leaf
  double threshold = 0.0;
  int left = -1, right = -1;
  std::array<double, kNumClasses> distribution{};  // leaves only; sums to 1
};

struct DecisionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  const std::array<double, kNumClasses>& predict(const std::vector<double>& features) const;
};

struct ForestConfig {
  int tree_count = 50;
  int max_depth = 0;  // 0 = unlimited
  bool bootstrap = true;
  bool feature_subsample = true;  // floor(sqrt(F)) features per node
  bool balanced_weights = true;
};

struct Forest {
  ForestConfig config;
  std::array<double, kNumClasses> class_weights = {1.0, 1.0, 1.0};
  std::vector<DecisionTree> trees;

  std::string serialize() const;
  static Forest deserialize(const std::string& text);
  void save(const std::string& path) const;
  static Forest load(const std::string& path);
};

// Deterministic given the master seed: per-tree seeds drive bootstrap
// resampling and per-node feature subsets.
Forest fit_forest(const FeatureMatrix& x, const std::vector<int>& y, const ForestConfig& config,
                  std::uint64_t seed);

// Averaged tree distributions; the label is the fixed-order argmax.
SlicePrediction predict_volume(const Forest& forest, const std::vector<double>& features);

inline SlicePrediction predict_volume(const Forest& forest, const VolumeFeatures& features) {
  return predict_volume(forest,
                        std::vector<double>(features.values.begin(), features.values.end()));
}

}  // namespace mriqa

#endif  // MRIQA_RANDOM_FOREST_HPP_
