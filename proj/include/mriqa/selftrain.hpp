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
#ifndef MRIQA_SELFTRAIN_HPP_
#define MRIQA_SELFTRAIN_HPP_

// Semi-supervised pseudo-labeling plus the iterative self-training
// protocol: predict, keep samples whose predicted label is stable and
// confident, replace their labels with the predictions, prune the rest,
// retrain. Applied first slice-wise to the network, then volume-wise to
// the random forest over per-volume features of slice ratings.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mriqa/domain.hpp"
#include "mriqa/random_forest.hpp"
#include "mriqa/training.hpp"

namespace mriqa {

struct SelfTrainConfig {
  double p_slice = 0.8;
  double p_volume = 0.8;
  // Fixed iteration counts, matching the published protocol of running the
  // loop twice. A count of 0 selects adaptive mode: iterate until the
  // validation-accuracy improvement drops below min_improvement, capped at
  // max_iterations.
  int slice_iterations = 2;
  int volume_iterations = 2;
  int max_iterations = 5;
  double min_improvement = 0.005;
  // Rule-2 reading for initial volume labels: with the conjunctive reading
  // Fail requires strictly more fail slices than BOTH other classes.
  bool fail_rule_conjunctive = true;

  void validate() const;
};

struct PseudoLabelRecord {
  std::string id;
  std::optional<QualityLabel> previous;
  QualityLabel predicted = QualityLabel::Pass;
  double max_probability = 0.0;
  bool kept = false;  // kept-relabel iff predicted == previous and p >= threshold
};

struct SelectionResult {
  std::vector<int> kept;    // positions into the input, ascending
  std::vector<QualityLabel> kept_labels;
  std::vector<int> pruned;  // ascending
  std::int64_t relabeled = 0;
};

// Keep iff the predicted label equals the previous one AND the maximal
// probability reaches the threshold; kept entries take the predicted
// label, the rest are pruned. kept and pruned partition the input.
SelectionResult select_slices(const std::vector<QualityLabel>& previous,
                              const std::vector<SlicePrediction>& current, double threshold);

// Initial volume rating from its slice labels: Pass if more than 80
// percent of the slices are pass; else Fail if fail slices outnumber the
// others (conjunctive or disjunctive reading); else Questionable.
QualityLabel init_volume_labels(const std::array<std::int64_t, kNumClasses>& slice_counts,
                                bool fail_rule_conjunctive = true);
QualityLabel init_volume_labels(const std::vector<QualityLabel>& slice_labels,
                                bool fail_rule_conjunctive = true);

// Labels every unlabeled slice with its argmax prediction (marking it
// pseudo-labeled) so the pool can be merged into the labeled set.
std::vector<SlicePrediction> pseudo_label_slices(NRNet32& net, SliceDataset& unlabeled);

struct IterationRecord {
  int iteration = 0;
  std::int64_t kept = 0;
  std::int64_t relabeled = 0;
  std::int64_t pruned = 0;
  double val_accuracy = 0.0;
};

std::string to_keyvalue(const IterationRecord& r);

// ---- pipeline configuration ----

struct PipelineConfig {
  TrainConfig train;       // architecture, optimizer, loss, augmentation;
                           // train.epochs is the pre-training epoch count
  int retrain_epochs = 5;  // merged retraining and per-iteration retraining
  SelfTrainConfig selftrain;
  ForestConfig forest;

  std::string to_text() const;
  static PipelineConfig from_text(const std::string& text);
  static PipelineConfig load(const std::string& path);
};

// ---- stage drivers ----

struct SliceSelfTrainResult {
  Checkpoint checkpoint;  // best-validation model of the final retraining
  std::vector<IterationRecord> trace;
  std::vector<int> kept;  // surviving training indices into the pool
};

// Iterates predict -> select -> retrain over pool[train_indices], taking
// each slice's current label as the previous-iteration label. Pool labels
// are replaced with predictions for kept slices. Throws ProtocolError if
// an iteration prunes everything.
SliceSelfTrainResult slice_self_train(SliceDataset& pool, const std::vector<int>& train_indices,
                                      const std::vector<int>& val_indices, const Checkpoint& init,
                                      const PipelineConfig& cfg, std::uint64_t seed);

struct VolumeSelfTrainResult {
  Forest forest;
  std::vector<IterationRecord> trace;
  std::vector<int> kept;           // surviving training volume positions
  std::vector<int> final_labels;   // labels after relabeling (all volumes)
};

// The same protocol over volumes: fit the forest, keep stable and
// confident volumes, replace their labels with the predictions, refit.
VolumeSelfTrainResult volume_self_train(const FeatureMatrix& features,
                                        const std::vector<int>& initial_labels,
                                        const SelfTrainConfig& st_cfg, const ForestConfig& f_cfg,
                                        std::uint64_t seed);

// ---- the full two-stage pipeline ----

struct PipelineResult {
  Checkpoint pretrain_checkpoint;  // after supervised pre-training only
  Checkpoint checkpoint;           // after slice self-training
  Forest forest;                   // after volume self-training
  std::vector<IterationRecord> slice_trace;
  std::vector<IterationRecord> volume_trace;
  std::int64_t pseudo_labeled_count = 0;
  // Per-volume inputs to the volume stage, kept for threshold sweeps.
  std::vector<std::string> volume_ids;
  FeatureMatrix volume_features_matrix;
  std::vector<int> volume_initial_labels;
  std::string trace_text;  // every stage as line-delimited key=value records
};

// Pre-train on the labeled pool, pseudo-label and merge the unlabeled
// pool, retrain, run slice self-training, derive initial volume labels,
// and run volume self-training. Deterministic given (data, config, seed).
PipelineResult selftrain_pipeline(SliceDataset labeled, SliceDataset unlabeled,
                                  const PipelineConfig& cfg, std::uint64_t seed);

// Groups slice positions by volume id in first-appearance order,
// slices ordered by slice index within each volume.
std::vector<std::pair<std::string, std::vector<int>>> group_by_volume(const SliceDataset& data);

}  // namespace mriqa

#endif  // MRIQA_SELFTRAIN_HPP_
