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
#include "mriqa/selftrain.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace mriqa {

void SelfTrainConfig::validate() const {
  if (p_slice <= 0.0 || p_slice >= 1.0 || p_volume <= 0.0 || p_volume >= 1.0) {
    throw ConfigError("self-train thresholds must lie in (0,1)");
  }
  if (slice_iterations < 0 || volume_iterations < 0) {
    throw ConfigError("iteration counts must be >= 0 (0 = adaptive)");
  }
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (min_improvement < 0.0) throw ConfigError("min_improvement must be >= 0");
}

SelectionResult select_slices(const std::vector<QualityLabel>& previous,
                              const std::vector<SlicePrediction>& current, double threshold) {
  if (previous.size() != current.size()) {
    throw InvalidInputError("select_slices: label/prediction count mismatch");
  }
  if (threshold <= 0.0 || threshold >= 1.0) {
    throw InvalidInputError("select_slices: threshold must lie in (0,1)");
  }
  SelectionResult result;
  for (std::size_t i = 0; i < current.size(); ++i) {
    const bool stable = current[i].label == previous[i];
    const bool confident = current[i].max_probability() >= threshold;
    if (stable && confident) {
      result.kept.push_back(static_cast<int>(i));
      result.kept_labels.push_back(current[i].label);
      if (current[i].label != previous[i]) ++result.relabeled;
    } else {
      result.pruned.push_back(static_cast<int>(i));
    }
  }
  return result;
}

QualityLabel init_volume_labels(const std::array<std::int64_t, kNumClasses>& slice_counts,
                                bool fail_rule_conjunctive) {
  const std::int64_t pass = slice_counts[0];
  const std::int64_t ques = slice_counts[1];
  const std::int64_t fail = slice_counts[2];
  const std::int64_t total = pass + ques + fail;
  if (total <= 0) throw InvalidInputError("init_volume_labels: empty volume");
  if (static_cast<double>(pass) > 0.80 * static_cast<double>(total)) {
    return QualityLabel::Pass;
  }
  const bool fail_majority = fail_rule_conjunctive ? (fail > pass && fail > ques)
                                                   : (fail > pass || fail > ques);
  if (fail_majority) return QualityLabel::Fail;
  return QualityLabel::Questionable;
}

QualityLabel init_volume_labels(const std::vector<QualityLabel>& slice_labels,
                                bool fail_rule_conjunctive) {
  std::array<std::int64_t, kNumClasses> counts{};
  for (QualityLabel l : slice_labels) ++counts[static_cast<std::size_t>(static_cast<int>(l))];
  return init_volume_labels(counts, fail_rule_conjunctive);
}

std::vector<SlicePrediction> pseudo_label_slices(NRNet32& net, SliceDataset& unlabeled) {
  const std::vector<SlicePrediction> preds = predict_slices(net, unlabeled, {});
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    unlabeled[i].label = preds[i].label;
    unlabeled[i].pseudo_labeled = true;
  }
  return preds;
}

std::string to_keyvalue(const IterationRecord& r) {
  std::ostringstream os;
  os << "iteration=" << r.iteration << " kept=" << r.kept << " relabeled=" << r.relabeled
     << " pruned=" << r.pruned << " val_accuracy=" << std::fixed << std::setprecision(4)
     << r.val_accuracy;
  return os.str();
}

std::vector<std::pair<std::string, std::vector<int>>> group_by_volume(const SliceDataset& data) {
  std::vector<std::pair<std::string, std::vector<int>>> groups;
  std::map<std::string, std::size_t> pos;
  for (std::size_t i = 0; i < data.size(); ++i) {
    auto it = pos.find(data[i].volume_id);
    if (it == pos.end()) {
      pos.emplace(data[i].volume_id, groups.size());
      groups.emplace_back(data[i].volume_id, std::vector<int>{static_cast<int>(i)});
    } else {
      groups[it->second].second.push_back(static_cast<int>(i));
    }
  }
  for (auto& [id, indices] : groups) {
    std::sort(indices.begin(), indices.end(), [&](int a, int b) {
      return data[static_cast<std::size_t>(a)].slice_index <
             data[static_cast<std::size_t>(b)].slice_index;
    });
  }
  return groups;
}

// ---- configuration ----

std::string PipelineConfig::to_text() const {
  std::ostringstream os;
  os << train.net.to_text();
  os << "epochs=" << train.epochs << "\n";
  os << "retrain_epochs=" << retrain_epochs << "\n";
  os << "batch_size=" << train.batch_size << "\n";
  os << std::setprecision(17);
  os << "learning_rate=" << train.optimizer.learning_rate << "\n";
  os << "lr_decay=" << train.optimizer.decay << "\n";
  os << "rho=" << train.optimizer.rho << "\n";
  os << "opt_epsilon=" << train.optimizer.epsilon << "\n";
  os << "kappa=" << train.kappa << "\n";
  os << "lambda_reg=" << train.lambda_reg << "\n";
  os << "rotation_deg=" << train.augmentation.rotation_deg << "\n";
  os << "flip_prob=" << train.augmentation.flip_prob << "\n";
  os << "augment=" << (train.augment_enabled ? 1 : 0) << "\n";
  os << "validation_fraction=" << train.validation_fraction << "\n";
  os << "p_slice=" << selftrain.p_slice << "\n";
  os << "p_volume=" << selftrain.p_volume << "\n";
  os << "slice_iterations=" << selftrain.slice_iterations << "\n";
  os << "volume_iterations=" << selftrain.volume_iterations << "\n";
  os << "max_iterations=" << selftrain.max_iterations << "\n";
  os << "min_improvement=" << selftrain.min_improvement << "\n";
  os << "fail_rule=" << (selftrain.fail_rule_conjunctive ? "conjunctive" : "disjunctive") << "\n";
  os << "forest_trees=" << forest.tree_count << "\n";
  return os.str();
}

PipelineConfig PipelineConfig::from_text(const std::string& text) {
  PipelineConfig cfg;
  std::string arch_text;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "variant" || key == "input_size" || key == "stem_channels" ||
          key == "stage_channels" || key == "head_channels" || key == "kernel" ||
          key == "num_classes" || key == "nres_embed" || key == "bn_epsilon" ||
          key == "bn_momentum") {
        arch_text += line + "\n";
      } else if (key == "epochs") {
        cfg.train.epochs = std::stoi(val);
      } else if (key == "retrain_epochs") {
        cfg.retrain_epochs = std::stoi(val);
      } else if (key == "batch_size") {
        cfg.train.batch_size = std::stoi(val);
      } else if (key == "learning_rate") {
        cfg.train.optimizer.learning_rate = std::stod(val);
      } else if (key == "lr_decay") {
        cfg.train.optimizer.decay = std::stod(val);
      } else if (key == "rho") {
        cfg.train.optimizer.rho = std::stod(val);
      } else if (key == "opt_epsilon") {
        cfg.train.optimizer.epsilon = std::stod(val);
      } else if (key == "kappa") {
        cfg.train.kappa = std::stod(val);
      } else if (key == "lambda_reg") {
        cfg.train.lambda_reg = std::stod(val);
      } else if (key == "rotation_deg") {
        cfg.train.augmentation.rotation_deg = std::stod(val);
      } else if (key == "flip_prob") {
        cfg.train.augmentation.flip_prob = std::stod(val);
      } else if (key == "augment") {
        cfg.train.augment_enabled = std::stoi(val) != 0;
      } else if (key == "validation_fraction") {
        cfg.train.validation_fraction = std::stod(val);
      } else if (key == "p_slice") {
        cfg.selftrain.p_slice = std::stod(val);
      } else if (key == "p_volume") {
        cfg.selftrain.p_volume = std::stod(val);
      } else if (key == "slice_iterations") {
        cfg.selftrain.slice_iterations = std::stoi(val);
      } else if (key == "volume_iterations") {
        cfg.selftrain.volume_iterations = std::stoi(val);
      } else if (key == "max_iterations") {
        cfg.selftrain.max_iterations = std::stoi(val);
      } else if (key == "min_improvement") {
        cfg.selftrain.min_improvement = std::stod(val);
      } else if (key == "fail_rule") {
        if (val != "conjunctive" && val != "disjunctive") {
          throw ConfigError("fail_rule must be conjunctive or disjunctive");
        }
        cfg.selftrain.fail_rule_conjunctive = val == "conjunctive";
      } else if (key == "forest_trees") {
        cfg.forest.tree_count = std::stoi(val);
      } else {
        throw ConfigError("unknown configuration key '" + key + "'");
      }
    } catch (const ConfigError&) {
      throw;
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    } catch (const std::exception&) {
      throw ConfigError("bad value for configuration key '" + key + "'");
    }
  }
  if (!arch_text.empty()) {
    try {
      cfg.train.net = NRNetConfig::from_text(arch_text);
    } catch (const FormatError& e) {
      throw ConfigError(e.what());
    }
  }
  cfg.selftrain.validate();
  return cfg;
}

PipelineConfig PipelineConfig::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open configuration '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return from_text(text);
}

// ---- stage drivers ----

namespace {

double slice_val_accuracy(const Checkpoint& ck, const SliceDataset& pool,
                          const std::vector<int>& val_indices) {
  if (val_indices.empty()) return 0.0;
  NRNet32 net(ck);
  const std::vector<SlicePrediction> preds = predict_slices(net, pool, val_indices);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < val_indices.size(); ++i) {
    const auto& truth = pool[static_cast<std::size_t>(val_indices[i])].label;
    if (truth && preds[i].label == *truth) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(val_indices.size());
}

}  // namespace

SliceSelfTrainResult slice_self_train(SliceDataset& pool, const std::vector<int>& train_indices,
                                      const std::vector<int>& val_indices, const Checkpoint& init,
                                      const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.selftrain.validate();
  std::mt19937_64 master(seed);
  SliceSelfTrainResult result;
  result.checkpoint = init;
  result.kept = train_indices;

  const int configured = cfg.selftrain.slice_iterations;
  const bool adaptive = configured == 0;
  const int limit = adaptive ? cfg.selftrain.max_iterations : configured;
  double prev_val = adaptive ? slice_val_accuracy(init, pool, val_indices) : 0.0;

  for (int it = 1; it <= limit; ++it) {
    NRNet32 model(result.checkpoint);
    const std::vector<SlicePrediction> preds = predict_slices(model, pool, result.kept);
    std::vector<QualityLabel> previous;
    previous.reserve(result.kept.size());
    for (int idx : result.kept) previous.push_back(*pool[static_cast<std::size_t>(idx)].label);

    const SelectionResult sel = select_slices(previous, preds, cfg.selftrain.p_slice);
    if (sel.kept.empty()) {
      throw ProtocolError("slice self-training pruned every sample at iteration " +
                          std::to_string(it) + " (pruned " + std::to_string(sel.pruned.size()) +
                          ", threshold " + std::to_string(cfg.selftrain.p_slice) + ")");
    }
    std::vector<int> next;
    next.reserve(sel.kept.size());
    for (std::size_t k = 0; k < sel.kept.size(); ++k) {
      const int pool_idx = result.kept[static_cast<std::size_t>(sel.kept[k])];
      pool[static_cast<std::size_t>(pool_idx)].label = sel.kept_labels[k];
      next.push_back(pool_idx);
    }
    result.kept = std::move(next);

    TrainConfig tc = cfg.train;
    tc.epochs = cfg.retrain_epochs;
    const Checkpoint snapshot = result.checkpoint;
    const TrainResult tr =
        train(pool, result.kept, val_indices, tc, master(), &snapshot);
    result.checkpoint = tr.best_checkpoint;

    IterationRecord rec;
    rec.iteration = it;
    rec.kept = static_cast<std::int64_t>(result.kept.size());
    rec.relabeled = sel.relabeled;
    rec.pruned = static_cast<std::int64_t>(sel.pruned.size());
    rec.val_accuracy = tr.best_val_accuracy;
    result.trace.push_back(rec);

    if (adaptive) {
      if (rec.val_accuracy - prev_val < cfg.selftrain.min_improvement) break;
      prev_val = rec.val_accuracy;
    }
  }
  return result;
}

namespace {

FeatureMatrix take_rows(const FeatureMatrix& x, const std::vector<int>& rows) {
  FeatureMatrix out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(x[static_cast<std::size_t>(r)]);
  return out;
}

std::vector<int> take_labels(const std::vector<int>& y, const std::vector<int>& rows) {
  std::vector<int> out;
  out.reserve(rows.size());
  for (int r : rows) out.push_back(y[static_cast<std::size_t>(r)]);
  return out;
}

double forest_accuracy(const Forest& forest, const FeatureMatrix& x, const std::vector<int>& y,
                       const std::vector<int>& rows) {
  if (rows.empty()) return 0.0;
  std::size_t correct = 0;
  for (int r : rows) {
    if (static_cast<int>(predict_volume(forest, x[static_cast<std::size_t>(r)]).label) ==
        y[static_cast<std::size_t>(r)]) {
      ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace

VolumeSelfTrainResult volume_self_train(const FeatureMatrix& features,
                                        const std::vector<int>& initial_labels,
                                        const SelfTrainConfig& st_cfg, const ForestConfig& f_cfg,
                                        std::uint64_t seed) {
  st_cfg.validate();
  if (features.size() != initial_labels.size() || features.empty()) {
    throw InvalidInputError("volume_self_train: feature/label size mismatch");
  }
  std::mt19937_64 master(seed);

  VolumeSelfTrainResult result;
  result.final_labels = initial_labels;

  std::vector<int> all(features.size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  std::mt19937_64 split_rng(master());
  const SplitIndices split = stratified_split(all, result.final_labels, 0.1, split_rng);
  result.kept = split.train;

  result.forest = fit_forest(take_rows(features, result.kept),
                             take_labels(result.final_labels, result.kept), f_cfg, master());

  const int configured = st_cfg.volume_iterations;
  const bool adaptive = configured == 0;
  const int limit = adaptive ? st_cfg.max_iterations : configured;
  double prev_val = forest_accuracy(result.forest, features, result.final_labels,
                                    split.validation);

  for (int it = 1; it <= limit; ++it) {
    std::vector<QualityLabel> previous;
    std::vector<SlicePrediction> preds;
    previous.reserve(result.kept.size());
    preds.reserve(result.kept.size());
    for (int v : result.kept) {
      previous.push_back(
          static_cast<QualityLabel>(result.final_labels[static_cast<std::size_t>(v)]));
      preds.push_back(predict_volume(result.forest, features[static_cast<std::size_t>(v)]));
    }
    const SelectionResult sel = select_slices(previous, preds, st_cfg.p_volume);
    if (sel.kept.empty()) {
      throw ProtocolError("volume self-training pruned every volume at iteration " +
                          std::to_string(it) + " (pruned " + std::to_string(sel.pruned.size()) +
                          ", threshold " + std::to_string(st_cfg.p_volume) + ")");
    }
    std::vector<int> next;
    next.reserve(sel.kept.size());
    for (std::size_t k = 0; k < sel.kept.size(); ++k) {
      const int v = result.kept[static_cast<std::size_t>(sel.kept[k])];
      result.final_labels[static_cast<std::size_t>(v)] =
          static_cast<int>(sel.kept_labels[k]);
      next.push_back(v);
    }
    result.kept = std::move(next);

    result.forest = fit_forest(take_rows(features, result.kept),
                               take_labels(result.final_labels, result.kept), f_cfg, master());

    IterationRecord rec;
    rec.iteration = it;
    rec.kept = static_cast<std::int64_t>(result.kept.size());
    rec.relabeled = sel.relabeled;
    rec.pruned = static_cast<std::int64_t>(sel.pruned.size());
    rec.val_accuracy = forest_accuracy(result.forest, features, result.final_labels,
                                       split.validation);
    result.trace.push_back(rec);

    if (adaptive) {
      if (rec.val_accuracy - prev_val < st_cfg.min_improvement) break;
      prev_val = rec.val_accuracy;
    }
  }
  return result;
}

PipelineResult selftrain_pipeline(SliceDataset labeled, SliceDataset unlabeled,
                                  const PipelineConfig& cfg, std::uint64_t seed) {
  cfg.selftrain.validate();
  for (const auto& ts : labeled) {
    if (!ts.label) throw InvalidInputError("selftrain: labeled pool contains unlabeled slices");
  }
  std::mt19937_64 master(seed);
  std::ostringstream trace;
  PipelineResult result;

  // Observed volume labels, before any relabeling.
  std::map<std::string, QualityLabel> observed_volume_label;
  for (const auto& [vid, indices] : group_by_volume(labeled)) {
    std::vector<QualityLabel> labels;
    labels.reserve(indices.size());
    for (int i : indices) labels.push_back(*labeled[static_cast<std::size_t>(i)].label);
    observed_volume_label.emplace(vid,
                                  init_volume_labels(labels, cfg.selftrain.fail_rule_conjunctive));
  }

  // 1. supervised pre-training on the labeled pool
  {
    std::vector<int> indices(labeled.size());
    std::vector<int> labels(labeled.size());
    for (std::size_t i = 0; i < labeled.size(); ++i) {
      indices[i] = static_cast<int>(i);
      labels[i] = static_cast<int>(*labeled[i].label);
    }
    std::mt19937_64 split_rng(master());
    const SplitIndices split =
        stratified_split(indices, labels, cfg.train.validation_fraction, split_rng);
    const TrainResult pre = train(labeled, split.train, split.validation, cfg.train, master());
    result.pretrain_checkpoint = pre.best_checkpoint;
    trace << "stage=pretrain epochs=" << cfg.train.epochs << " val_accuracy=" << std::fixed
          << std::setprecision(4) << pre.best_val_accuracy << "\n";
  }

  // 2. pseudo-label the unlabeled pool and merge
  {
    NRNet32 net(result.pretrain_checkpoint);
    pseudo_label_slices(net, unlabeled);
    result.pseudo_labeled_count = static_cast<std::int64_t>(unlabeled.size());
    trace << "stage=pseudo_label count=" << result.pseudo_labeled_count << "\n";
  }
  SliceDataset pool = std::move(labeled);
  pool.insert(pool.end(), std::make_move_iterator(unlabeled.begin()),
              std::make_move_iterator(unlabeled.end()));

  // 3. retrain on the merged pool, with a validation split fixed for the
  // rest of the slice phase
  std::vector<int> merged_train, merged_val;
  {
    std::vector<int> indices(pool.size());
    std::vector<int> labels(pool.size());
    for (std::size_t i = 0; i < pool.size(); ++i) {
      indices[i] = static_cast<int>(i);
      labels[i] = static_cast<int>(*pool[i].label);
    }
    std::mt19937_64 split_rng(master());
    const SplitIndices split =
        stratified_split(indices, labels, cfg.train.validation_fraction, split_rng);
    merged_train = split.train;
    merged_val = split.validation;
    TrainConfig tc = cfg.train;
    tc.epochs = cfg.retrain_epochs;
    const TrainResult merged =
        train(pool, merged_train, merged_val, tc, master(), &result.pretrain_checkpoint);
    result.checkpoint = merged.best_checkpoint;
    trace << "stage=merged_retrain train=" << merged_train.size()
          << " val=" << merged_val.size() << " val_accuracy=" << std::fixed
          << std::setprecision(4) << merged.best_val_accuracy << "\n";
  }

  // 4. slice self-training
  {
    SliceSelfTrainResult st =
        slice_self_train(pool, merged_train, merged_val, result.checkpoint, cfg, master());
    result.checkpoint = st.checkpoint;
    result.slice_trace = std::move(st.trace);
    for (const auto& rec : result.slice_trace) {
      trace << "stage=slice_selftrain " << to_keyvalue(rec) << "\n";
    }
  }

  // 5. volume features and initial volume labels
  {
    NRNet32 net(result.checkpoint);
    const std::vector<SlicePrediction> preds = predict_slices(net, pool, {});
    for (const auto& [vid, indices] : group_by_volume(pool)) {
      std::vector<SlicePrediction> volume_preds;
      volume_preds.reserve(indices.size());
      for (int i : indices) volume_preds.push_back(preds[static_cast<std::size_t>(i)]);
      const VolumeFeatures f = volume_features(volume_preds);
      result.volume_ids.push_back(vid);
      result.volume_features_matrix.push_back(
          std::vector<double>(f.values.begin(), f.values.end()));
      const auto it = observed_volume_label.find(vid);
      QualityLabel initial;
      if (it != observed_volume_label.end()) {
        initial = it->second;
      } else {
        std::vector<QualityLabel> predicted_labels;
        predicted_labels.reserve(indices.size());
        for (int i : indices) {
          predicted_labels.push_back(preds[static_cast<std::size_t>(i)].label);
        }
        initial = init_volume_labels(predicted_labels, cfg.selftrain.fail_rule_conjunctive);
      }
      result.volume_initial_labels.push_back(static_cast<int>(initial));
    }
    trace << "stage=volume_init volumes=" << result.volume_ids.size() << "\n";
  }

  // 6. volume self-training
  {
    VolumeSelfTrainResult vt =
        volume_self_train(result.volume_features_matrix, result.volume_initial_labels,
                          cfg.selftrain, cfg.forest, master());
    result.forest = std::move(vt.forest);
    result.volume_trace = std::move(vt.trace);
    for (const auto& rec : result.volume_trace) {
      trace << "stage=volume_selftrain " << to_keyvalue(rec) << "\n";
    }
  }

  result.trace_text = trace.str();
  return result;
}

}  // namespace mriqa
