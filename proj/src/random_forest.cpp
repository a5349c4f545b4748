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
#include "mriqa/random_forest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

namespace mriqa {

VolumeFeatures volume_features(const std::vector<SlicePrediction>& slice_predictions) {
  if (slice_predictions.empty()) {
    throw InvalidInputError("volume_features: volume has no slice predictions");
  }
  const double n = static_cast<double>(slice_predictions.size());
  VolumeFeatures f;
  std::array<double, kNumClasses> frac{}, mean{}, mn{}, mx{};
  mn.fill(1.0);
  mx.fill(0.0);
  int fail_runs = 0;
  bool in_fail_run = false;
  for (const auto& pred : slice_predictions) {
    ++frac[static_cast<std::size_t>(static_cast<int>(pred.label))];
    for (int k = 0; k < kNumClasses; ++k) {
      const double p = pred.probabilities[static_cast<std::size_t>(k)];
      mean[static_cast<std::size_t>(k)] += p;
      mn[static_cast<std::size_t>(k)] = std::min(mn[static_cast<std::size_t>(k)], p);
      mx[static_cast<std::size_t>(k)] = std::max(mx[static_cast<std::size_t>(k)], p);
    }
    const bool is_fail = pred.label == QualityLabel::Fail;
    if (is_fail && !in_fail_run) ++fail_runs;
    in_fail_run = is_fail;
  }
  for (int k = 0; k < kNumClasses; ++k) {
    f.values[static_cast<std::size_t>(k)] = frac[static_cast<std::size_t>(k)] / n;
    f.values[static_cast<std::size_t>(3 + 3 * k)] = mean[static_cast<std::size_t>(k)] / n;
    f.values[static_cast<std::size_t>(4 + 3 * k)] = mn[static_cast<std::size_t>(k)];
    f.values[static_cast<std::size_t>(5 + 3 * k)] = mx[static_cast<std::size_t>(k)];
  }
  f.values[12] = static_cast<double>(fail_runs) / n;
  return f;
}

double entropy(const std::array<std::int64_t, kNumClasses>& counts,
               const std::array<double, kNumClasses>& weights) {
  double total = 0.0;
  std::array<double, kNumClasses> mass{};
  for (int t = 0; t < kNumClasses; ++t) {
    if (counts[static_cast<std::size_t>(t)] < 0) {
      throw InvalidInputError("entropy: negative count");
    }
    if (weights[static_cast<std::size_t>(t)] <= 0.0) {
      throw InvalidInputError("entropy: class weights must be positive");
    }
    mass[static_cast<std::size_t>(t)] = weights[static_cast<std::size_t>(t)] *
                                        static_cast<double>(counts[static_cast<std::size_t>(t)]);
    total += mass[static_cast<std::size_t>(t)];
  }
  if (total <= 0.0) return 0.0;
  double h = 0.0;
  for (double m : mass) {
    if (m > 0.0) {
      const double q = m / total;
      h -= q * std::log2(q);
    }
  }
  return h;
}

namespace {

double weighted_mass(const std::array<std::int64_t, kNumClasses>& counts,
                     const std::array<double, kNumClasses>& weights) {
  double total = 0.0;
  for (int t = 0; t < kNumClasses; ++t) {
    total += weights[static_cast<std::size_t>(t)] *
             static_cast<double>(counts[static_cast<std::size_t>(t)]);
  }
  return total;
}

}  // namespace

std::optional<SplitCandidate> best_split(const FeatureMatrix& x, const std::vector<int>& y,
                                         const std::vector<int>& sample_indices,
                                         const std::vector<int>& feature_subset,
                                         const std::array<double, kNumClasses>& class_weights) {
  if (sample_indices.size() < 2) return std::nullopt;
  std::array<std::int64_t, kNumClasses> parent_counts{};
  for (int idx : sample_indices) {
    ++parent_counts[static_cast<std::size_t>(y[static_cast<std::size_t>(idx)])];
  }
  const double parent_entropy = entropy(parent_counts, class_weights);
  if (parent_entropy == 0.0) return std::nullopt;  // pure node
  const double parent_mass = weighted_mass(parent_counts, class_weights);

  std::optional<SplitCandidate> best;
  std::vector<std::pair<double, int>> ordered;  // (value, label)
  for (int feature : feature_subset) {
    ordered.clear();
    for (int idx : sample_indices) {
      ordered.emplace_back(x[static_cast<std::size_t>(idx)][static_cast<std::size_t>(feature)],
                           y[static_cast<std::size_t>(idx)]);
    }
    std::sort(ordered.begin(), ordered.end());
    std::array<std::int64_t, kNumClasses> left_counts{};
    auto right_counts = parent_counts;
    for (std::size_t i = 0; i + 1 < ordered.size(); ++i) {
      ++left_counts[static_cast<std::size_t>(ordered[i].second)];
      --right_counts[static_cast<std::size_t>(ordered[i].second)];
      if (ordered[i].first == ordered[i + 1].first) continue;
      const double threshold = 0.5 * (ordered[i].first + ordered[i + 1].first);
      const double left_mass = weighted_mass(left_counts, class_weights);
      const double gain = parent_entropy -
                          (left_mass * entropy(left_counts, class_weights) +
                           (parent_mass - left_mass) * entropy(right_counts, class_weights)) /
                              parent_mass;
      if (gain > 0.0 && (!best || gain > best->gain)) {
        best = SplitCandidate{feature, threshold, gain};
      }
    }
  }
  return best;
}

const std::array<double, kNumClasses>& DecisionTree::predict(
    const std::vector<double>& features) const {
  if (nodes.empty()) throw InvalidInputError("decision tree is empty");
  int node = 0;
  while (nodes[static_cast<std::size_t>(node)].feature >= 0) {
    const TreeNode& n = nodes[static_cast<std::size_t>(node)];
    if (n.feature >= static_cast<int>(features.size())) {
      throw ShapeError("decision tree expects more features than provided");
    }
    node = features[static_cast<std::size_t>(n.feature)] < n.threshold ? n.left : n.right;
  }
  return nodes[static_cast<std::size_t>(node)].distribution;
}

namespace {

std::array<double, kNumClasses> leaf_distribution(
    const std::vector<int>& y, const std::vector<int>& indices,
    const std::array<double, kNumClasses>& class_weights) {
  std::array<double, kNumClasses> mass{};
  double total = 0.0;
  for (int idx : indices) {
    const int t = y[static_cast<std::size_t>(idx)];
    mass[static_cast<std::size_t>(t)] += class_weights[static_cast<std::size_t>(t)];
    total += class_weights[static_cast<std::size_t>(t)];
  }
  for (auto& m : mass) m /= total;
  return mass;
}

struct TreeBuilder {
  const FeatureMatrix& x;
  const std::vector<int>& y;
  const ForestConfig& config;
  const std::array<double, kNumClasses>& class_weights;
  std::mt19937_64& rng;
  DecisionTree tree;

  // Draws sqrt(F) candidate features; when they admit no valid split the
  // search widens over the remaining features, so subsampling alone never
  // forces a leaf.
  std::optional<SplitCandidate> find_split(const std::vector<int>& indices) {
    const int total = static_cast<int>(x[0].size());
    std::vector<int> order(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
    if (!config.feature_subsample) {
      return best_split(x, y, indices, order, class_weights);
    }
    std::shuffle(order.begin(), order.end(), rng);
    int k = std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(total)))));
    while (true) {
      std::vector<int> subset(order.begin(), order.begin() + k);
      std::sort(subset.begin(), subset.end());
      const auto split = best_split(x, y, indices, subset, class_weights);
      if (split || k == total) return split;
      k = std::min(total, k + 1);
    }
  }

  int build(const std::vector<int>& indices, int depth) {
    const int node_id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    const bool depth_capped = config.max_depth > 0 && depth >= config.max_depth;
    std::optional<SplitCandidate> split;
    if (!depth_capped) {
      split = find_split(indices);
    }
    if (!split) {
      tree.nodes[static_cast<std::size_t>(node_id)].distribution =
          leaf_distribution(y, indices, class_weights);
      return node_id;
    }
    std::vector<int> left, right;
    for (int idx : indices) {
      const double v =
          x[static_cast<std::size_t>(idx)][static_cast<std::size_t>(split->feature)];
      (v < split->threshold ? left : right).push_back(idx);
    }
    tree.nodes[static_cast<std::size_t>(node_id)].feature = split->feature;
    tree.nodes[static_cast<std::size_t>(node_id)].threshold = split->threshold;
    const int left_id = build(left, depth + 1);
    const int right_id = build(right, depth + 1);
    tree.nodes[static_cast<std::size_t>(node_id)].left = left_id;
    tree.nodes[static_cast<std::size_t>(node_id)].right = right_id;
    return node_id;
  }
};

}  // namespace

Forest fit_forest(const FeatureMatrix& x, const std::vector<int>& y, const ForestConfig& config,
                  std::uint64_t seed) {
  if (x.empty() || x.size() != y.size()) {
    throw InvalidInputError("fit_forest: feature/label size mismatch");
  }
  if (config.tree_count < 1) throw InvalidInputError("fit_forest: need at least one tree");
  std::array<std::int64_t, kNumClasses> counts{};
  for (int label : y) {
    if (label < 0 || label >= kNumClasses) {
      throw InvalidInputError("fit_forest: label out of range");
    }
    ++counts[static_cast<std::size_t>(label)];
  }
  const int present = static_cast<int>(std::count_if(counts.begin(), counts.end(),
                                                     [](std::int64_t n) { return n > 0; }));
  if (present < 2) throw DegenerateClassError("fit_forest: need at least two classes");

  Forest forest;
  forest.config = config;
  if (config.balanced_weights) {
    const std::int64_t mx = *std::max_element(counts.begin(), counts.end());
    for (int t = 0; t < kNumClasses; ++t) {
      forest.class_weights[static_cast<std::size_t>(t)] =
          counts[static_cast<std::size_t>(t)] > 0
              ? static_cast<double>(mx) / static_cast<double>(counts[static_cast<std::size_t>(t)])
              : 1.0;
    }
  }

  std::mt19937_64 master(seed);
  const int n = static_cast<int>(x.size());
  for (int t = 0; t < config.tree_count; ++t) {
    std::mt19937_64 tree_rng(master());
    std::vector<int> indices;
    indices.reserve(static_cast<std::size_t>(n));
    if (config.bootstrap) {
      std::uniform_int_distribution<int> pick(0, n - 1);
      for (int i = 0; i < n; ++i) indices.push_back(pick(tree_rng));
    } else {
      for (int i = 0; i < n; ++i) indices.push_back(i);
    }
    TreeBuilder builder{x, y, config, forest.class_weights, tree_rng, {}};
    builder.build(indices, 0);
    forest.trees.push_back(std::move(builder.tree));
  }
  return forest;
}

SlicePrediction predict_volume(const Forest& forest, const std::vector<double>& features) {
  if (forest.trees.empty()) throw InvalidInputError("predict_volume: empty forest");
  std::array<double, kNumClasses> mean{};
  for (const auto& tree : forest.trees) {
    const auto& dist = tree.predict(features);
    for (int t = 0; t < kNumClasses; ++t) {
      mean[static_cast<std::size_t>(t)] += dist[static_cast<std::size_t>(t)];
    }
  }
  double sum = 0.0;
  for (auto& m : mean) {
    m /= static_cast<double>(forest.trees.size());
    sum += m;
  }
  for (auto& m : mean) m /= sum;
  return SlicePrediction::from_probabilities(mean);
}

namespace {

void write_node(std::ostream& os, const DecisionTree& tree, int node_id) {
  const TreeNode& n = tree.nodes[static_cast<std::size_t>(node_id)];
  if (n.feature >= 0) {
    os << "split " << n.feature << " ";
    os.precision(17);
    os << n.threshold << "\n";
    write_node(os, tree, n.left);
    write_node(os, tree, n.right);
  } else {
    os << "leaf";
    os.precision(17);
    for (double p : n.distribution) os << " " << p;
    os << "\n";
  }
}

int read_node(std::istream& is, DecisionTree& tree) {
  std::string line;
  if (!std::getline(is, line)) throw FormatError("forest: truncated tree");
  std::istringstream ls(line);
  std::string kind;
  ls >> kind;
  const int node_id = static_cast<int>(tree.nodes.size());
  tree.nodes.emplace_back();
  if (kind == "split") {
    TreeNode n;
    if (!(ls >> n.feature >> n.threshold)) throw FormatError("forest: malformed split node");
    const int left = read_node(is, tree);
    const int right = read_node(is, tree);
    n.left = left;
    n.right = right;
    tree.nodes[static_cast<std::size_t>(node_id)] = n;
  } else if (kind == "leaf") {
    TreeNode n;
    for (auto& p : n.distribution) {
      if (!(ls >> p)) throw FormatError("forest: malformed leaf node");
    }
    tree.nodes[static_cast<std::size_t>(node_id)] = n;
  } else {
    throw FormatError("forest: unknown node kind '" + kind + "'");
  }
  return node_id;
}

}  // namespace

std::string Forest::serialize() const {
  std::ostringstream os;
  os << "mriqa-forest v1\n";
  os << "trees=" << trees.size() << "\n";
  os.precision(17);
  os << "class_weights=" << class_weights[0] << "," << class_weights[1] << ","
     << class_weights[2] << "\n";
  for (std::size_t i = 0; i < trees.size(); ++i) {
    os << "tree " << i << "\n";
    write_node(os, trees[i], 0);
  }
  return os.str();
}

Forest Forest::deserialize(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  if (!std::getline(is, line) || line != "mriqa-forest v1") {
    throw FormatError("forest: bad header");
  }
  Forest forest;
  std::size_t tree_count = 0;
  if (!std::getline(is, line) || line.rfind("trees=", 0) != 0) {
    throw FormatError("forest: missing tree count");
  }
  tree_count = static_cast<std::size_t>(std::stoull(line.substr(6)));
  if (!std::getline(is, line) || line.rfind("class_weights=", 0) != 0) {
    throw FormatError("forest: missing class weights");
  }
  {
    std::istringstream ws(line.substr(14));
    std::string item;
    for (auto& w : forest.class_weights) {
      if (!std::getline(ws, item, ',')) throw FormatError("forest: malformed class weights");
      w = std::stod(item);
    }
  }
  forest.config.tree_count = static_cast<int>(tree_count);
  for (std::size_t i = 0; i < tree_count; ++i) {
    if (!std::getline(is, line) || line.rfind("tree ", 0) != 0) {
      throw FormatError("forest: missing tree header");
    }
    DecisionTree tree;
    read_node(is, tree);
    forest.trees.push_back(std::move(tree));
  }
  return forest;
}

void Forest::save(const std::string& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FormatError("cannot write forest '" + path + "'");
  os << serialize();
  if (!os) throw FormatError("write failed for forest '" + path + "'");
}

Forest Forest::load(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw FormatError("cannot open forest '" + path + "'");
  std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return deserialize(text);
}

}  // namespace mriqa
