#include <random>

#include "doctest.h"
#include "mriqa/selftrain.hpp"

using namespace mriqa;

namespace {

SlicePrediction pred_for(QualityLabel label, double confidence) {
  std::array<double, 3> p{};
  const double rest = (1.0 - confidence) / 2.0;
  for (int i = 0; i < 3; ++i) p[static_cast<std::size_t>(i)] = rest;
  p[static_cast<std::size_t>(static_cast<int>(label))] = confidence;
  return SlicePrediction::from_probabilities(p);
}

// Three-class dataset separable by mean intensity, grouped into volumes.
SliceDataset volume_dataset(int volumes_per_class, int slices, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.06, 0.06);
  const double level[3] = {0.15, 0.5, 0.85};
  SliceDataset data;
  int serial = 0;
  for (int cls = 0; cls < 3; ++cls) {
    for (int v = 0; v < volumes_per_class; ++v) {
      const std::string vid = "v" + std::to_string(serial++);
      for (int i = 0; i < slices; ++i) {
        TrainSlice ts;
        ts.volume_id = vid;
        ts.slice_index = i;
        ts.size = size;
        ts.pixels.resize(static_cast<std::size_t>(size) * size);
        for (auto& px : ts.pixels) {
          const double val = std::clamp(level[cls] + jitter(rng), 0.0, 1.0);
          px = static_cast<std::uint16_t>(std::lround(val * 65535.0));
        }
        ts.label = static_cast<QualityLabel>(cls);
        data.push_back(std::move(ts));
      }
    }
  }
  return data;
}

PipelineConfig micro_config() {
  PipelineConfig cfg;
  cfg.train.net.variant = Variant::DSResNRes;
  cfg.train.net.input_size = 16;
  cfg.train.net.stem_channels = 4;
  cfg.train.net.stage_channels = {6, 8};
  cfg.train.net.head_channels = 16;
  cfg.train.epochs = 10;
  cfg.retrain_epochs = 2;
  cfg.train.batch_size = 8;
  cfg.train.optimizer.learning_rate = 3e-3;
  cfg.train.augment_enabled = false;
  // micro-scale nets reach modest confidence; the protocol itself is
  // threshold-agnostic
  cfg.selftrain.p_slice = 0.45;
  cfg.selftrain.p_volume = 0.45;
  cfg.forest.tree_count = 7;
  return cfg;
}

}  // namespace

TEST_SUITE_BEGIN("selftrain");

TEST_CASE("selection keeps stable, confident predictions") {
  const std::vector<QualityLabel> prev = {QualityLabel::Pass, QualityLabel::Pass,
                                          QualityLabel::Fail};
  const std::vector<SlicePrediction> cur = {
      pred_for(QualityLabel::Pass, 0.9),   // stable and confident -> kept
      pred_for(QualityLabel::Fail, 0.95),  // label flip -> pruned
      pred_for(QualityLabel::Fail, 0.6),   // low confidence -> pruned
  };
  const SelectionResult sel = select_slices(prev, cur, 0.8);
  REQUIRE(sel.kept.size() == 1);
  CHECK(sel.kept[0] == 0);
  CHECK(sel.kept_labels[0] == QualityLabel::Pass);
  CHECK(sel.pruned == std::vector<int>{1, 2});
  CHECK(sel.relabeled == 0);
}

TEST_CASE("a prediction exactly at the threshold is kept") {
  const SelectionResult sel =
      select_slices({QualityLabel::Fail}, {pred_for(QualityLabel::Fail, 0.8)}, 0.8);
  CHECK(sel.kept.size() == 1);
}

TEST_CASE("selection partitions its input") {
  std::mt19937_64 rng(501);
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_real_distribution<double> conf(0.34, 0.99);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 40;
    std::vector<QualityLabel> prev;
    std::vector<SlicePrediction> cur;
    for (int i = 0; i < n; ++i) {
      prev.push_back(static_cast<QualityLabel>(cls(rng)));
      cur.push_back(pred_for(static_cast<QualityLabel>(cls(rng)), conf(rng)));
    }
    const SelectionResult sel = select_slices(prev, cur, 0.8);
    CHECK(sel.kept.size() + sel.pruned.size() == static_cast<std::size_t>(n));
    std::vector<int> merged = sel.kept;
    merged.insert(merged.end(), sel.pruned.begin(), sel.pruned.end());
    std::sort(merged.begin(), merged.end());
    for (int i = 0; i < n; ++i) CHECK(merged[static_cast<std::size_t>(i)] == i);
  }
}

TEST_CASE("raising the threshold never grows the kept set") {
  std::mt19937_64 rng(502);
  std::uniform_int_distribution<int> cls(0, 2);
  std::uniform_real_distribution<double> conf(0.34, 0.99);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 60;
    std::vector<QualityLabel> prev;
    std::vector<SlicePrediction> cur;
    for (int i = 0; i < n; ++i) {
      prev.push_back(static_cast<QualityLabel>(cls(rng)));
      cur.push_back(pred_for(static_cast<QualityLabel>(cls(rng)), conf(rng)));
    }
    std::size_t prev_kept = n + 1;
    for (double p : {0.5, 0.6, 0.7, 0.8, 0.9, 0.99}) {
      const std::size_t kept = select_slices(prev, cur, p).kept.size();
      CHECK(kept <= prev_kept);
      prev_kept = kept;
    }
  }
}

TEST_CASE("volume rule 1: more than 80 percent pass slices") {
  CHECK(init_volume_labels({49, 6, 5}) == QualityLabel::Pass);  // 49/60 = 81.7%
  // exactly 80% is not "more than 80 percent"
  CHECK(init_volume_labels({48, 12, 0}) == QualityLabel::Questionable);
}

TEST_CASE("volume rule 2: fail outnumbers the other classes") {
  CHECK(init_volume_labels({10, 20, 30}) == QualityLabel::Fail);
}

TEST_CASE("volume rule 3: questionable otherwise") {
  CHECK(init_volume_labels({30, 25, 5}) == QualityLabel::Questionable);
}

TEST_CASE("conjunctive and disjunctive fail readings differ where expected") {
  // fail > pass but fail <= ques
  CHECK(init_volume_labels({10, 30, 20}, true) == QualityLabel::Questionable);
  CHECK(init_volume_labels({10, 30, 20}, false) == QualityLabel::Fail);
}

TEST_CASE("init_volume_labels is total over non-empty multisets") {
  std::mt19937_64 rng(503);
  std::uniform_int_distribution<int> count(0, 80);
  for (int trial = 0; trial < 500; ++trial) {
    std::array<std::int64_t, 3> counts{count(rng), count(rng), count(rng)};
    if (counts[0] + counts[1] + counts[2] == 0) counts[1] = 1;
    const QualityLabel l = init_volume_labels(counts);
    CHECK((l == QualityLabel::Pass || l == QualityLabel::Questionable ||
           l == QualityLabel::Fail));
  }
  CHECK_THROWS_AS(init_volume_labels(std::array<std::int64_t, 3>{0, 0, 0}), InvalidInputError);
}

TEST_CASE("pseudo-labeling assigns the argmax and marks provenance") {
  SliceDataset labeled = volume_dataset(1, 4, 16, 601);
  SliceDataset unlabeled = volume_dataset(2, 4, 16, 602);
  for (auto& ts : unlabeled) {
    ts.volume_id = "u" + ts.volume_id;
    ts.label.reset();
  }
  NRNet32 net(micro_config().train.net, 5);
  const auto preds = pseudo_label_slices(net, unlabeled);
  REQUIRE(preds.size() == unlabeled.size());
  for (std::size_t i = 0; i < unlabeled.size(); ++i) {
    REQUIRE(unlabeled[i].label.has_value());
    CHECK(*unlabeled[i].label == preds[i].label);
    CHECK(unlabeled[i].pseudo_labeled);
  }
  // merge is a set union with provenance preserved
  const std::size_t labeled_count = labeled.size();
  labeled.insert(labeled.end(), unlabeled.begin(), unlabeled.end());
  CHECK(labeled.size() == labeled_count + unlabeled.size());
  std::size_t pseudo = 0;
  for (const auto& ts : labeled) {
    if (ts.pseudo_labeled) ++pseudo;
  }
  CHECK(pseudo == unlabeled.size());
}

TEST_CASE("pipeline configs round-trip and reject unknown keys") {
  PipelineConfig cfg = micro_config();
  cfg.selftrain.p_slice = 0.7;
  cfg.selftrain.slice_iterations = 3;
  cfg.forest.tree_count = 31;
  const PipelineConfig back = PipelineConfig::from_text(cfg.to_text());
  CHECK(back.selftrain.p_slice == cfg.selftrain.p_slice);
  CHECK(back.selftrain.slice_iterations == 3);
  CHECK(back.forest.tree_count == 31);
  CHECK(back.train.net.input_size == 16);
  CHECK(back.train.optimizer.learning_rate == cfg.train.optimizer.learning_rate);
  CHECK_THROWS_AS(PipelineConfig::from_text("bogus_key=1\n"), ConfigError);
  CHECK_THROWS_AS(PipelineConfig::from_text("p_slice=1.5\n"), ConfigError);
}

TEST_CASE("slice self-training runs exactly the configured two iterations") {
  SliceDataset pool = volume_dataset(2, 6, 16, 603);
  std::vector<int> train_idx, val_idx;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    (i % 6 == 5 ? val_idx : train_idx).push_back(static_cast<int>(i));
  }
  PipelineConfig cfg = micro_config();
  TrainConfig tc = cfg.train;
  const TrainResult pre = train(pool, train_idx, val_idx, tc, 11);

  const SliceSelfTrainResult st =
      slice_self_train(pool, train_idx, val_idx, pre.best_checkpoint, cfg, 12);
  CHECK(st.trace.size() == 2);  // default: repeated twice
  CHECK(st.trace[0].iteration == 1);
  CHECK(st.trace[1].iteration == 2);
  // pruning only removes: kept counts never grow
  CHECK(st.trace[0].kept >= st.trace[1].kept);
  CHECK(st.trace[0].kept + st.trace[0].pruned == static_cast<std::int64_t>(train_idx.size()));
}

TEST_CASE("an over-strict threshold prunes everything and fails the protocol") {
  SliceDataset pool = volume_dataset(1, 6, 16, 604);
  std::vector<int> train_idx(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) train_idx[i] = static_cast<int>(i);
  PipelineConfig cfg = micro_config();
  cfg.selftrain.p_slice = 0.999;
  NRNet32 net(cfg.train.net, 3);
  std::fill(net.classifier().w.value.data.begin(), net.classifier().w.value.data.end(), 0.0f);
  const Checkpoint uniform = net.to_checkpoint();  // every probability = 1/3
  CHECK_THROWS_AS(slice_self_train(pool, train_idx, {}, uniform, cfg, 13), ProtocolError);
}

TEST_CASE("volume self-training runs two iterations and keeps the set shrinking") {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> jitter(-0.05, 0.05);
  FeatureMatrix features;
  std::vector<int> labels;
  for (int cls = 0; cls < 3; ++cls) {
    for (int v = 0; v < 20; ++v) {
      std::vector<double> f(3, 0.1);
      f[static_cast<std::size_t>(cls)] = std::clamp(0.8 + jitter(rng), 0.0, 1.0);
      features.push_back(f);
      labels.push_back(cls);
    }
  }
  SelfTrainConfig st;
  ForestConfig fc;
  fc.tree_count = 15;
  const VolumeSelfTrainResult r = volume_self_train(features, labels, st, fc, 21);
  CHECK(r.trace.size() == 2);
  CHECK(r.trace[0].kept >= r.trace[1].kept);
  CHECK(r.trace[0].val_accuracy == doctest::Approx(1.0));

  const VolumeSelfTrainResult again = volume_self_train(features, labels, st, fc, 21);
  CHECK(again.forest.serialize() == r.forest.serialize());
}

TEST_CASE("the full pipeline is deterministic and produces both traces") {
  SliceDataset labeled = volume_dataset(2, 6, 16, 606);
  SliceDataset unlabeled = volume_dataset(2, 6, 16, 607);
  for (auto& ts : unlabeled) {
    ts.volume_id = "u" + ts.volume_id;
    ts.label.reset();
  }
  PipelineConfig cfg = micro_config();

  const PipelineResult a = selftrain_pipeline(labeled, unlabeled, cfg, 31);
  const PipelineResult b = selftrain_pipeline(labeled, unlabeled, cfg, 31);
  CHECK(a.trace_text == b.trace_text);
  CHECK(!a.trace_text.empty());
  CHECK(a.slice_trace.size() == 2);
  CHECK(a.volume_trace.size() == 2);
  CHECK(a.pseudo_labeled_count == static_cast<std::int64_t>(unlabeled.size()));
  CHECK(a.volume_ids.size() == 12);  // 6 labeled + 6 unlabeled volumes
  CHECK(a.forest.serialize() == b.forest.serialize());

  const PipelineResult c = selftrain_pipeline(labeled, unlabeled, cfg, 32);
  CHECK(a.trace_text != c.trace_text);
}

TEST_CASE("volumes group by id with slices ordered by index") {
  SliceDataset data;
  for (int i : {2, 0, 1}) {
    TrainSlice ts;
    ts.volume_id = "a";
    ts.slice_index = i;
    data.push_back(ts);
  }
  TrainSlice other;
  other.volume_id = "b";
  other.slice_index = 0;
  data.push_back(other);
  const auto groups = group_by_volume(data);
  REQUIRE(groups.size() == 2);
  CHECK(groups[0].first == "a");
  CHECK(data[static_cast<std::size_t>(groups[0].second[0])].slice_index == 0);
  CHECK(data[static_cast<std::size_t>(groups[0].second[2])].slice_index == 2);
  CHECK(groups[1].first == "b");
}

TEST_SUITE_END();
