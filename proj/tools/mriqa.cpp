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

// Command-line front end: synthetic dataset generation, training,
// self-training, volume assessment, evaluation, and cost benchmarking.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "mriqa/cost_model.hpp"
#include "mriqa/metrics.hpp"
#include "mriqa/nrnet.hpp"
#include "mriqa/random_forest.hpp"
#include "mriqa/selftrain.hpp"
#include "mriqa/synth_data.hpp"
#include "mriqa/training.hpp"

namespace fs = std::filesystem;
using namespace mriqa;

namespace {

// Distinct exit codes per error class.
constexpr int kExitInvalidInput = 2;
constexpr int kExitShape = 3;
constexpr int kExitFormat = 4;
constexpr int kExitDegenerateClass = 5;
constexpr int kExitProtocol = 6;
constexpr int kExitConfig = 7;

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + path + "'");
  out << text;
}

int cmd_synth_gen(const std::string& out_dir, int volumes_per_class, int unlabeled_volumes,
                  int test_volumes, int slices, int size, double noise_rate, double mixed_rate,
                  std::uint64_t seed) {
  DatasetSpec spec;
  spec.train_volumes_per_class = {volumes_per_class, volumes_per_class, volumes_per_class};
  spec.unlabeled_volumes = unlabeled_volumes;
  const int third = test_volumes / 3;
  spec.test_volumes_per_class = {test_volumes - 2 * third, third, third};
  spec.slices_per_volume = slices;
  spec.phantom.canvas = size;
  spec.noise.corruption_rate = noise_rate;
  spec.noise.mixed_rate = mixed_rate;
  generate_dataset(spec, out_dir, seed);
  std::cout << "generated " << out_dir << " (train " << 3 * volumes_per_class << ", unlabeled "
            << unlabeled_volumes << ", test " << test_volumes << " volumes; " << slices
            << " slices each at " << size << "x" << size << ")\n";
  return 0;
}

int cmd_train(const std::string& manifest, const std::string& config_path,
              const std::string& out_ckpt, std::uint64_t seed, const std::string& metrics_out) {
  const PipelineConfig cfg = PipelineConfig::load(config_path);
  const SliceDataset data = load_slice_dataset(manifest, cfg.train.net.input_size);
  const TrainResult result = train(data, cfg.train, seed);
  result.best_checkpoint.save(out_ckpt);
  std::ostringstream lines;
  for (const auto& m : result.history) lines << to_keyvalue(m) << "\n";
  lines << "best_epoch=" << result.best_epoch << " best_val_accuracy=" << std::fixed
        << std::setprecision(4) << result.best_val_accuracy << "\n";
  std::cout << lines.str();
  if (!metrics_out.empty()) write_text(metrics_out, lines.str());
  return 0;
}

int cmd_selftrain(const std::string& labeled_path, const std::string& unlabeled_path,
                  const std::string& config_path, const std::string& out_ckpt,
                  const std::string& out_forest, std::uint64_t seed,
                  const std::string& trace_out) {
  const PipelineConfig cfg = PipelineConfig::load(config_path);
  SliceDataset labeled = load_slice_dataset(labeled_path, cfg.train.net.input_size);
  SliceDataset unlabeled = load_slice_dataset(unlabeled_path, cfg.train.net.input_size);
  for (auto& ts : unlabeled) ts.label.reset();
  const PipelineResult result = selftrain_pipeline(std::move(labeled), std::move(unlabeled), cfg,
                                                   seed);
  result.checkpoint.save(out_ckpt);
  result.forest.save(out_forest);
  std::cout << result.trace_text;
  if (!trace_out.empty()) write_text(trace_out, result.trace_text);
  return 0;
}

int cmd_assess(const std::string& ckpt_path, const std::string& forest_path,
               const std::string& input_dir, const std::string& out_path) {
  const Checkpoint ckpt = Checkpoint::load(ckpt_path);
  const Forest forest = Forest::load(forest_path);
  NRNet32 net(ckpt);
  const SliceDataset data = load_slice_dataset(
      (fs::path(input_dir) / "manifest.tsv").string(), ckpt.config.input_size);
  const std::vector<SlicePrediction> preds = predict_slices(net, data, {});
  std::ostringstream out;
  for (const auto& [vid, indices] : group_by_volume(data)) {
    std::vector<SlicePrediction> volume_preds;
    volume_preds.reserve(indices.size());
    for (int i : indices) {
      out << format_prediction_line(vid, data[static_cast<std::size_t>(i)].slice_index,
                                    preds[static_cast<std::size_t>(i)])
          << "\n";
      volume_preds.push_back(preds[static_cast<std::size_t>(i)]);
    }
    const SlicePrediction volume_pred = predict_volume(forest, volume_features(volume_preds));
    out << format_prediction_line(vid, -1, volume_pred) << "\n";
  }
  write_text(out_path, out.str());
  std::cout << "assessed " << data.size() << " slices\n";
  return 0;
}

struct ParsedPredictions {
  std::map<std::pair<std::string, int>, QualityLabel> slices;
  std::map<std::string, QualityLabel> volumes;
};

ParsedPredictions parse_predictions(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open predictions '" + path + "'");
  ParsedPredictions parsed;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string vid, label;
    int idx = 0;
    double p0 = 0, p1 = 0, p2 = 0;
    if (!(ls >> vid >> idx >> p0 >> p1 >> p2 >> label)) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": malformed prediction");
    }
    const QualityLabel l = label_from_string(label);
    if (idx < 0) {
      parsed.volumes[vid] = l;
    } else {
      parsed.slices[{vid, idx}] = l;
    }
  }
  return parsed;
}

int cmd_eval(const std::string& pred_path, const std::string& truth_path,
             bool include_questionable) {
  const ParsedPredictions preds = parse_predictions(pred_path);
  const DatasetManifest truth = load_manifest(truth_path, /*check_image_paths=*/false);

  std::vector<QualityLabel> slice_pred, slice_truth;
  std::map<std::string, std::vector<QualityLabel>> volume_true_slices;
  for (const auto& rec : truth.records) {
    if (!rec.true_label) {
      throw FormatError("truth file lacks a true_label column; expected a ground-truth sidecar");
    }
    volume_true_slices[rec.volume_id].push_back(*rec.true_label);
    const auto it = preds.slices.find({rec.volume_id, rec.slice_index});
    if (it == preds.slices.end()) continue;  // predictions may cover a subset
    slice_pred.push_back(it->second);
    slice_truth.push_back(*rec.true_label);
  }
  if (slice_pred.empty() && preds.volumes.empty()) {
    throw InvalidInputError("no prediction covers the truth file");
  }

  std::array<bool, kNumClasses> mask{};
  if (!include_questionable) {
    mask[static_cast<std::size_t>(static_cast<int>(QualityLabel::Questionable))] = true;
  }
  const ConfusionMatrix slice_cm = confusion(slice_pred, slice_truth, mask);
  const MetricsReport slice_report = metrics(slice_cm);
  std::cout << "== slice metrics ==\n" << slice_report.to_text(slice_cm);
  std::cout << slice_report.to_keyvalue();

  std::vector<QualityLabel> vol_pred, vol_truth;
  for (const auto& [vid, labels] : volume_true_slices) {
    const auto it = preds.volumes.find(vid);
    if (it == preds.volumes.end()) continue;
    vol_pred.push_back(it->second);
    vol_truth.push_back(init_volume_labels(labels));
  }
  if (!vol_pred.empty()) {
    const ConfusionMatrix vol_cm = confusion(vol_pred, vol_truth);
    const MetricsReport vol_report = metrics(vol_cm);
    std::cout << "== volume metrics ==\n" << vol_report.to_text(vol_cm);
    std::cout << vol_report.to_keyvalue();
  }
  return 0;
}

int cmd_bench(const std::string& variants_arg, int input_size, int reps, std::uint64_t seed) {
  std::vector<Variant> variants;
  if (variants_arg == "all") {
    variants = {Variant::CRes, Variant::CResNRes, Variant::DSRes, Variant::DSResNRes};
  } else {
    std::istringstream vs(variants_arg);
    std::string item;
    while (std::getline(vs, item, ',')) variants.push_back(variant_from_string(item));
  }
  if (variants.empty()) throw InvalidInputError("bench: no variants selected");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(0.0f, 1.0f);
  Tensor32 input = Tensor32::zeros({1, input_size, input_size});
  for (auto& v : input.data) v = dist(rng);

  std::vector<std::unique_ptr<NRNet32>> nets;
  std::vector<BenchItem> items;
  for (Variant v : variants) {
    const NRNetConfig cfg = desk_variant(v, input_size);
    const CostReport cost = network_cost(cfg);
    std::cout << "== " << to_string(v) << " ==\n" << cost.to_text();
    nets.push_back(std::make_unique<NRNet32>(cfg, seed));
    NRNet32* net = nets.back().get();
    items.push_back({to_string(v), [net, &input] { net->infer_probs(input); }, cost.total_macs,
                     cost.total_params});
  }
  const BenchReport report = bench(items, reps);
  std::cout << "== timing (median per slice, " << reps << " repetitions) ==\n"
            << report.to_text() << report.to_keyvalue();

  auto has = [&](Variant v) {
    return std::find(variants.begin(), variants.end(), v) != variants.end();
  };
  auto check = [&](Variant a, Variant b, const std::string& name) {
    if (!has(a) || !has(b)) return;
    const bool ok = report.median_ms(to_string(a)) <= report.median_ms(to_string(b));
    std::cout << "ordering " << name << "=" << (ok ? "PASS" : "FAIL") << "\n";
  };
  check(Variant::DSResNRes, Variant::DSRes, "dsres+nres<=dsres");
  check(Variant::DSRes, Variant::CRes, "dsres<=cres");
  check(Variant::DSResNRes, Variant::CResNRes, "dsres+nres<=cres+nres");
  check(Variant::CResNRes, Variant::CRes, "cres+nres<=cres");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"slice- and volume-wise MR image quality assessment"};
  app.require_subcommand(1);

  auto* synth = app.add_subcommand("synth-gen", "generate a synthetic artifact dataset");
  std::string synth_out;
  int volumes_per_class = 20, unlabeled_volumes = 200, test_volumes = 40, slices = 60, size = 64;
  double noise_rate = 0.3, mixed_rate = 0.2;
  std::uint64_t synth_seed = 1;
  synth->add_option("--out", synth_out, "output directory")->required();
  synth->add_option("--volumes-per-class", volumes_per_class, "labeled train volumes per class");
  synth->add_option("--unlabeled-volumes", unlabeled_volumes, "unlabeled volumes");
  synth->add_option("--test-volumes", test_volumes, "clean test volumes");
  synth->add_option("--slices", slices, "slices per volume");
  synth->add_option("--size", size, "slice canvas extent");
  synth->add_option("--noise-rate", noise_rate, "fraction of train volume labels flipped");
  synth->add_option("--mixed-rate", mixed_rate, "fraction of volumes with mixed-class slices");
  synth->add_option("--seed", synth_seed, "generator seed");

  auto* train_cmd = app.add_subcommand("train", "supervised training of the slice network");
  std::string train_manifest, train_config, train_out, train_metrics_out;
  std::uint64_t train_seed = 1;
  train_cmd->add_option("--manifest", train_manifest, "labeled manifest")->required();
  train_cmd->add_option("--config", train_config, "configuration file")->required();
  train_cmd->add_option("--out", train_out, "output checkpoint")->required();
  train_cmd->add_option("--seed", train_seed, "training seed");
  train_cmd->add_option("--metrics-out", train_metrics_out, "write epoch metrics to a file");

  auto* st = app.add_subcommand("selftrain", "semi-supervised self-training pipeline");
  std::string st_labeled, st_unlabeled, st_config, st_ckpt, st_forest, st_trace;
  std::uint64_t st_seed = 1;
  st->add_option("--labeled", st_labeled, "labeled manifest")->required();
  st->add_option("--unlabeled", st_unlabeled, "unlabeled manifest")->required();
  st->add_option("--config", st_config, "configuration file")->required();
  st->add_option("--out-ckpt", st_ckpt, "output checkpoint")->required();
  st->add_option("--out-forest", st_forest, "output forest")->required();
  st->add_option("--seed", st_seed, "pipeline seed");
  st->add_option("--trace-out", st_trace, "write the iteration trace to a file");

  auto* assess = app.add_subcommand("assess", "predict slice and volume quality");
  std::string as_ckpt, as_forest, as_input, as_out;
  assess->add_option("--ckpt", as_ckpt, "checkpoint")->required();
  assess->add_option("--forest", as_forest, "forest file")->required();
  assess->add_option("--input", as_input, "dataset directory containing manifest.tsv")
      ->required();
  assess->add_option("--out", as_out, "prediction output file")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score predictions against ground truth");
  std::string ev_pred, ev_truth;
  bool ev_include_questionable = false;
  eval_cmd->add_option("--pred", ev_pred, "prediction file from assess")->required();
  eval_cmd->add_option("--truth", ev_truth, "ground-truth sidecar manifest")->required();
  eval_cmd->add_flag("--include-questionable-slices", ev_include_questionable,
                     "score actual-questionable slices instead of masking them");

  auto* bench_cmd = app.add_subcommand("bench", "cost model and timing comparison");
  std::string bench_variants = "all";
  int bench_size = 64, bench_reps = 100;
  std::uint64_t bench_seed = 1;
  bench_cmd->add_option("--variants", bench_variants, "all or a comma-separated list");
  bench_cmd->add_option("--input-size", bench_size, "slice extent");
  bench_cmd->add_option("--reps", bench_reps, "timing repetitions (>= 3)");
  bench_cmd->add_option("--seed", bench_seed, "input seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      return cmd_synth_gen(synth_out, volumes_per_class, unlabeled_volumes, test_volumes, slices,
                           size, noise_rate, mixed_rate, synth_seed);
    }
    if (train_cmd->parsed()) {
      return cmd_train(train_manifest, train_config, train_out, train_seed, train_metrics_out);
    }
    if (st->parsed()) {
      return cmd_selftrain(st_labeled, st_unlabeled, st_config, st_ckpt, st_forest, st_seed,
                           st_trace);
    }
    if (assess->parsed()) return cmd_assess(as_ckpt, as_forest, as_input, as_out);
    if (eval_cmd->parsed()) return cmd_eval(ev_pred, ev_truth, ev_include_questionable);
    if (bench_cmd->parsed()) {
      return cmd_bench(bench_variants, bench_size, bench_reps, bench_seed);
    }
  } catch (const InvalidInputError& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitInvalidInput;
  } catch (const ShapeError& e) {
    std::cerr << "shape error: " << e.what() << "\n";
    return kExitShape;
  } catch (const FormatError& e) {
    std::cerr << "format error: " << e.what() << "\n";
    return kExitFormat;
  } catch (const DegenerateClassError& e) {
    std::cerr << "degenerate class: " << e.what() << "\n";
    return kExitDegenerateClass;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol failure: " << e.what() << "\n";
    return kExitProtocol;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
