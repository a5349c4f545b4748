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
#ifndef MRIQA_SYNTH_DATA_HPP_
#define MRIQA_SYNTH_DATA_HPP_

// Synthetic slice/volume generator: smooth multi-ellipse phantoms with
// graded artifact injection. Disjoint severity bands define the
// ground-truth quality classes; volume-level label corruption emulates
// noisy volume-wise annotation where every slice inherits its volume's
// (possibly wrong) label.

#include <array>
#include <cstdint>
#include <random>
#include <string>

#include "mriqa/domain.hpp"

namespace mriqa {

struct PhantomConfig {
  int canvas = 64;
  int min_ellipses = 3;
  int max_ellipses = 7;
  double min_intensity = 0.25;
  double max_intensity = 1.0;
  // Lifts the darkest pixel off zero so ringing artifacts keep headroom
  // before the [0,1] clamp.
  double background_floor = 0.12;
};

enum class ArtifactKind { MotionGhost, GibbsRinging, Noise, ContrastLoss, LocalBlur };

constexpr int kArtifactKinds = 5;

std::string to_string(ArtifactKind kind);

struct ArtifactSpec {
  ArtifactKind kind = ArtifactKind::Noise;
  double severity = 0.0;  // 0 = identity transform
};

struct NoiseModel {
  double corruption_rate = 0.0;  // exact fraction of volume labels flipped
  double mixed_rate = 0.0;       // volumes containing slices of other true classes
};

// True-class severity bands, separated by dead zones.
struct SeverityBands {
  double pass_max = 0.15;
  double ques_min = 0.35;
  double ques_max = 0.55;
  double fail_min = 0.75;

  void validate() const;
  QualityLabel classify(double severity) const;
};

SliceImage generate_phantom_slice(const PhantomConfig& config, std::mt19937_64& rng);

// motion_ghost: blends shifted copies; gibbs_ringing: separable 1-D
// frequency truncation; noise: additive zero-mean perturbation;
// contrast_loss: range compression toward mid-gray; local_blur: patchwise
// smoothing. Output clamped to [0,1].
SliceImage inject_artifact(const SliceImage& slice, const ArtifactSpec& spec,
                           std::mt19937_64& rng);

struct DatasetSpec {
  std::array<int, kNumClasses> train_volumes_per_class = {20, 20, 20};
  int unlabeled_volumes = 200;
  std::array<int, kNumClasses> test_volumes_per_class = {14, 13, 13};
  int slices_per_volume = 60;
  PhantomConfig phantom;
  SeverityBands bands;
  NoiseModel noise;  // applies to the train split only

  void validate() const;
};

// Writes train/, unlabeled/ and test/ trees under out_dir, each with
// images/, a manifest.tsv of observed labels and a truth.tsv sidecar
// carrying the true per-slice labels. Byte-identical output for the same
// spec and seed.
void generate_dataset(const DatasetSpec& spec, const std::string& out_dir, std::uint64_t seed);

}  // namespace mriqa

#endif  // MRIQA_SYNTH_DATA_HPP_
