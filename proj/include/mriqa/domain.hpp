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
#ifndef MRIQA_DOMAIN_HPP_
#define MRIQA_DOMAIN_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mriqa/errors.hpp"

namespace mriqa {

// Three-class slice/volume quality rating.
enum class QualityLabel : int { Pass = 0, Questionable = 1, Fail = 2 };

constexpr int kNumClasses = 3;

std::string to_string(QualityLabel label);
QualityLabel label_from_string(const std::string& token);

// A single 2-D slice. After preprocessing all values lie in [0,1].
struct SliceImage {
  int height = 0;
  int width = 0;
  std::vector<float> data;  // row-major

  float at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  float& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
};

// An ordered stack of slices forming one acquisition.
struct VolumeStack {
  std::string volume_id;
  std::vector<SliceImage> slices;
  std::optional<std::vector<QualityLabel>> slice_labels;
  std::optional<QualityLabel> volume_label;

  void validate() const;
};

// Class probabilities plus the argmax label. Ties break by fixed class
// order Pass < Questionable < Fail so runs are reproducible.
struct SlicePrediction {
  std::array<double, kNumClasses> probabilities{};
  QualityLabel label = QualityLabel::Pass;

  static SlicePrediction from_probabilities(const std::array<double, kNumClasses>& probs);
  double max_probability() const;
};

QualityLabel argmax_label(const std::array<double, kNumClasses>& probs);

enum class SplitTag { Train, Validation, Test, Unlabeled };

std::string to_string(SplitTag tag);
SplitTag split_from_string(const std::string& token);

// One manifest line: a slice bound to its (possibly noisy) label.
struct ManifestRecord {
  std::string volume_id;
  int slice_index = 0;
  std::string image_path;                   // relative to the manifest file
  std::optional<QualityLabel> label;        // nullopt == "unlabeled"
  bool pseudo_labeled = false;              // label came from a model prediction
  std::optional<QualityLabel> true_label;   // ground-truth sidecars only
};

struct DatasetManifest {
  std::vector<ManifestRecord> records;
  SplitTag split_tag = SplitTag::Train;

  void validate() const;  // unique (volume_id, slice_index) pairs
};

// ---- preprocessing ----

// (x - min) / (max - min) elementwise; a constant image maps to all zeros.
SliceImage minmax_normalize(const SliceImage& image);

// Centers the image in a size x size zero canvas; an odd margin places the
// extra row/column at the bottom/right.
SliceImage pad_to_size(const SliceImage& image, int size);

// ---- manifest i/o ----
// Line format: volume_id<TAB>slice_index<TAB>image_path<TAB>label with `#`
// comment lines and a `#! split=<tag>` header. Pseudo-labeled records and
// ground-truth sidecars carry extra trailing columns.

DatasetManifest load_manifest(const std::string& path, bool check_image_paths = true);
void save_manifest(const DatasetManifest& manifest, const std::string& path);

// ---- 16-bit portable graymap (P5, maxval 65535) ----

struct RawImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint16_t> data;
};

RawImage load_pgm(const std::string& path);
void save_pgm(const RawImage& image, const std::string& path);

// Quantizes a [0,1] slice to 16 bits / widens a raw image to float.
RawImage quantize_to_pgm(const SliceImage& slice);
SliceImage widen_raw(const RawImage& raw);

}  // namespace mriqa

#endif  // MRIQA_DOMAIN_HPP_
