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
#include "mriqa/domain.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace mriqa {

namespace fs = std::filesystem;

std::string to_string(QualityLabel label) {
  switch (label) {
    case QualityLabel::Pass:
      return "pass";
    case QualityLabel::Questionable:
      return "questionable";
    case QualityLabel::Fail:
      return "fail";
  }
  throw InvalidInputError("unknown quality label value");
}

QualityLabel label_from_string(const std::string& token) {
  if (token == "pass") return QualityLabel::Pass;
  if (token == "questionable") return QualityLabel::Questionable;
  if (token == "fail") return QualityLabel::Fail;
  throw FormatError("unknown label token '" + token + "'");
}

void VolumeStack::validate() const {
  if (slices.empty()) throw InvalidInputError("volume '" + volume_id + "' has no slices");
  for (const auto& s : slices) {
    if (s.height != slices[0].height || s.width != slices[0].width) {
      throw ShapeError("volume '" + volume_id + "': slices have differing dimensions");
    }
  }
  if (slice_labels && slice_labels->size() != slices.size()) {
    throw InvalidInputError("volume '" + volume_id + "': slice label count mismatch");
  }
}

QualityLabel argmax_label(const std::array<double, kNumClasses>& probs) {
  int best = 0;
  for (int i = 1; i < kNumClasses; ++i) {
    if (probs[static_cast<std::size_t>(i)] > probs[static_cast<std::size_t>(best)]) best = i;
  }
  return static_cast<QualityLabel>(best);
}

SlicePrediction SlicePrediction::from_probabilities(const std::array<double, kNumClasses>& probs) {
  double sum = 0.0;
  for (double p : probs) {
    if (p < 0.0) throw InvalidInputError("prediction probability < 0");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-6) {
    throw InvalidInputError("prediction probabilities sum to " + std::to_string(sum));
  }
  SlicePrediction pred;
  pred.probabilities = probs;
  pred.label = argmax_label(probs);
  return pred;
}

double SlicePrediction::max_probability() const {
  return *std::max_element(probabilities.begin(), probabilities.end());
}

std::string to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::Train:
      return "train";
    case SplitTag::Validation:
      return "validation";
    case SplitTag::Test:
      return "test";
    case SplitTag::Unlabeled:
      return "unlabeled";
  }
  throw InvalidInputError("unknown split tag value");
}

SplitTag split_from_string(const std::string& token) {
  if (token == "train") return SplitTag::Train;
  if (token == "validation") return SplitTag::Validation;
  if (token == "test") return SplitTag::Test;
  if (token == "unlabeled") return SplitTag::Unlabeled;
  throw FormatError("unknown split tag '" + token + "'");
}

void DatasetManifest::validate() const {
  std::set<std::pair<std::string, int>> seen;
  for (const auto& r : records) {
    if (!seen.insert({r.volume_id, r.slice_index}).second) {
      throw FormatError("duplicate record (" + r.volume_id + ", " +
                        std::to_string(r.slice_index) + ")");
    }
  }
}

SliceImage minmax_normalize(const SliceImage& image) {
  if (image.data.empty() || image.height <= 0 || image.width <= 0) {
    throw InvalidInputError("minmax_normalize: empty image");
  }
  const auto [mn_it, mx_it] = std::minmax_element(image.data.begin(), image.data.end());
  const float mn = *mn_it, mx = *mx_it;
  SliceImage out;
  out.height = image.height;
  out.width = image.width;
  out.data.resize(image.data.size());
  if (mx == mn) {
    std::fill(out.data.begin(), out.data.end(), 0.0f);
    return out;
  }
  const float range = mx - mn;
  for (std::size_t i = 0; i < image.data.size(); ++i) out.data[i] = (image.data[i] - mn) / range;
  return out;
}

SliceImage pad_to_size(const SliceImage& image, int size) {
  if (image.height > size || image.width > size) {
    throw InvalidInputError("pad_to_size: image " + std::to_string(image.height) + "x" +
                            std::to_string(image.width) + " exceeds canvas " +
                            std::to_string(size));
  }
  SliceImage out;
  out.height = size;
  out.width = size;
  out.data.assign(static_cast<std::size_t>(size) * size, 0.0f);
  const int top = (size - image.height) / 2;
  const int left = (size - image.width) / 2;
  for (int y = 0; y < image.height; ++y) {
    std::copy(image.data.begin() + static_cast<std::ptrdiff_t>(y) * image.width,
              image.data.begin() + static_cast<std::ptrdiff_t>(y + 1) * image.width,
              out.data.begin() + static_cast<std::ptrdiff_t>(y + top) * size + left);
  }
  return out;
}

namespace {

constexpr const char* kUnlabeledToken = "unlabeled";
constexpr const char* kPseudoToken = "pseudo";
constexpr const char* kAnnotatedToken = "annotated";

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == '\t') {
      fields.push_back(cur);
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::optional<QualityLabel> parse_label_field(const std::string& token) {
  if (token == kUnlabeledToken) return std::nullopt;
  return label_from_string(token);
}

}  // namespace

DatasetManifest load_manifest(const std::string& path, bool check_image_paths) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path + "'");
  const fs::path base = fs::path(path).parent_path();

  DatasetManifest manifest;
  std::set<std::pair<std::string, int>> seen;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line.rfind("#!", 0) == 0) {
      std::string directive = line.substr(2);
      const auto eq = directive.find('=');
      if (eq == std::string::npos) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": bad directive");
      }
      std::string key = directive.substr(0, eq);
      key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
      std::string val = directive.substr(eq + 1);
      val.erase(std::remove(val.begin(), val.end(), ' '), val.end());
      if (key == "split") manifest.split_tag = split_from_string(val);
      continue;
    }
    if (line[0] == '#') continue;

    const auto fields = split_tabs(line);
    if (fields.size() < 4 || fields.size() > 6) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": expected 4-6 fields, got " +
                        std::to_string(fields.size()));
    }
    ManifestRecord rec;
    rec.volume_id = fields[0];
    try {
      std::size_t pos = 0;
      rec.slice_index = std::stoi(fields[1], &pos);
      if (pos != fields[1].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": bad slice index '" +
                        fields[1] + "'");
    }
    rec.image_path = fields[2];
    try {
      rec.label = parse_label_field(fields[3]);
      if (fields.size() >= 5) {
        if (fields[4] == kPseudoToken) {
          rec.pseudo_labeled = true;
        } else if (fields[4] != kAnnotatedToken) {
          rec.true_label = parse_label_field(fields[4]);
        }
      }
      if (fields.size() == 6) rec.true_label = parse_label_field(fields[5]);
    } catch (const FormatError& e) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen.insert({rec.volume_id, rec.slice_index}).second) {
      throw FormatError(path + " line " + std::to_string(line_no) + ": duplicate record (" +
                        rec.volume_id + ", " + std::to_string(rec.slice_index) + ")");
    }
    if (check_image_paths) {
      const fs::path img = base / rec.image_path;
      if (!fs::exists(img)) {
        throw FormatError(path + " line " + std::to_string(line_no) + ": image '" + img.string() +
                          "' does not exist");
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void save_manifest(const DatasetManifest& manifest, const std::string& path) {
  manifest.validate();
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write manifest '" + path + "'");
  out << "#! split=" << to_string(manifest.split_tag) << "\n";
  const bool any_pseudo = std::any_of(manifest.records.begin(), manifest.records.end(),
                                      [](const ManifestRecord& r) { return r.pseudo_labeled; });
  const bool any_truth = std::any_of(manifest.records.begin(), manifest.records.end(),
                                     [](const ManifestRecord& r) { return r.true_label.has_value(); });
  for (const auto& r : manifest.records) {
    out << r.volume_id << '\t' << r.slice_index << '\t' << r.image_path << '\t'
        << (r.label ? to_string(*r.label) : kUnlabeledToken);
    if (any_pseudo || any_truth) out << '\t' << (r.pseudo_labeled ? kPseudoToken : kAnnotatedToken);
    if (any_truth) out << '\t' << (r.true_label ? to_string(*r.true_label) : kUnlabeledToken);
    out << '\n';
  }
  if (!out) throw FormatError("write failed for manifest '" + path + "'");
}

namespace {

// Reads one whitespace-delimited PGM header token, skipping comments.
std::string next_pgm_token(std::istream& in) {
  std::string tok;
  int c = in.get();
  while (c != EOF) {
    if (c == '#') {
      while (c != EOF && c != '\n') c = in.get();
    } else if (std::isspace(c)) {
      c = in.get();
    } else {
      break;
    }
  }
  while (c != EOF && !std::isspace(c)) {
    tok.push_back(static_cast<char>(c));
    c = in.get();
  }
  return tok;
}

}  // namespace

RawImage load_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open image '" + path + "'");
  if (next_pgm_token(in) != "P5") throw FormatError(path + ": not a P5 graymap");
  RawImage img;
  try {
    img.width = std::stoi(next_pgm_token(in));
    img.height = std::stoi(next_pgm_token(in));
    const int maxval = std::stoi(next_pgm_token(in));
    if (maxval != 65535) throw FormatError(path + ": expected 16-bit graymap (maxval 65535)");
  } catch (const FormatError&) {
    throw;
  } catch (const std::exception&) {
    throw FormatError(path + ": malformed PGM header");
  }
  if (img.width <= 0 || img.height <= 0) throw FormatError(path + ": bad dimensions");
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  std::vector<unsigned char> bytes(n * 2);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != bytes.size()) {
    throw FormatError(path + ": truncated pixel data");
  }
  img.data.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // Most significant byte first, per the format.
    img.data[i] = static_cast<std::uint16_t>((bytes[2 * i] << 8) | bytes[2 * i + 1]);
  }
  return img;
}

void save_pgm(const RawImage& image, const std::string& path) {
  if (image.width <= 0 || image.height <= 0 ||
      image.data.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw InvalidInputError("save_pgm: inconsistent image");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write image '" + path + "'");
  out << "P5\n" << image.width << " " << image.height << "\n65535\n";
  std::vector<unsigned char> bytes(image.data.size() * 2);
  for (std::size_t i = 0; i < image.data.size(); ++i) {
    bytes[2 * i] = static_cast<unsigned char>(image.data[i] >> 8);
    bytes[2 * i + 1] = static_cast<unsigned char>(image.data[i] & 0xff);
  }
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("write failed for image '" + path + "'");
}

RawImage quantize_to_pgm(const SliceImage& slice) {
  RawImage raw;
  raw.height = slice.height;
  raw.width = slice.width;
  raw.data.resize(slice.data.size());
  for (std::size_t i = 0; i < slice.data.size(); ++i) {
    const float v = std::min(std::max(slice.data[i], 0.0f), 1.0f);
    raw.data[i] = static_cast<std::uint16_t>(std::lround(v * 65535.0f));
  }
  return raw;
}

SliceImage widen_raw(const RawImage& raw) {
  SliceImage s;
  s.height = raw.height;
  s.width = raw.width;
  s.data.resize(raw.data.size());
  for (std::size_t i = 0; i < raw.data.size(); ++i) s.data[i] = static_cast<float>(raw.data[i]);
  return s;
}

}  // namespace mriqa
