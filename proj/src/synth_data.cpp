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
#include "mriqa/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <sstream>
#include <vector>

#include "mriqa/selftrain.hpp"

namespace mriqa {

namespace fs = std::filesystem;

std::string to_string(ArtifactKind kind) {
  switch (kind) {
    case ArtifactKind::MotionGhost:
      return "motion_ghost";
    case ArtifactKind::GibbsRinging:
      return "gibbs_ringing";
    case ArtifactKind::Noise:
      return "noise";
    case ArtifactKind::ContrastLoss:
      return "contrast_loss";
    case ArtifactKind::LocalBlur:
      return "local_blur";
  }
  throw InvalidInputError("unknown artifact kind");
}

void SeverityBands::validate() const {
  if (!(0.0 <= pass_max && pass_max < ques_min && ques_min <= ques_max && ques_max < fail_min &&
        fail_min <= 1.0)) {
    throw ConfigError("severity bands must be ordered and disjoint");
  }
}

QualityLabel SeverityBands::classify(double severity) const {
  validate();
  if (severity <= pass_max) return QualityLabel::Pass;
  if (severity >= ques_min && severity <= ques_max) return QualityLabel::Questionable;
  if (severity >= fail_min) return QualityLabel::Fail;
  throw InvalidInputError("severity " + std::to_string(severity) + " falls between bands");
}

void DatasetSpec::validate() const {
  bands.validate();
  if (slices_per_volume < 1) throw ConfigError("need at least one slice per volume");
  if (phantom.canvas < 8) throw ConfigError("canvas too small");
  if (noise.corruption_rate < 0.0 || noise.corruption_rate > 1.0 || noise.mixed_rate < 0.0 ||
      noise.mixed_rate > 1.0) {
    throw ConfigError("noise rates must lie in [0,1]");
  }
}

SliceImage generate_phantom_slice(const PhantomConfig& config, std::mt19937_64& rng) {
  const int s = config.canvas;
  std::uniform_int_distribution<int> count(config.min_ellipses, config.max_ellipses);
  std::uniform_real_distribution<double> center(0.25 * s, 0.75 * s);
  std::uniform_real_distribution<double> axis(0.08 * s, 0.35 * s);
  std::uniform_real_distribution<double> angle(0.0, 3.14159265358979323846);
  std::uniform_real_distribution<double> intensity(config.min_intensity, config.max_intensity);

  std::vector<double> canvas(static_cast<std::size_t>(s) * s, 0.0);
  const int n = count(rng);
  for (int e = 0; e < n; ++e) {
    const double cx = center(rng), cy = center(rng);
    const double a = axis(rng), b = axis(rng);
    const double th = angle(rng), ci = intensity(rng);
    const double cth = std::cos(th), sth = std::sin(th);
    for (int y = 0; y < s; ++y) {
      for (int x = 0; x < s; ++x) {
        const double dx = x - cx, dy = y - cy;
        const double u = cth * dx + sth * dy;
        const double v = -sth * dx + cth * dy;
        const double r2 = (u / a) * (u / a) + (v / b) * (v / b);
        canvas[static_cast<std::size_t>(y) * s + x] += ci * std::exp(-2.0 * r2);
      }
    }
  }
  SliceImage raw;
  raw.height = raw.width = s;
  raw.data.assign(canvas.begin(), canvas.end());
  SliceImage out = minmax_normalize(raw);
  const float floor_v = static_cast<float>(config.background_floor);
  for (auto& v : out.data) v = floor_v + (1.0f - floor_v) * v;
  return out;
}

namespace {

SliceImage shift_image(const SliceImage& in, int dy, int dx) {
  SliceImage out;
  out.height = in.height;
  out.width = in.width;
  out.data.assign(in.data.size(), 0.0f);
  for (int y = 0; y < in.height; ++y) {
    const int sy = y - dy;
    if (sy < 0 || sy >= in.height) continue;
    for (int x = 0; x < in.width; ++x) {
      const int sx = x - dx;
      if (sx < 0 || sx >= in.width) continue;
      out.at(y, x) = in.at(sy, sx);
    }
  }
  return out;
}

SliceImage motion_ghost(const SliceImage& in, double severity) {
  const int s = in.height;
  const int step = std::max(1, static_cast<int>(std::lround(severity * s / 8.0)));
  const double blend = 0.7 * severity;
  const int offsets[4] = {step, -step, 2 * step, -2 * step};
  SliceImage out = in;
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    out.data[i] = static_cast<float>((1.0 - blend) * in.data[i]);
  }
  for (int dy : offsets) {
    const SliceImage ghost = shift_image(in, dy, 0);
    for (std::size_t i = 0; i < out.data.size(); ++i) {
      out.data[i] += static_cast<float>(blend / 4.0 * ghost.data[i]);
    }
  }
  return out;
}

// Separable 1-D DFT truncation: zero every frequency above the cutoff in
// each row, then each column. The zero-frequency term survives, so the
// image mean is preserved up to clamping.
void truncate_lines(std::vector<double>& data, int lines, int length, int stride, int line_stride,
                    int keep) {
  const double two_pi = 2.0 * 3.14159265358979323846;
  std::vector<std::complex<double>> spectrum(static_cast<std::size_t>(length));
  for (int l = 0; l < lines; ++l) {
    double* base = data.data() + static_cast<std::ptrdiff_t>(l) * line_stride;
    for (int k = 0; k < length; ++k) {
      std::complex<double> acc(0.0, 0.0);
      for (int x = 0; x < length; ++x) {
        const double ph = -two_pi * k * x / length;
        acc += base[static_cast<std::ptrdiff_t>(x) * stride] *
               std::complex<double>(std::cos(ph), std::sin(ph));
      }
      spectrum[static_cast<std::size_t>(k)] = acc;
    }
    for (int k = 0; k < length; ++k) {
      const int freq = std::min(k, length - k);  // symmetric frequency index
      if (freq > keep) spectrum[static_cast<std::size_t>(k)] = 0.0;
    }
    for (int x = 0; x < length; ++x) {
      std::complex<double> acc(0.0, 0.0);
      for (int k = 0; k < length; ++k) {
        const double ph = two_pi * k * x / length;
        acc += spectrum[static_cast<std::size_t>(k)] *
               std::complex<double>(std::cos(ph), std::sin(ph));
      }
      base[static_cast<std::ptrdiff_t>(x) * stride] = acc.real() / length;
    }
  }
}

SliceImage gibbs_ringing(const SliceImage& in, double severity) {
  const int s = in.height;
  const int keep = std::max(2, static_cast<int>(std::floor((1.0 - 0.8 * severity) * s / 2.0)));
  std::vector<double> work(in.data.begin(), in.data.end());
  truncate_lines(work, s, s, 1, s, keep);  // rows
  truncate_lines(work, s, s, s, 1, keep);  // columns
  SliceImage out;
  out.height = out.width = s;
  out.data.resize(work.size());
  for (std::size_t i = 0; i < work.size(); ++i) out.data[i] = static_cast<float>(work[i]);
  return out;
}

SliceImage additive_noise(const SliceImage& in, double severity, std::mt19937_64& rng) {
  std::normal_distribution<double> noise(0.0, 0.3 * severity);
  SliceImage out = in;
  for (auto& v : out.data) v = static_cast<float>(v + noise(rng));
  return out;
}

// Nonlinear tone compression toward mid-gray. A linear remap would be
// undone exactly by the min-max normalization applied at load time; the
// gamma curve survives it.
SliceImage contrast_loss(const SliceImage& in, double severity) {
  const double gamma = 1.0 + 2.5 * severity;
  SliceImage out = in;
  for (auto& v : out.data) {
    const double u = (static_cast<double>(v) - 0.5) / 0.5;
    const double compressed = (u >= 0.0 ? 1.0 : -1.0) * std::pow(std::abs(u), gamma);
    v = static_cast<float>(0.5 + 0.5 * compressed);
  }
  return out;
}

SliceImage local_blur(const SliceImage& in, double severity, std::mt19937_64& rng) {
  const int s = in.height;
  const int patches = 2 + static_cast<int>(std::floor(4.0 * severity));
  const int radius = std::max(2, static_cast<int>(std::lround(s * (0.12 + 0.30 * severity))));
  const int kernel = 1 + static_cast<int>(std::lround(5.0 * severity));
  std::uniform_int_distribution<int> pos(0, s - 1);
  SliceImage out = in;
  for (int p = 0; p < patches; ++p) {
    const int cy = pos(rng), cx = pos(rng);
    for (int y = std::max(0, cy - radius); y <= std::min(s - 1, cy + radius); ++y) {
      for (int x = std::max(0, cx - radius); x <= std::min(s - 1, cx + radius); ++x) {
        double acc = 0.0;
        int cnt = 0;
        for (int ky = -kernel; ky <= kernel; ++ky) {
          for (int kx = -kernel; kx <= kernel; ++kx) {
            const int yy = y + ky, xx = x + kx;
            if (yy < 0 || yy >= s || xx < 0 || xx >= s) continue;
            acc += in.at(yy, xx);
            ++cnt;
          }
        }
        out.at(y, x) = static_cast<float>(acc / cnt);
      }
    }
  }
  return out;
}

}  // namespace

SliceImage inject_artifact(const SliceImage& slice, const ArtifactSpec& spec,
                           std::mt19937_64& rng) {
  if (spec.severity < 0.0 || spec.severity > 1.0) {
    throw InvalidInputError("inject_artifact: severity must lie in [0,1]");
  }
  if (spec.severity == 0.0) return slice;  // identity by contract
  SliceImage out;
  switch (spec.kind) {
    case ArtifactKind::MotionGhost:
      out = motion_ghost(slice, spec.severity);
      break;
    case ArtifactKind::GibbsRinging:
      out = gibbs_ringing(slice, spec.severity);
      break;
    case ArtifactKind::Noise:
      out = additive_noise(slice, spec.severity, rng);
      break;
    case ArtifactKind::ContrastLoss:
      out = contrast_loss(slice, spec.severity);
      break;
    case ArtifactKind::LocalBlur:
      out = local_blur(slice, spec.severity, rng);
      break;
  }
  for (auto& v : out.data) v = std::min(std::max(v, 0.0f), 1.0f);
  return out;
}

namespace {

struct GeneratedVolume {
  std::string id;
  std::vector<SliceImage> slices;
  std::vector<QualityLabel> true_slice_labels;
  QualityLabel true_volume_label = QualityLabel::Pass;
  std::optional<QualityLabel> observed_label;  // nullopt for the unlabeled pool
};

double draw_severity(QualityLabel cls, const SeverityBands& bands, std::mt19937_64& rng) {
  switch (cls) {
    case QualityLabel::Pass: {
      std::uniform_real_distribution<double> d(0.0, bands.pass_max);
      return d(rng);
    }
    case QualityLabel::Questionable: {
      std::uniform_real_distribution<double> d(bands.ques_min, bands.ques_max);
      return d(rng);
    }
    case QualityLabel::Fail: {
      std::uniform_real_distribution<double> d(bands.fail_min, 1.0);
      return d(rng);
    }
  }
  throw InvalidInputError("unknown class");
}

GeneratedVolume make_volume(const std::string& id, QualityLabel nominal, const DatasetSpec& spec,
                            bool allow_mixing, std::uint64_t volume_seed) {
  std::mt19937_64 rng(volume_seed);
  std::bernoulli_distribution is_mixed(allow_mixing ? spec.noise.mixed_rate : 0.0);
  std::bernoulli_distribution mix_slice(0.2);
  std::uniform_int_distribution<int> kind(0, kArtifactKinds - 1);
  std::uniform_int_distribution<int> other(0, 1);

  GeneratedVolume vol;
  vol.id = id;
  const bool mixed = is_mixed(rng);
  for (int i = 0; i < spec.slices_per_volume; ++i) {
    QualityLabel slice_class = nominal;
    if (mixed && mix_slice(rng)) {
      const int shift = 1 + other(rng);
      slice_class =
          static_cast<QualityLabel>((static_cast<int>(nominal) + shift) % kNumClasses);
    }
    const double severity = draw_severity(slice_class, spec.bands, rng);
    const ArtifactSpec art{static_cast<ArtifactKind>(kind(rng)), severity};
    SliceImage slice = generate_phantom_slice(spec.phantom, rng);
    // A mild severity-proportional tone compression accompanies every
    // primary artifact: heavier degradation dulls the whole slice.
    slice = inject_artifact(slice, {ArtifactKind::ContrastLoss, 0.55 * severity}, rng);
    slice = inject_artifact(slice, art, rng);
    vol.slices.push_back(std::move(slice));
    vol.true_slice_labels.push_back(spec.bands.classify(severity));
  }
  vol.true_volume_label = init_volume_labels(vol.true_slice_labels);
  return vol;
}

void write_split(const std::vector<GeneratedVolume>& volumes, const fs::path& dir,
                 SplitTag split) {
  fs::create_directories(dir / "images");
  DatasetManifest manifest, truth;
  manifest.split_tag = split;
  truth.split_tag = split;
  for (const auto& vol : volumes) {
    for (std::size_t i = 0; i < vol.slices.size(); ++i) {
      std::ostringstream name;
      name << vol.id << "_" << std::setw(3) << std::setfill('0') << i << ".pgm";
      const std::string rel = "images/" + name.str();
      save_pgm(quantize_to_pgm(vol.slices[i]), (dir / rel).string());

      ManifestRecord rec;
      rec.volume_id = vol.id;
      rec.slice_index = static_cast<int>(i);
      rec.image_path = rel;
      rec.label = vol.observed_label;
      manifest.records.push_back(rec);

      ManifestRecord truth_rec = rec;
      truth_rec.true_label = vol.true_slice_labels[i];
      truth.records.push_back(truth_rec);
    }
  }
  save_manifest(manifest, (dir / "manifest.tsv").string());
  save_manifest(truth, (dir / "truth.tsv").string());
}

}  // namespace

void generate_dataset(const DatasetSpec& spec, const std::string& out_dir, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 master(seed);
  const fs::path root(out_dir);

  // train split: nominal classes with volume-level label corruption
  std::vector<GeneratedVolume> train;
  {
    int serial = 0;
    for (int cls = 0; cls < kNumClasses; ++cls) {
      for (int v = 0; v < spec.train_volumes_per_class[static_cast<std::size_t>(cls)]; ++v) {
        std::ostringstream id;
        id << "t" << std::setw(3) << std::setfill('0') << serial++;
        GeneratedVolume vol = make_volume(id.str(), static_cast<QualityLabel>(cls), spec,
                                          /*allow_mixing=*/true, master());
        vol.observed_label = vol.true_volume_label;
        train.push_back(std::move(vol));
      }
    }
    // corrupt an exact fraction of the observed volume labels
    const auto n_corrupt = static_cast<std::size_t>(
        std::llround(spec.noise.corruption_rate * static_cast<double>(train.size())));
    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::mt19937_64 corrupt_rng(master());
    std::shuffle(order.begin(), order.end(), corrupt_rng);
    std::uniform_int_distribution<int> shift(1, 2);
    for (std::size_t i = 0; i < n_corrupt; ++i) {
      GeneratedVolume& vol = train[order[i]];
      const int flipped =
          (static_cast<int>(*vol.observed_label) + shift(corrupt_rng)) % kNumClasses;
      vol.observed_label = static_cast<QualityLabel>(flipped);
    }
  }
  write_split(train, root / "train", SplitTag::Train);

  // unlabeled split: nominal classes cycle, no observed labels
  {
    std::vector<GeneratedVolume> unlabeled;
    for (int v = 0; v < spec.unlabeled_volumes; ++v) {
      std::ostringstream id;
      id << "u" << std::setw(3) << std::setfill('0') << v;
      unlabeled.push_back(make_volume(id.str(), static_cast<QualityLabel>(v % kNumClasses), spec,
                                      /*allow_mixing=*/true, master()));
    }
    write_split(unlabeled, root / "unlabeled", SplitTag::Unlabeled);
  }

  // test split: clean observed labels, mixing still allowed
  {
    std::vector<GeneratedVolume> test;
    int serial = 0;
    for (int cls = 0; cls < kNumClasses; ++cls) {
      for (int v = 0; v < spec.test_volumes_per_class[static_cast<std::size_t>(cls)]; ++v) {
        std::ostringstream id;
        id << "x" << std::setw(3) << std::setfill('0') << serial++;
        GeneratedVolume vol = make_volume(id.str(), static_cast<QualityLabel>(cls), spec,
                                          /*allow_mixing=*/true, master());
        vol.observed_label = vol.true_volume_label;
        test.push_back(std::move(vol));
      }
    }
    write_split(test, root / "test", SplitTag::Test);
  }
}

}  // namespace mriqa
