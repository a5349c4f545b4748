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
#include "mriqa/nrnet.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace mriqa {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

std::string to_string(Variant v) {
  switch (v) {
    case Variant::CRes:
      return "cres";
    case Variant::CResNRes:
      return "cres+nres";
    case Variant::DSRes:
      return "dsres";
    case Variant::DSResNRes:
      return "dsres+nres";
  }
  throw InvalidInputError("unknown variant value");
}

Variant variant_from_string(const std::string& token) {
  if (token == "cres") return Variant::CRes;
  if (token == "cres+nres") return Variant::CResNRes;
  if (token == "dsres") return Variant::DSRes;
  if (token == "dsres+nres") return Variant::DSResNRes;
  throw FormatError("unknown variant '" + token + "'");
}

int NRNetConfig::max_channels() const {
  int m = stem_channels;
  for (int c : stage_channels) m = std::max(m, c);
  if (!has_nres()) m = std::max(m, head_channels);
  return m;
}

int NRNetConfig::embed_channels() const {
  if (stage_channels.empty()) return 0;
  const int c = stage_channels.back();
  return nres_embed > 0 ? nres_embed : std::max(1, c / 2);
}

void NRNetConfig::validate() const {
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("kernel extent must be odd");
  if (input_size < 2) throw ConfigError("input size too small");
  if (stem_channels < 1) throw ConfigError("stem channels must be positive");
  if (stage_channels.empty()) throw ConfigError("at least one residual stage required");
  int prev = stem_channels;
  for (int c : stage_channels) {
    if (c < prev) throw ConfigError("stage channels must be non-decreasing");
    prev = c;
  }
  if (!has_nres() && head_channels < prev) {
    throw ConfigError("head channels must be >= the last stage");
  }
  if (num_classes < 2) throw ConfigError("need at least two classes");
  if (has_nres() && embed_channels() > stage_channels.back()) {
    throw ConfigError("embedding channels must be <= block channels");
  }
  // One stem stride plus one stride per stage; the final extent must be >= 1.
  int extent = input_size;
  for (std::size_t i = 0; i < stage_channels.size() + 1; ++i) {
    extent = (extent + 2 * (kernel / 2) - kernel) / 2 + 1;
    if (extent < 1) throw ConfigError("input size too small for the stage count");
  }
}

std::string NRNetConfig::to_text() const {
  std::ostringstream os;
  os << "variant=" << to_string(variant) << "\n";
  os << "input_size=" << input_size << "\n";
  os << "stem_channels=" << stem_channels << "\n";
  os << "stage_channels=";
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    os << (i ? "," : "") << stage_channels[i];
  }
  os << "\n";
  os << "head_channels=" << head_channels << "\n";
  os << "kernel=" << kernel << "\n";
  os << "num_classes=" << num_classes << "\n";
  os << "nres_embed=" << nres_embed << "\n";
  os << "bn_epsilon=" << std::setprecision(17) << bn_epsilon << "\n";
  os << "bn_momentum=" << std::setprecision(17) << bn_momentum << "\n";
  return os.str();
}

NRNetConfig NRNetConfig::from_text(const std::string& text) {
  NRNetConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("config line without '=': " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    try {
      if (key == "variant") {
        cfg.variant = variant_from_string(val);
      } else if (key == "input_size") {
        cfg.input_size = std::stoi(val);
      } else if (key == "stem_channels") {
        cfg.stem_channels = std::stoi(val);
      } else if (key == "stage_channels") {
        cfg.stage_channels.clear();
        std::istringstream vs(val);
        std::string item;
        while (std::getline(vs, item, ',')) cfg.stage_channels.push_back(std::stoi(item));
      } else if (key == "head_channels") {
        cfg.head_channels = std::stoi(val);
      } else if (key == "kernel") {
        cfg.kernel = std::stoi(val);
      } else if (key == "num_classes") {
        cfg.num_classes = std::stoi(val);
      } else if (key == "nres_embed") {
        cfg.nres_embed = std::stoi(val);
      } else if (key == "bn_epsilon") {
        cfg.bn_epsilon = std::stod(val);
      } else if (key == "bn_momentum") {
        cfg.bn_momentum = std::stod(val);
      } else {
        throw FormatError("unknown architecture key '" + key + "'");
      }
    } catch (const FormatError&) {
      throw;
    } catch (const std::exception&) {
      throw FormatError("bad value for architecture key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

NRNetConfig build_variant(Variant tag) {
  NRNetConfig cfg;
  cfg.variant = tag;
  cfg.input_size = 256;
  cfg.stem_channels = 64;
  cfg.stage_channels = {128, 256};
  cfg.head_channels = 512;
  cfg.validate();
  return cfg;
}

NRNetConfig desk_variant(Variant tag, int input_size) {
  NRNetConfig cfg;
  cfg.variant = tag;
  cfg.input_size = input_size;
  cfg.stem_channels = 12;
  cfg.stage_channels = {24, 48};
  cfg.head_channels = 96;
  cfg.validate();
  return cfg;
}

std::vector<LayerDesc> layer_plan(const NRNetConfig& cfg) {
  cfg.validate();
  std::vector<LayerDesc> plan;
  const int d = cfg.kernel;
  const int pad = d / 2;
  int extent = cfg.input_size;
  auto out_extent = [&](int in, int kd, int stride, int p) {
    return (in + 2 * p - kd) / stride + 1;
  };
  auto emit = [&](LayerDesc l) { plan.push_back(std::move(l)); };

  // stem
  int s_out = out_extent(extent, d, 2, pad);
  emit({"stem.conv", LayerKind::Conv, "stem", false, 1, cfg.stem_channels, d, 2, s_out, s_out,
        0, 0, 0});
  emit({"stem.bn", LayerKind::BatchNorm, "stem", false, cfg.stem_channels, cfg.stem_channels, 1,
        1, s_out, s_out, 0, 0, 0});
  emit({"stem.relu", LayerKind::ReLU, "stem", false, cfg.stem_channels, cfg.stem_channels, 1, 1,
        s_out, s_out, 0, 0, 0});
  extent = s_out;
  int c = cfg.stem_channels;

  auto emit_res_block = [&](const std::string& name, int c_in, int c_out, int stride) {
    const int eo = out_extent(extent, d, stride, pad);
    const bool sep = cfg.separable();
    if (sep) {
      emit({name + ".dw1", LayerKind::Depthwise, name, true, c_in, c_in, d, stride, eo, eo, 0, 0,
            0});
      emit({name + ".pw1", LayerKind::Pointwise, name, true, c_in, c_out, 1, 1, eo, eo, 0, 0, 0});
    } else {
      emit({name + ".conv1", LayerKind::Conv, name, true, c_in, c_out, d, stride, eo, eo, 0, 0,
            0});
    }
    emit({name + ".bn1", LayerKind::BatchNorm, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0, 0});
    emit({name + ".relu1", LayerKind::ReLU, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0, 0});
    if (sep) {
      emit({name + ".dw2", LayerKind::Depthwise, name, true, c_out, c_out, d, 1, eo, eo, 0, 0,
            0});
      emit({name + ".pw2", LayerKind::Pointwise, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0,
            0});
    } else {
      emit({name + ".conv2", LayerKind::Conv, name, true, c_out, c_out, d, 1, eo, eo, 0, 0, 0});
    }
    emit({name + ".bn2", LayerKind::BatchNorm, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0, 0});
    if (c_in != c_out || stride != 1) {
      emit({name + ".skip", LayerKind::Conv, name, true, c_in, c_out, 1, stride, eo, eo, 0, 0,
            0});
    }
    emit({name + ".add", LayerKind::ResidualAdd, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0,
          0});
    emit({name + ".relu2", LayerKind::ReLU, name, true, c_out, c_out, 1, 1, eo, eo, 0, 0, 0});
    extent = eo;
  };

  for (std::size_t i = 0; i < cfg.stage_channels.size(); ++i) {
    emit_res_block("stage" + std::to_string(i + 1), c, cfg.stage_channels[i], 2);
    c = cfg.stage_channels[i];
  }
  if (cfg.has_nres()) {
    const int e = cfg.embed_channels();
    const std::int64_t hw = static_cast<std::int64_t>(extent) * extent;
    emit({"nres.phi", LayerKind::Pointwise, "nres", false, c, e, 1, 1, extent, extent, 0, 0, 0});
    emit({"nres.psi", LayerKind::Pointwise, "nres", false, c, e, 1, 1, extent, extent, 0, 0, 0});
    emit({"nres.g", LayerKind::Pointwise, "nres", false, c, e, 1, 1, extent, extent, 0, 0, 0});
    emit({"nres.logits", LayerKind::MatMul, "nres", false, 0, 0, 1, 1, 0, 0, hw, e, hw});
    emit({"nres.softmax", LayerKind::Softmax, "nres", false, 0, 0, 1, 1, 0, 0, 0, 0, 0});
    emit({"nres.aggregate", LayerKind::MatMul, "nres", false, 0, 0, 1, 1, 0, 0, hw, hw, e});
    emit({"nres.wout", LayerKind::Pointwise, "nres", false, e, c, 1, 1, extent, extent, 0, 0, 0});
    emit({"nres.add", LayerKind::ResidualAdd, "nres", false, c, c, 1, 1, extent, extent, 0, 0,
          0});
  } else {
    emit_res_block("head", c, cfg.head_channels, 1);
    c = cfg.head_channels;
  }
  emit({"classifier.conv", LayerKind::Pointwise, "classifier", false, c, cfg.num_classes, 1, 1,
        extent, extent, 0, 0, 0});
  emit({"classifier.bias", LayerKind::BiasAdd, "classifier", false, cfg.num_classes,
        cfg.num_classes, 1, 1, extent, extent, 0, 0, 0});
  emit({"classifier.gap", LayerKind::GlobalAvgPool, "classifier", false, cfg.num_classes,
        cfg.num_classes, 1, 1, extent, extent, 0, 0, 0});
  emit({"classifier.softmax", LayerKind::Softmax, "classifier", false, 0, 0, 1, 1, 0, 0, 0, 0,
        0});
  return plan;
}

CostReport network_cost(const NRNetConfig& cfg) { return count_macs(layer_plan(cfg)); }

namespace {

constexpr char kCheckpointMagic[8] = {'M', 'R', 'I', 'Q', 'A', 'C', 'K', 'P'};
constexpr std::uint32_t kCheckpointVersion = 1;

void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

std::uint32_t read_u32(std::istream& is, const std::string& path) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw FormatError(path + ": truncated checkpoint");
  }
  return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& path) {
  std::uint64_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(v))) {
    throw FormatError(path + ": truncated checkpoint");
  }
  return v;
}

}  // namespace

void Checkpoint::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FormatError("cannot write checkpoint '" + path + "'");
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_u32(os, kCheckpointVersion);
  write_u32(os, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_u32(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (int e : t.shape) write_u32(os, static_cast<std::uint32_t>(e));
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  }
  const std::string cfg_text = config.to_text();
  write_u64(os, cfg_text.size());
  os.write(cfg_text.data(), static_cast<std::streamsize>(cfg_text.size()));
  if (!os) throw FormatError("write failed for checkpoint '" + path + "'");
}

Checkpoint Checkpoint::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open checkpoint '" + path + "'");
  char magic[8];
  if (!is.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw FormatError(path + ": not a checkpoint file");
  }
  Checkpoint ck;
  ck.version = read_u32(is, path);
  if (ck.version != kCheckpointVersion) {
    throw FormatError(path + ": unsupported checkpoint version " + std::to_string(ck.version));
  }
  const std::uint32_t count = read_u32(is, path);
  ck.tensors.resize(count);
  for (auto& t : ck.tensors) {
    const std::uint32_t name_len = read_u32(is, path);
    t.name.resize(name_len);
    if (!is.read(t.name.data(), name_len)) throw FormatError(path + ": truncated checkpoint");
    const std::uint32_t rank = read_u32(is, path);
    t.shape.resize(rank);
    std::size_t numel = 1;
    for (auto& e : t.shape) {
      e = static_cast<int>(read_u32(is, path));
      numel *= static_cast<std::size_t>(e);
    }
    t.data.resize(numel);
    if (!is.read(reinterpret_cast<char*>(t.data.data()),
                 static_cast<std::streamsize>(numel * sizeof(float)))) {
      throw FormatError(path + ": truncated tensor data");
    }
  }
  const std::uint64_t cfg_len = read_u64(is, path);
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), static_cast<std::streamsize>(cfg_len))) {
    throw FormatError(path + ": truncated configuration");
  }
  ck.config = NRNetConfig::from_text(cfg_text);
  return ck;
}

SlicePrediction nrnet_predict(NRNet32& net, const SliceImage& slice) {
  const int s = net.config().input_size;
  if (slice.height != s || slice.width != s) {
    throw ShapeError("nrnet_predict: slice " + std::to_string(slice.height) + "x" +
                     std::to_string(slice.width) + " does not match network input " +
                     std::to_string(s));
  }
  Tensor32 input = Tensor32::from({1, s, s}, slice.data);
  const Tensor32 probs = net.infer_probs(input);
  std::array<double, kNumClasses> p{};
  double sum = 0.0;
  for (int i = 0; i < kNumClasses; ++i) {
    p[static_cast<std::size_t>(i)] = static_cast<double>(probs.data[static_cast<std::size_t>(i)]);
    sum += p[static_cast<std::size_t>(i)];
  }
  // Renormalize away float32 rounding so downstream invariants hold exactly.
  for (auto& v : p) v /= sum;
  return SlicePrediction::from_probabilities(p);
}

std::string format_prediction_line(const std::string& volume_id, int slice_index,
                                   const SlicePrediction& pred) {
  std::ostringstream os;
  os << volume_id << '\t' << slice_index << '\t' << std::setprecision(9) << std::fixed;
  for (double p : pred.probabilities) os << p << '\t';
  os << to_string(pred.label);
  return os.str();
}

}  // namespace mriqa
