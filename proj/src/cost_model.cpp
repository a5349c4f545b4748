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
#include "mriqa/cost_model.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>

namespace mriqa {

void ConvShape::validate() const {
  if (c < 1 || c_out < 1 || h_out < 1 || w_out < 1 || d < 1) {
    throw InvalidInputError("ConvShape: all fields must be positive");
  }
}

std::uint64_t cc_std_conv(const ConvShape& s) {
  s.validate();
  return static_cast<std::uint64_t>(s.c) * s.c_out * s.d * s.d * s.h_out * s.w_out;
}

std::uint64_t cc_dsconv(const ConvShape& s) {
  s.validate();
  const std::uint64_t positions = static_cast<std::uint64_t>(s.h_out) * s.w_out;
  return static_cast<std::uint64_t>(s.c) * s.d * s.d * positions +
         static_cast<std::uint64_t>(s.c) * s.c_out * positions;
}

double crf_conv(const ConvShape& s) {
  s.validate();
  return 1.0 / s.c_out + 1.0 / (static_cast<double>(s.d) * s.d);
}

double crf_dsres(const ConvShape& s) {
  s.validate();
  return 1.0 / s.c_out + 3.0 / (2.0 * s.d * s.d + 1.0);
}

bool crf_conv_identity_holds(const ConvShape& s) {
  s.validate();
  const unsigned __int128 lhs = static_cast<unsigned __int128>(cc_dsconv(s)) *
                                static_cast<std::uint64_t>(s.c_out) *
                                static_cast<std::uint64_t>(s.d) * static_cast<std::uint64_t>(s.d);
  const unsigned __int128 rhs =
      static_cast<unsigned __int128>(cc_std_conv(s)) *
      (static_cast<std::uint64_t>(s.d) * s.d + static_cast<std::uint64_t>(s.c_out));
  return lhs == rhs;
}

std::uint64_t cc_residual_block_std(int c_out, int d, std::int64_t positions) {
  if (c_out < 1 || d < 1 || positions < 1) {
    throw InvalidInputError("residual block cost: positive arguments required");
  }
  // Two d x d convolutions plus a 1x1 skip projection at width c_out.
  const std::uint64_t cs = static_cast<std::uint64_t>(c_out);
  return (2 * static_cast<std::uint64_t>(d) * d + 1) * cs * cs *
         static_cast<std::uint64_t>(positions);
}

std::uint64_t cc_residual_block_ds(int c_out, int d, std::int64_t positions) {
  if (c_out < 1 || d < 1 || positions < 1) {
    throw InvalidInputError("residual block cost: positive arguments required");
  }
  // Depthwise+pointwise pairs replace the two d x d convolutions; the 1x1
  // skip is already pointwise.
  const std::uint64_t cs = static_cast<std::uint64_t>(c_out);
  return cs * (2 * static_cast<std::uint64_t>(d) * d + 3 * cs) *
         static_cast<std::uint64_t>(positions);
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::Conv:
      return "conv";
    case LayerKind::Depthwise:
      return "depthwise";
    case LayerKind::Pointwise:
      return "pointwise";
    case LayerKind::MatMul:
      return "matmul";
    case LayerKind::BatchNorm:
      return "batchnorm";
    case LayerKind::ReLU:
      return "relu";
    case LayerKind::ResidualAdd:
      return "residual_add";
    case LayerKind::GlobalAvgPool:
      return "global_avg_pool";
    case LayerKind::Softmax:
      return "softmax";
    case LayerKind::BiasAdd:
      return "bias_add";
  }
  throw InvalidInputError("unknown layer kind");
}

std::uint64_t layer_macs(const LayerDesc& l) {
  const std::uint64_t positions = static_cast<std::uint64_t>(l.h_out) * l.w_out;
  switch (l.kind) {
    case LayerKind::Conv:
      return static_cast<std::uint64_t>(l.c_in) * l.c_out * l.d * l.d * positions;
    case LayerKind::Depthwise:
      return static_cast<std::uint64_t>(l.c_in) * l.d * l.d * positions;
    case LayerKind::Pointwise:
      return static_cast<std::uint64_t>(l.c_in) * l.c_out * positions;
    case LayerKind::MatMul:
      return static_cast<std::uint64_t>(l.mm_m) * l.mm_k * l.mm_n;
    default:
      return 0;
  }
}

std::uint64_t layer_params(const LayerDesc& l) {
  switch (l.kind) {
    case LayerKind::Conv:
      return static_cast<std::uint64_t>(l.c_out) * l.c_in * l.d * l.d;
    case LayerKind::Depthwise:
      return static_cast<std::uint64_t>(l.c_in) * l.d * l.d;
    case LayerKind::Pointwise:
      return static_cast<std::uint64_t>(l.c_out) * l.c_in;
    case LayerKind::BatchNorm:
      return 2 * static_cast<std::uint64_t>(l.c_out);
    case LayerKind::BiasAdd:
      return static_cast<std::uint64_t>(l.c_out);
    default:
      return 0;
  }
}

std::uint64_t layer_elementwise_ops(const LayerDesc& l) {
  const std::uint64_t positions = static_cast<std::uint64_t>(l.h_out) * l.w_out;
  switch (l.kind) {
    case LayerKind::ResidualAdd:
    case LayerKind::BatchNorm:
      return static_cast<std::uint64_t>(l.c_out) * positions;
    default:
      return 0;
  }
}

CostReport count_macs(const std::vector<LayerDesc>& plan) {
  CostReport report;
  for (const auto& l : plan) {
    CostRow row;
    row.name = l.name;
    row.kind = l.kind;
    row.block = l.block;
    row.residual = l.residual;
    row.macs = layer_macs(l);
    row.params = layer_params(l);
    row.elementwise_ops = layer_elementwise_ops(l);
    report.total_macs += row.macs;
    report.total_params += row.params;
    report.total_elementwise_ops += row.elementwise_ops;
    if (row.residual) report.residual_macs += row.macs;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string CostReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(28) << "layer" << std::setw(16) << "kind" << std::right
     << std::setw(14) << "macs" << std::setw(12) << "params" << std::setw(12) << "elemops"
     << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(28) << r.name << std::setw(16) << to_string(r.kind) << std::right
       << std::setw(14) << r.macs << std::setw(12) << r.params << std::setw(12)
       << r.elementwise_ops << "\n";
  }
  os << std::left << std::setw(44) << "total" << std::right << std::setw(14) << total_macs
     << std::setw(12) << total_params << std::setw(12) << total_elementwise_ops << "\n";
  return os.str();
}

std::string CostReport::to_keyvalue() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "layer=" << r.name << " kind=" << to_string(r.kind) << " macs=" << r.macs
       << " params=" << r.params << " elemops=" << r.elementwise_ops << "\n";
  }
  os << "total_macs=" << total_macs << "\n";
  os << "total_params=" << total_params << "\n";
  os << "total_elemops=" << total_elementwise_ops << "\n";
  os << "residual_macs=" << residual_macs << "\n";
  return os.str();
}

double BenchReport::median_ms(const std::string& name) const {
  for (const auto& r : rows) {
    if (r.name == name) return r.median_ms;
  }
  throw InvalidInputError("bench report has no row '" + name + "'");
}

std::string BenchReport::to_text() const {
  std::ostringstream os;
  os << std::left << std::setw(16) << "network" << std::right << std::setw(14) << "median_ms"
     << std::setw(14) << "macs" << std::setw(12) << "params" << "\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(16) << r.name << std::right << std::setw(14) << std::fixed
       << std::setprecision(4) << r.median_ms << std::setw(14) << r.macs << std::setw(12)
       << r.params << "\n";
  }
  return os.str();
}

std::string BenchReport::to_keyvalue() const {
  std::ostringstream os;
  for (const auto& r : rows) {
    os << "network=" << r.name << " median_ms=" << std::fixed << std::setprecision(4)
       << r.median_ms << " macs=" << r.macs << " params=" << r.params << "\n";
  }
  os << "repetitions=" << repetitions << "\n";
  return os.str();
}

BenchReport bench(const std::vector<BenchItem>& items, int repetitions) {
  if (repetitions < 3) throw InvalidInputError("bench: need at least 3 repetitions");
  constexpr int kWarmup = 2;
  BenchReport report;
  report.repetitions = repetitions;
  for (const auto& item : items) {
    for (int i = 0; i < kWarmup; ++i) item.run_once();
    std::vector<double> samples;
    samples.reserve(static_cast<std::size_t>(repetitions));
    for (int i = 0; i < repetitions; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      item.run_once();
      const auto t1 = std::chrono::steady_clock::now();
      samples.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    std::sort(samples.begin(), samples.end());
    const std::size_t mid = samples.size() / 2;
    const double median = samples.size() % 2 == 1
                              ? samples[mid]
                              : 0.5 * (samples[mid - 1] + samples[mid]);
    report.rows.push_back({item.name, median, item.macs, item.params});
  }
  return report;
}

}  // namespace mriqa
