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
#ifndef MRIQA_COST_MODEL_HPP_
#define MRIQA_COST_MODEL_HPP_

// Analytic multiply-accumulate (MAC) accounting for convolution variants
// and residual blocks, plus a wall-clock microbenchmark harness. MACs are
// the counted unit; elementwise additions from residual sums and batch
// normalization are reported separately and excluded from reduction
// factors.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mriqa/errors.hpp"

namespace mriqa {

// Geometry of one convolution: c input channels, c_out output channels,
// h_out x w_out output extent, square d x d kernel.
struct ConvShape {
  int c = 1;
  int c_out = 1;
  int h_out = 1;
  int w_out = 1;
  int d = 1;

  void validate() const;
};

// MACs of a standard convolution: c * c' * d^2 * h' * w'.
std::uint64_t cc_std_conv(const ConvShape& s);

// MACs of a depthwise-separable convolution with the same geometry:
// c * d^2 * h' * w'  (depthwise)  +  c * c' * h' * w'  (pointwise).
std::uint64_t cc_dsconv(const ConvShape& s);

// Cost ratio of replacing a standard convolution with a separable one:
// 1/c' + 1/d^2. Equals cc_dsconv/cc_std_conv exactly.
double crf_conv(const ConvShape& s);

// Cost ratio of replacing a standard residual block with its separable
// counterpart: 1/c' + 3/(2 d^2 + 1).
double crf_dsres(const ConvShape& s);

// Exact rational check that cc_dsconv(s)/cc_std_conv(s) == 1/c' + 1/d^2,
// i.e. cc_dsconv * c' * d^2 == cc_std_conv * (d^2 + c').
bool crf_conv_identity_holds(const ConvShape& s);

// Block-level MAC totals backing crf_dsres: a residual block of two d x d
// convolutions plus a 1x1 skip projection, costed at uniform width c_out,
// and its separable counterpart where the two d x d convolutions become
// depthwise+pointwise pairs.
std::uint64_t cc_residual_block_std(int c_out, int d, std::int64_t positions);
std::uint64_t cc_residual_block_ds(int c_out, int d, std::int64_t positions);

// ---- network-level accounting ----

enum class LayerKind {
  Conv,
  Depthwise,
  Pointwise,
  MatMul,
  BatchNorm,
  ReLU,
  ResidualAdd,
  GlobalAvgPool,
  Softmax,
  BiasAdd,
};

std::string to_string(LayerKind kind);

// One layer of a network plan, in execution order.
struct LayerDesc {
  std::string name;
  LayerKind kind = LayerKind::Conv;
  std::string block;       // stem / stage1 / ... / classifier
  bool residual = false;   // member of a residual block (for CRF accounting)
  int c_in = 0, c_out = 0, d = 1, stride = 1, h_out = 0, w_out = 0;
  std::int64_t mm_m = 0, mm_k = 0, mm_n = 0;  // MatMul only
};

std::uint64_t layer_macs(const LayerDesc& d);
std::uint64_t layer_params(const LayerDesc& d);
std::uint64_t layer_elementwise_ops(const LayerDesc& d);

struct CostRow {
  std::string name;
  LayerKind kind;
  std::string block;
  bool residual;
  std::uint64_t macs;
  std::uint64_t params;
  std::uint64_t elementwise_ops;
};

struct CostReport {
  std::vector<CostRow> rows;
  std::uint64_t total_macs = 0;
  std::uint64_t total_params = 0;
  std::uint64_t total_elementwise_ops = 0;
  std::uint64_t residual_macs = 0;  // MACs of layers inside residual blocks

  std::string to_text() const;
  std::string to_keyvalue() const;
};

CostReport count_macs(const std::vector<LayerDesc>& plan);

// ---- microbenchmark ----

struct BenchItem {
  std::string name;
  std::function<void()> run_once;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct BenchRow {
  std::string name;
  double median_ms = 0.0;
  std::uint64_t macs = 0;
  std::uint64_t params = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  int repetitions = 0;

  double median_ms(const std::string& name) const;
  std::string to_text() const;
  std::string to_keyvalue() const;
};

// Runs each item `repetitions` times (after a fixed warmup) on the calling
// thread and records median wall-clock per run. repetitions must be >= 3.
BenchReport bench(const std::vector<BenchItem>& items, int repetitions);

}  // namespace mriqa

#endif  // MRIQA_COST_MODEL_HPP_
