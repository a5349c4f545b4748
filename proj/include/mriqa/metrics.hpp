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
#ifndef MRIQA_METRICS_HPP_
#define MRIQA_METRICS_HPP_

// Confusion matrices and one-vs-rest sensitivity/specificity. An exclusion
// mask drops actual classes from the tallies, mirroring evaluations where
// some actual classes are not scored (slice tables report no questionable
// rows).

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mriqa/domain.hpp"

namespace mriqa {

struct ConfusionMatrix {
  // rows = actual, columns = predicted
  std::array<std::array<std::int64_t, kNumClasses>, kNumClasses> counts{};
  std::array<bool, kNumClasses> excluded{};  // masked actual classes

  std::int64_t row_total(int actual) const;
  std::int64_t total() const;     // unmasked rows only
  std::int64_t diagonal() const;  // unmasked rows only
};

ConfusionMatrix confusion(const std::vector<QualityLabel>& predictions,
                          const std::vector<QualityLabel>& truths,
                          const std::array<bool, kNumClasses>& exclude_actual = {});

struct ClassMetrics {
  std::optional<double> sensitivity;  // TP / actual; absent for masked or empty classes
  std::optional<double> specificity;  // TN / (TN + FP) one-vs-rest over unmasked rows
  std::int64_t support = 0;
};

struct MetricsReport {
  std::array<ClassMetrics, kNumClasses> per_class{};
  std::optional<double> accuracy;  // diagonal / total over unmasked rows

  std::string to_text(const ConfusionMatrix& cm) const;
  std::string to_keyvalue() const;
};

MetricsReport metrics(const ConfusionMatrix& cm);

}  // namespace mriqa

#endif  // MRIQA_METRICS_HPP_
