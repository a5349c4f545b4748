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
#include "mriqa/metrics.hpp"

#include <iomanip>
#include <sstream>

namespace mriqa {

std::int64_t ConfusionMatrix::row_total(int actual) const {
  std::int64_t sum = 0;
  for (std::int64_t v : counts[static_cast<std::size_t>(actual)]) sum += v;
  return sum;
}

std::int64_t ConfusionMatrix::total() const {
  std::int64_t sum = 0;
  for (int a = 0; a < kNumClasses; ++a) {
    if (!excluded[static_cast<std::size_t>(a)]) sum += row_total(a);
  }
  return sum;
}

std::int64_t ConfusionMatrix::diagonal() const {
  std::int64_t sum = 0;
  for (int a = 0; a < kNumClasses; ++a) {
    if (!excluded[static_cast<std::size_t>(a)]) {
      sum += counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(a)];
    }
  }
  return sum;
}

ConfusionMatrix confusion(const std::vector<QualityLabel>& predictions,
                          const std::vector<QualityLabel>& truths,
                          const std::array<bool, kNumClasses>& exclude_actual) {
  if (predictions.size() != truths.size()) {
    throw InvalidInputError("confusion: prediction/truth count mismatch");
  }
  ConfusionMatrix cm;
  cm.excluded = exclude_actual;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    cm.counts[static_cast<std::size_t>(static_cast<int>(truths[i]))]
             [static_cast<std::size_t>(static_cast<int>(predictions[i]))] += 1;
  }
  return cm;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
  MetricsReport report;
  for (int t = 0; t < kNumClasses; ++t) {
    ClassMetrics& m = report.per_class[static_cast<std::size_t>(t)];
    if (cm.excluded[static_cast<std::size_t>(t)]) continue;  // masked: both undefined
    const std::int64_t actual = cm.row_total(t);
    m.support = actual;
    if (actual > 0) {
      m.sensitivity =
          static_cast<double>(cm.counts[static_cast<std::size_t>(t)][static_cast<std::size_t>(t)]) /
          static_cast<double>(actual);
    }
    std::int64_t fp = 0, tn = 0;
    for (int a = 0; a < kNumClasses; ++a) {
      if (a == t || cm.excluded[static_cast<std::size_t>(a)]) continue;
      for (int p = 0; p < kNumClasses; ++p) {
        const std::int64_t n = cm.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)];
        if (p == t) {
          fp += n;
        } else {
          tn += n;
        }
      }
    }
    if (tn + fp > 0) {
      m.specificity = static_cast<double>(tn) / static_cast<double>(tn + fp);
    }
  }
  const std::int64_t total = cm.total();
  if (total > 0) {
    report.accuracy = static_cast<double>(cm.diagonal()) / static_cast<double>(total);
  }
  return report;
}

namespace {

std::string fmt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

const char* kClassNames[kNumClasses] = {"pass", "questionable", "fail"};

}  // namespace

std::string MetricsReport::to_text(const ConfusionMatrix& cm) const {
  std::ostringstream os;
  os << std::left << std::setw(14) << "actual\\pred";
  for (int p = 0; p < kNumClasses; ++p) os << std::right << std::setw(14) << kClassNames[p];
  os << "\n";
  for (int a = 0; a < kNumClasses; ++a) {
    os << std::left << std::setw(14) << kClassNames[a];
    for (int p = 0; p < kNumClasses; ++p) {
      if (cm.excluded[static_cast<std::size_t>(a)]) {
        os << std::right << std::setw(14) << "-";
      } else {
        os << std::right << std::setw(14)
           << cm.counts[static_cast<std::size_t>(a)][static_cast<std::size_t>(p)];
      }
    }
    os << "\n";
  }
  os << std::left << std::setw(14) << "class" << std::right << std::setw(14) << "sensitivity"
     << std::setw(14) << "specificity" << std::setw(10) << "support" << "\n";
  for (int t = 0; t < kNumClasses; ++t) {
    const ClassMetrics& m = per_class[static_cast<std::size_t>(t)];
    os << std::left << std::setw(14) << kClassNames[t] << std::right << std::setw(14)
       << fmt(m.sensitivity) << std::setw(14) << fmt(m.specificity) << std::setw(10) << m.support
       << "\n";
  }
  os << "accuracy " << fmt(accuracy) << "\n";
  return os.str();
}

std::string MetricsReport::to_keyvalue() const {
  std::ostringstream os;
  for (int t = 0; t < kNumClasses; ++t) {
    const ClassMetrics& m = per_class[static_cast<std::size_t>(t)];
    os << "class=" << kClassNames[t] << " sensitivity=" << fmt(m.sensitivity)
       << " specificity=" << fmt(m.specificity) << " support=" << m.support << "\n";
  }
  os << "accuracy=" << fmt(accuracy) << "\n";
  return os.str();
}

}  // namespace mriqa
