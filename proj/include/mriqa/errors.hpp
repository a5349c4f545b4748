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
#ifndef MRIQA_ERRORS_HPP_
#define MRIQA_ERRORS_HPP_

#include <stdexcept>
#include <string>

namespace mriqa {

/// Tensor/layer shape incompatibilities.
class ShapeError : public std::runtime_error {
 public:
  explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Arguments outside an operation's domain (empty image, non-scalar loss, ...).
class InvalidInputError : public std::runtime_error {
 public:
  explicit InvalidInputError(const std::string& what) : std::runtime_error(what) {}
};

/// Malformed on-disk data (manifests, PGM images, checkpoints, forests).
class FormatError : public std::runtime_error {
 public:
  explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

/// A class with zero samples where at least one is required.
class DegenerateClassError : public std::runtime_error {
 public:
  explicit DegenerateClassError(const std::string& what) : std::runtime_error(what) {}
};

/// Self-training cannot continue (e.g. every sample pruned).
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid configuration file or configuration value.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace mriqa

#endif  // MRIQA_ERRORS_HPP_
