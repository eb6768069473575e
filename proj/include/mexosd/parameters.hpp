// Copyright 2026 The mexosd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mexosd/tensor.hpp"

namespace mexosd {

/// Ordered collection of named tensors. Used for trainable parameters,
/// their gradients (same layout), optimizer moments and running statistics.
class ParameterSet {
 public:
  /// Appends a zero tensor and returns its slot.
  std::size_t add(std::string name, Shape shape);

  std::size_t count() const noexcept { return tensors_.size(); }
  std::size_t total_elements() const noexcept;

  Tensor& operator[](std::size_t slot) { return tensors_.at(slot); }
  const Tensor& operator[](std::size_t slot) const { return tensors_.at(slot); }
  const std::string& name(std::size_t slot) const { return names_.at(slot); }
  std::optional<std::size_t> find(std::string_view name) const;

  /// Same names and shapes, all values zero.
  ParameterSet zeros_like() const;
  void zero();
  bool same_layout(const ParameterSet& other) const;

  bool operator==(const ParameterSet& other) const = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
};

}  // namespace mexosd
