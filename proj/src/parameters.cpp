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

#include "mexosd/parameters.hpp"

#include "mexosd/error.hpp"

namespace mexosd {

std::size_t ParameterSet::add(std::string name, Shape shape) {
  if (find(name)) throw Error("duplicate parameter name '" + name + "'");
  names_.push_back(std::move(name));
  tensors_.emplace_back(std::move(shape));
  return tensors_.size() - 1;
}

std::size_t ParameterSet::total_elements() const noexcept {
  std::size_t total = 0;
  for (const auto& t : tensors_) total += t.size();
  return total;
}

std::optional<std::size_t> ParameterSet::find(std::string_view name) const {
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return i;
  }
  return std::nullopt;
}

ParameterSet ParameterSet::zeros_like() const {
  ParameterSet out;
  out.names_ = names_;
  out.tensors_.reserve(tensors_.size());
  for (const auto& t : tensors_) out.tensors_.emplace_back(t.shape());
  return out;
}

void ParameterSet::zero() {
  for (auto& t : tensors_) t.fill(0.0);
}

bool ParameterSet::same_layout(const ParameterSet& other) const {
  if (names_ != other.names_) return false;
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].shape() != other.tensors_[i].shape()) return false;
  }
  return true;
}

}  // namespace mexosd
