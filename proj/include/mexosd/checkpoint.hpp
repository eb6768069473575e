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

// Binary checkpoint: an 8-byte magic, a u32 format version, a u64 header
// length, a JSON header (model config, tensor index, optional training
// state scalars, payload checksum) and then the raw little-endian doubles.

#include <cstdint>
#include <filesystem>
#include <optional>

#include "json.hpp"
#include "mexosd/model.hpp"
#include "mexosd/parameters.hpp"

namespace mexosd {

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

/// Everything needed to continue an interrupted `fit` exactly.
struct TrainingState {
  ParameterSet first_moment;
  ParameterSet second_moment;
  std::uint64_t optimizer_step = 0;
  int epoch = 0;  // completed epochs
  double learning_rate = 1e-3;
  double best_dev_loss = 0.0;
  double plateau_best = 0.0;
  int plateau_bad_epochs = 0;

  bool operator==(const TrainingState&) const = default;
};

nlohmann::json config_to_json(const ModelConfig& config);
/// Missing keys keep their defaults; unknown keys raise ConfigError.
ModelConfig config_from_json(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, const MultiExitNet& model,
                     const TrainingState* training_state = nullptr);

struct LoadedCheckpoint {
  MultiExitNet model;
  std::optional<TrainingState> training_state;
};

/// Throws CheckpointError on a bad magic, unsupported version, truncated or
/// corrupted payload, or (when `expected` is given) a config that differs.
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected = nullptr);

}  // namespace mexosd
