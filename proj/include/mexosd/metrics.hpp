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

// Frame-level detection metrics for VAD and OSD plus per-exit class
// distributions. FA and Miss are both normalized by the reference positive
// frame count, so ER = FA + Miss. Undefined values are empty optionals.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "mexosd/data.hpp"
#include "mexosd/inference.hpp"

namespace mexosd::metrics {

enum class Task { vad, osd };

const char* task_name(Task t);
Task parse_task(std::string_view name);
/// VAD positives are {1, 2}; OSD positives are {2}.
bool is_positive(Task t, int label);

struct DetectionCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;

  std::uint64_t ref_positive() const noexcept { return tp + fn; }
  std::uint64_t frames() const noexcept { return tp + fp + fn + tn; }
  DetectionCounts& operator+=(const DetectionCounts& o) noexcept;
  bool operator==(const DetectionCounts&) const = default;
};

struct DetectionReport {
  Task task = Task::vad;
  std::optional<double> fa, miss, er;  // percentages
  std::optional<double> precision, recall, f1;
  std::uint64_t frames = 0;

  bool operator==(const DetectionReport&) const = default;
};

DetectionCounts count_detection(std::span<const int> ref, std::span<const int> hyp, Task task);
DetectionReport report_from_counts(Task task, const DetectionCounts& counts);
DetectionReport detection_metrics(const data::FrameLabelSequence& ref, const data::FrameLabelSequence& hyp, Task task);

/// Which label decides a frame's class when tallying exits.
enum class ClassBasis { reference, predicted };

struct ExitRateReport {
  std::string dataset;
  double gamma = 0.0;
  ClassBasis basis = ClassBasis::reference;
  /// counts[k][i]: frames of class k whose majority exit is i + 1.
  std::vector<std::vector<std::uint64_t>> counts;

  /// Empty when class k never occurs.
  std::optional<double> rate(std::size_t k, std::size_t exit_index) const;
  std::uint64_t class_frames(std::size_t k) const;
  ExitRateReport& operator+=(const ExitRateReport& o);
  bool operator==(const ExitRateReport&) const = default;
};

ExitRateReport exit_rates(std::span<const inference::FramePrediction> predictions, const data::FrameLabelSequence& ref,
                          double gamma, std::size_t num_exits = 3, ClassBasis basis = ClassBasis::reference,
                          std::string dataset = {});

struct ReportBundle {
  std::string dataset;
  std::vector<DetectionReport> detection;
  std::vector<ExitRateReport> exits;

  bool operator==(const ReportBundle&) const = default;
};

std::string render_text(const ReportBundle& bundle);
nlohmann::json to_json(const ReportBundle& bundle);
ReportBundle bundle_from_json(const nlohmann::json& j);
/// Columns dataset,class,exit,rate; undefined rates are left empty.
std::string render_csv(const ReportBundle& bundle);

}  // namespace mexosd::metrics
