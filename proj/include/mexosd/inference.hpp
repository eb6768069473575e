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

// Sliding-window prediction, exit selection, vote fusion and segment output.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "mexosd/data.hpp"
#include "mexosd/model.hpp"
#include "mexosd/rttm.hpp"
#include "mexosd/wav.hpp"

namespace mexosd::inference {

enum class Mode { normal, exiting };

const char* mode_name(Mode m);
/// "normal" or "exiting"; throws ConfigError otherwise.
Mode parse_mode(std::string_view name);

struct InferenceConfig {
  Mode mode = Mode::normal;
  double gamma = 0.9;
  double hop_s = 0.3;
  double window_s = 1.5;
  /// Odd window of a median filter over fused labels; 0 or 1 disables it.
  int median_filter_frames = 0;

  void validate() const;
};

struct FrameVote {
  int label = 0;
  int exit = 0;  // 1-based
  double confidence = 0.0;

  bool operator==(const FrameVote&) const = default;
};

struct FramePrediction {
  std::size_t frame_index = 0;
  std::vector<FrameVote> votes;
  int final_label = 0;
  int majority_exit = 0;
  /// Largest confidence among votes for the winning label.
  double confidence = 0.0;
};

/// Per-frame selection for item `b` of a batch of exit outputs. Exiting mode
/// takes the first non-final exit whose top probability is strictly above
/// gamma, otherwise the final exit.
std::vector<FrameVote> select_exits(const ExitOutputs& outputs, std::size_t b, Mode mode, double gamma);

std::vector<FrameVote> predict_chunk(const MultiExitNet& model, std::span<const double> waveform,
                                     const InferenceConfig& config);

/// Most frequent label; ties go to the larger class. Throws on empty input.
int majority_vote(std::span<const int> labels);
/// Most frequent exit among the votes; ties go to the earlier exit.
int majority_exit(std::span<const FrameVote> votes);

/// One prediction per 30 ms frame of `audio`.
std::vector<FramePrediction> predict_recording(const MultiExitNet& model, const Audio& audio,
                                               const InferenceConfig& config, std::size_t batch_size = 16);

/// Runs recordings on up to `jobs` threads; output order follows input order.
std::vector<std::vector<FramePrediction>> predict_recordings(const MultiExitNet& model,
                                                             std::span<const Audio> recordings,
                                                             const InferenceConfig& config, std::size_t jobs = 1);

data::FrameLabelSequence fused_labels(std::span<const FramePrediction> predictions, int frame_ms = 30);

struct Segment {
  double onset_s = 0.0;
  double offset_s = 0.0;
  bool operator==(const Segment&) const = default;
};

struct SegmentOutput {
  std::vector<Segment> vad;
  std::vector<Segment> osd;
};

/// Maximal runs of {1, 2} (VAD) and of 2 (OSD).
SegmentOutput frames_to_segments(const data::FrameLabelSequence& labels);

inline constexpr const char* kSpeechSpeaker = "speech";
inline constexpr const char* kOverlapSpeaker = "overlap";

/// RTTM records with speaker `speech` for VAD and `overlap` for OSD segments.
std::vector<SegmentAnnotation> to_annotations(const SegmentOutput& segments, const std::string& recording_id);

/// True when every speaker is `speech` or `overlap`.
bool is_detection_output(std::span<const SegmentAnnotation> segments);

/// Inverse of to_annotations on the frame grid.
data::FrameLabelSequence detection_labels(const std::vector<SegmentAnnotation>& segments, double duration_s,
                                          int frame_ms = 30);

/// One JSON object per frame: {"t": start seconds, "label", "exit", "confidence"}.
void write_frame_dump(std::ostream& out, std::span<const FramePrediction> predictions, int frame_ms = 30);

}  // namespace mexosd::inference
