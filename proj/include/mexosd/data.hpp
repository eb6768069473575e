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

// Frame labelling, chunk cutting, overlap synthesis and the augmentation hook.
// Labels: 0 non-speech, 1 single speaker, 2 overlapped speech.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mexosd/rttm.hpp"
#include "mexosd/wav.hpp"

namespace mexosd::data {

inline constexpr int kNumClasses = 3;

struct FrameLabelSequence {
  int frame_ms = 30;
  std::vector<int> labels;

  double frame_s() const noexcept { return frame_ms / 1000.0; }
  bool operator==(const FrameLabelSequence&) const = default;
};

/// Number of frames needed to cover `duration_s`.
std::size_t frame_count(double duration_s, int frame_ms = 30);

/// A speaker is active in a frame iff one of its segments covers the frame
/// midpoint; label = min(active speakers, 2). Segments running past the end
/// are clipped (logged, counted in `clipped` when non-null).
FrameLabelSequence frame_labels(const std::vector<SegmentAnnotation>& segments, double total_duration_s,
                                int frame_ms = 30, std::size_t* clipped = nullptr);

/// Window geometry in frames; defaults match 1.5 s chunks of 30 ms frames at 16 kHz.
struct ChunkGeometry {
  int sample_rate = 16000;
  int frame_ms = 30;
  int frames_per_chunk = 50;

  int samples_per_frame() const noexcept { return sample_rate * frame_ms / 1000; }
  int chunk_samples() const noexcept { return samples_per_frame() * frames_per_chunk; }
  double window_s() const noexcept { return frames_per_chunk * frame_ms / 1000.0; }
};

/// Converts a hop in seconds to whole frames; throws unless it is a positive
/// multiple of the frame length.
std::size_t hop_frames(double hop_s, int frame_ms = 30);

/// Start frames of the windows covering `total_frames`. Regular hops from 0;
/// when they do not reach the end, a final window aligned to the last frame
/// is added (and the preceding regular window dropped if its neighbours
/// already cover it), so every frame is covered and no frame is covered by
/// more than ceil(window / hop) windows.
std::vector<std::size_t> chunk_offsets(std::size_t total_frames, std::size_t window_frames, std::size_t hop);

struct ChunkSample {
  std::vector<double> waveform;
  std::vector<int> labels;
  std::string source_id;
  double offset_s = 0.0;
  std::size_t offset_frame = 0;
};

/// Cuts a recording into model-sized chunks. Audio past the recording end is
/// zero and labels past the label sequence are 0.
std::vector<ChunkSample> make_chunks(const Audio& audio, const FrameLabelSequence& labels, double hop_s,
                                     const std::string& source_id = {}, const ChunkGeometry& geometry = {});

/// 2 where both sides are speech, else the larger label.
std::vector<int> merge_labels(std::span<const int> a, std::span<const int> b);

struct MixResult {
  std::vector<double> waveform;
  std::vector<int> labels;
};

/// a + 10^(gain_db/20) * b, scaled down to a 0.99 peak when it exceeds it.
MixResult synth_mix(std::span<const double> wave_a, std::span<const int> labels_a, std::span<const double> wave_b,
                    std::span<const int> labels_b, double gain_db);
ChunkSample synth_mix(const ChunkSample& a, const ChunkSample& b, double gain_db);

/// Scales in place so the absolute peak is at most 0.99.
void peak_normalize(std::vector<double>& wave, double peak = 0.99);

using WaveformTransform = std::function<std::vector<double>(std::span<const double>)>;

/// Replaces the waveform with transform(waveform); labels are untouched.
/// Throws InputError if the transform changes the length.
ChunkSample apply_augmentation(const ChunkSample& chunk, const WaveformTransform& transform);

/// Frame-label counts per class over every chunk.
std::vector<std::uint64_t> label_histogram(std::span<const ChunkSample> dataset, int num_classes = kNumClasses);

struct ManifestEntry {
  std::filesystem::path audio_path;
  std::filesystem::path annotation_path;  // may be empty (inference-only lists)
  std::string recording_id;
};

/// One JSON object per line with keys audio, rttm, id. Relative paths
/// resolve against the manifest's directory; ids must be unique.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, bool require_annotations = true);
void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries);

struct Recording {
  std::string id;
  Audio audio;
  std::vector<SegmentAnnotation> segments;
  FrameLabelSequence labels;
};

/// Loads audio + annotation and derives frame labels. Enforces the audio contract.
Recording load_recording(const ManifestEntry& entry, int frame_ms = 30);

struct MixedRecording {
  std::string id;
  Audio audio;
  std::vector<SegmentAnnotation> segments;
};

/// Sums equal-length crops of two recordings, the second scaled by gain_db,
/// then peak-normalizes. Annotations are clipped to the crops, shifted to
/// start at 0 and their speaker ids prefixed with the source recording id.
MixedRecording mix_recordings(const Recording& a, double offset_a_s, const Recording& b, double offset_b_s,
                              double length_s, double gain_db, std::string id);

struct CorpusMixOptions {
  /// Total mixture duration as a fraction of the source duration.
  double proportion = 0.4;
  double crop_s = 6.0;
  /// Gains are drawn from U[-max_gain_db, max_gain_db].
  double max_gain_db = 5.0;
};

/// Random pairs of distinct recordings (or two crops of the only one),
/// deterministic in `seed`. Crop starts sit on a 10 ms grid.
std::vector<MixedRecording> mix_corpus(const std::vector<Recording>& sources, const CorpusMixOptions& options,
                                       std::uint64_t seed);

/// Chunks every recording in a manifest list.
std::vector<ChunkSample> chunk_recordings(const std::vector<Recording>& recordings, double hop_s,
                                          const ChunkGeometry& geometry = {});

}  // namespace mexosd::data
