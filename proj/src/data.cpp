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

#include "mexosd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "json.hpp"
#include <spdlog/spdlog.h>

#include "mexosd/error.hpp"

namespace mexosd::data {

std::size_t frame_count(double duration_s, int frame_ms) {
  if (duration_s <= 0.0) return 0;
  const double frames = duration_s / (frame_ms / 1000.0);
  return static_cast<std::size_t>(std::ceil(frames - 1e-9));
}

FrameLabelSequence frame_labels(const std::vector<SegmentAnnotation>& segments, double total_duration_s,
                                int frame_ms, std::size_t* clipped) {
  if (frame_ms <= 0) throw ConfigError("frame_ms", "must be positive");
  FrameLabelSequence out;
  out.frame_ms = frame_ms;
  const std::size_t n = frame_count(total_duration_s, frame_ms);
  const double fs = frame_ms / 1000.0;

  std::map<std::string, std::vector<char>> active;
  std::size_t clipped_count = 0;
  for (const auto& seg : segments) {
    const double end = seg.onset_s + seg.duration_s;
    if (end > total_duration_s + 1e-9) ++clipped_count;
    auto& cover = active[seg.speaker_id];
    if (cover.empty()) cover.assign(n, 0);
    // First frame whose midpoint is >= onset, then walk while midpoint < end.
    double first = std::ceil(seg.onset_s / fs - 0.5);
    std::size_t j = first < 0.0 ? 0 : static_cast<std::size_t>(first);
    while (j > 0 && (static_cast<double>(j - 1) + 0.5) * fs >= seg.onset_s) --j;
    for (; j < n; ++j) {
      const double mid = (static_cast<double>(j) + 0.5) * fs;
      if (mid < seg.onset_s) continue;
      if (mid >= end) break;
      cover[j] = 1;
    }
  }
  if (clipped_count > 0) {
    spdlog::warn("{} segment(s) extend past the recording end ({:.3f} s) and were clipped", clipped_count,
                 total_duration_s);
  }
  if (clipped) *clipped = clipped_count;

  out.labels.assign(n, 0);
  for (const auto& [speaker, cover] : active) {
    for (std::size_t j = 0; j < n; ++j) out.labels[j] += cover[j];
  }
  for (int& v : out.labels) v = std::min(v, 2);
  return out;
}

std::size_t hop_frames(double hop_s, int frame_ms) {
  const double frames = hop_s / (frame_ms / 1000.0);
  const double rounded = std::round(frames);
  if (!(hop_s > 0.0) || rounded < 1.0 || std::abs(frames - rounded) > 1e-6) {
    throw ConfigError("hop_s", "must be a positive multiple of the " + std::to_string(frame_ms) +
                                   " ms frame, got " + std::to_string(hop_s));
  }
  return static_cast<std::size_t>(rounded);
}

std::vector<std::size_t> chunk_offsets(std::size_t total_frames, std::size_t window_frames, std::size_t hop) {
  if (hop == 0 || window_frames == 0) throw ConfigError("hop_s", "window and hop must be positive");
  std::vector<std::size_t> offsets{0};
  if (total_frames <= window_frames) return offsets;
  while (offsets.back() + hop + window_frames <= total_frames) offsets.push_back(offsets.back() + hop);
  const std::size_t last = offsets.back();
  if (last + window_frames < total_frames) {
    const std::size_t end_aligned = total_frames - window_frames;
    if (offsets.size() >= 2 && end_aligned <= offsets[offsets.size() - 2] + window_frames) offsets.pop_back();
    offsets.push_back(end_aligned);
  }
  return offsets;
}

std::vector<ChunkSample> make_chunks(const Audio& audio, const FrameLabelSequence& labels, double hop_s,
                                     const std::string& source_id, const ChunkGeometry& geometry) {
  require_model_audio(audio, geometry.sample_rate);
  if (labels.frame_ms != geometry.frame_ms) {
    throw InputError("labels use " + std::to_string(labels.frame_ms) + " ms frames, chunks expect " +
                     std::to_string(geometry.frame_ms));
  }
  const std::size_t hop = hop_frames(hop_s, geometry.frame_ms);
  const std::size_t window = static_cast<std::size_t>(geometry.frames_per_chunk);
  const std::size_t spf = static_cast<std::size_t>(geometry.samples_per_frame());
  const std::size_t total_frames =
      std::max<std::size_t>(frame_count(audio.duration_s(), geometry.frame_ms), std::size_t{1});

  std::vector<ChunkSample> out;
  for (std::size_t off : chunk_offsets(total_frames, window, hop)) {
    ChunkSample c;
    c.source_id = source_id;
    c.offset_frame = off;
    c.offset_s = static_cast<double>(off) * geometry.frame_ms / 1000.0;
    c.waveform.assign(window * spf, 0.0);
    const std::size_t begin = off * spf;
    if (begin < audio.samples.size()) {
      const std::size_t n = std::min(window * spf, audio.samples.size() - begin);
      std::copy_n(audio.samples.begin() + static_cast<std::ptrdiff_t>(begin), n, c.waveform.begin());
    }
    c.labels.assign(window, 0);
    for (std::size_t j = 0; j < window && off + j < labels.labels.size(); ++j) c.labels[j] = labels.labels[off + j];
    out.push_back(std::move(c));
  }
  return out;
}

std::vector<int> merge_labels(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("label sequences differ in length");
  std::vector<int> out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = (a[i] >= 1 && b[i] >= 1) ? 2 : std::max(a[i], b[i]);
  return out;
}

void peak_normalize(std::vector<double>& wave, double peak) {
  double m = 0.0;
  for (double v : wave) m = std::max(m, std::abs(v));
  if (m > peak) {
    const double s = peak / m;
    for (double& v : wave) v *= s;
  }
}

MixResult synth_mix(std::span<const double> wave_a, std::span<const int> labels_a, std::span<const double> wave_b,
                    std::span<const int> labels_b, double gain_db) {
  if (wave_a.size() != wave_b.size()) {
    throw InputError("cannot mix waveforms of " + std::to_string(wave_a.size()) + " and " +
                     std::to_string(wave_b.size()) + " samples");
  }
  const double gain = std::pow(10.0, gain_db / 20.0);
  MixResult r;
  r.waveform.resize(wave_a.size());
  for (std::size_t i = 0; i < wave_a.size(); ++i) r.waveform[i] = wave_a[i] + gain * wave_b[i];
  peak_normalize(r.waveform);
  r.labels = merge_labels(labels_a, labels_b);
  return r;
}

ChunkSample synth_mix(const ChunkSample& a, const ChunkSample& b, double gain_db) {
  MixResult r = synth_mix(a.waveform, a.labels, b.waveform, b.labels, gain_db);
  ChunkSample c;
  c.waveform = std::move(r.waveform);
  c.labels = std::move(r.labels);
  c.source_id = a.source_id + "+" + b.source_id;
  c.offset_s = a.offset_s;
  c.offset_frame = a.offset_frame;
  return c;
}

ChunkSample apply_augmentation(const ChunkSample& chunk, const WaveformTransform& transform) {
  ChunkSample out = chunk;
  out.waveform = transform(chunk.waveform);
  if (out.waveform.size() != chunk.waveform.size()) {
    throw InputError("augmentation changed waveform length from " + std::to_string(chunk.waveform.size()) + " to " +
                     std::to_string(out.waveform.size()));
  }
  return out;
}

std::vector<std::uint64_t> label_histogram(std::span<const ChunkSample> dataset, int num_classes) {
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(num_classes), 0);
  for (const auto& c : dataset) {
    for (int y : c.labels) {
      if (y < 0 || y >= num_classes) throw InputError("label " + std::to_string(y) + " out of range");
      ++counts[static_cast<std::size_t>(y)];
    }
  }
  return counts;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path, bool require_annotations) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open manifest " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };
  std::vector<ManifestEntry> out;
  std::set<std::string> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(path.string() + ": " + e.what(), line_no);
    }
    if (!j.is_object() || !j.contains("audio") || !j.contains("id")) {
      throw ParseError(path.string() + ": manifest entries need 'audio' and 'id'", line_no);
    }
    ManifestEntry e;
    e.audio_path = resolve(j.at("audio").get<std::string>());
    e.recording_id = j.at("id").get<std::string>();
    if (j.contains("rttm") && !j.at("rttm").is_null()) e.annotation_path = resolve(j.at("rttm").get<std::string>());
    if (require_annotations && e.annotation_path.empty()) {
      throw ParseError(path.string() + ": entry '" + e.recording_id + "' has no 'rttm'", line_no);
    }
    if (!seen.insert(e.recording_id).second) {
      throw ParseError(path.string() + ": duplicate recording id '" + e.recording_id + "'", line_no);
    }
    if (!std::filesystem::exists(e.audio_path)) {
      throw InputError(path.string() + ": audio not found: " + e.audio_path.string());
    }
    if (!e.annotation_path.empty() && !std::filesystem::exists(e.annotation_path)) {
      throw InputError(path.string() + ": annotation not found: " + e.annotation_path.string());
    }
    out.push_back(std::move(e));
  }
  return out;
}

void write_manifest(const std::filesystem::path& path, const std::vector<ManifestEntry>& entries) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write manifest " + path.string());
  for (const auto& e : entries) {
    nlohmann::json j;
    j["audio"] = e.audio_path.string();
    if (!e.annotation_path.empty()) j["rttm"] = e.annotation_path.string();
    j["id"] = e.recording_id;
    out << j.dump() << '\n';
  }
}

Recording load_recording(const ManifestEntry& entry, int frame_ms) {
  Recording r;
  r.id = entry.recording_id;
  r.audio = read_wav(entry.audio_path);
  require_model_audio(r.audio);
  if (!entry.annotation_path.empty()) {
    auto all = read_rttm(entry.annotation_path);
    r.segments = segments_for(all, entry.recording_id);
    // Single-recording files whose internal id differs from the manifest id.
    if (r.segments.empty() && !all.empty() &&
        std::all_of(all.begin(), all.end(), [&](const auto& s) { return s.recording_id == all[0].recording_id; })) {
      r.segments = std::move(all);
    }
  }
  r.labels = frame_labels(r.segments, r.audio.duration_s(), frame_ms);
  return r;
}

std::vector<ChunkSample> chunk_recordings(const std::vector<Recording>& recordings, double hop_s,
                                          const ChunkGeometry& geometry) {
  std::vector<ChunkSample> out;
  for (const auto& r : recordings) {
    auto chunks = make_chunks(r.audio, r.labels, hop_s, r.id, geometry);
    std::move(chunks.begin(), chunks.end(), std::back_inserter(out));
  }
  return out;
}

MixedRecording mix_recordings(const Recording& a, double offset_a_s, const Recording& b, double offset_b_s,
                              double length_s, double gain_db, std::string id) {
  require_model_audio(a.audio);
  require_model_audio(b.audio);
  const auto sr = static_cast<double>(a.audio.sample_rate);
  const auto n = static_cast<std::size_t>(std::llround(length_s * sr));
  const auto sa = static_cast<std::size_t>(std::llround(offset_a_s * sr));
  const auto sb = static_cast<std::size_t>(std::llround(offset_b_s * sr));
  if (n == 0 || sa + n > a.audio.samples.size() || sb + n > b.audio.samples.size()) {
    throw InputError("mix crop of " + std::to_string(length_s) + " s does not fit '" + a.id + "' or '" + b.id + "'");
  }
  const double gain = std::pow(10.0, gain_db / 20.0);
  MixedRecording m;
  m.id = std::move(id);
  m.audio.sample_rate = a.audio.sample_rate;
  m.audio.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) m.audio.samples[i] = a.audio.samples[sa + i] + gain * b.audio.samples[sb + i];
  peak_normalize(m.audio.samples);

  auto take = [&](const Recording& r, double off) {
    for (const auto& s : r.segments) {
      const double on = std::max(s.onset_s, off) - off;
      const double end = std::min(s.offset_s(), off + length_s) - off;
      if (end - on > 1e-9) m.segments.push_back({m.id, r.id + ":" + s.speaker_id, on, end - on});
    }
  };
  take(a, offset_a_s);
  take(b, offset_b_s);
  std::sort(m.segments.begin(), m.segments.end(),
            [](const auto& x, const auto& y) { return x.onset_s < y.onset_s; });
  return m;
}

std::vector<MixedRecording> mix_corpus(const std::vector<Recording>& sources, const CorpusMixOptions& o,
                                       std::uint64_t seed) {
  if (sources.empty()) throw InputError("cannot mix an empty corpus");
  if (!(o.proportion >= 0.0)) throw ConfigError("proportion", "must be >= 0");
  if (!(o.crop_s > 0.0)) throw ConfigError("crop_s", "must be positive");
  double total = 0.0;
  for (const auto& r : sources) total += r.audio.duration_s();
  const double target = o.proportion * total;

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, sources.size() - 1);
  std::uniform_real_distribution<double> gain(-o.max_gain_db, o.max_gain_db);
  std::vector<MixedRecording> out;
  double made = 0.0;
  // Durations can shrink below the crop length, so bound the attempts.
  for (std::size_t attempt = 0; made < target && attempt < 100000; ++attempt) {
    const std::size_t ia = pick(rng);
    std::size_t ib = pick(rng);
    if (sources.size() > 1) {
      while (ib == ia) ib = pick(rng);
    }
    const Recording& a = sources[ia];
    const Recording& b = sources[ib];
    double len = std::min({o.crop_s, a.audio.duration_s(), b.audio.duration_s(), target - made + 0.03});
    len = std::floor(len / 0.03 + 1e-9) * 0.03;
    if (len < 0.03) continue;
    auto start = [&](const Recording& r) {
      const double slack = std::floor((r.audio.duration_s() - len) * 100.0 + 1e-9);
      if (slack <= 0.0) return 0.0;
      return std::uniform_int_distribution<long long>(0, static_cast<long long>(slack))(rng) / 100.0;
    };
    const double oa = start(a), ob = start(b);
    char id[32];
    std::snprintf(id, sizeof id, "mix%05zu", out.size());
    out.push_back(mix_recordings(a, oa, b, ob, len, gain(rng), id));
    made += len;
  }
  return out;
}

}  // namespace mexosd::data
