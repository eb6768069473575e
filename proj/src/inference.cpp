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

#include "mexosd/inference.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <ostream>
#include <thread>

#include "json.hpp"
#include "mexosd/error.hpp"

namespace mexosd::inference {

const char* mode_name(Mode m) { return m == Mode::normal ? "normal" : "exiting"; }

Mode parse_mode(std::string_view name) {
  if (name == "normal") return Mode::normal;
  if (name == "exiting") return Mode::exiting;
  throw ConfigError("mode", "expected normal or exiting, got '" + std::string(name) + "'");
}

void InferenceConfig::validate() const {
  if (!(gamma >= 0.0) || std::isnan(gamma)) throw ConfigError("gamma", "must be >= 0");
  data::hop_frames(hop_s);
  if (!(window_s > 0.0)) throw ConfigError("window_s", "must be positive");
  if (median_filter_frames < 0 || (median_filter_frames > 1 && median_filter_frames % 2 == 0)) {
    throw ConfigError("median_filter_frames", "must be 0 or an odd window");
  }
}

std::vector<FrameVote> select_exits(const ExitOutputs& outputs, std::size_t b, Mode mode, double gamma) {
  const std::size_t m = outputs.num_exits();
  if (m == 0) throw ShapeError("no exits");
  const std::size_t frames = outputs.logits[0].dim(1);
  const std::size_t k = outputs.logits[0].dim(2);
  if (b >= outputs.logits[0].dim(0)) throw ShapeError("batch index out of range");

  std::vector<Tensor> probs;
  const std::size_t first = mode == Mode::normal ? m - 1 : 0;
  probs.resize(m);
  for (std::size_t i = first; i < m; ++i) probs[i] = softmax_last(outputs.logits[i]);

  std::vector<FrameVote> votes(frames);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t i = first; i < m; ++i) {
      const double* row = probs[i].data() + (b * frames + t) * k;
      const auto arg = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      if (i + 1 == m || row[arg] > gamma) {
        votes[t] = {static_cast<int>(arg), static_cast<int>(i + 1), row[arg]};
        break;
      }
    }
  }
  return votes;
}

std::vector<FrameVote> predict_chunk(const MultiExitNet& model, std::span<const double> waveform,
                                     const InferenceConfig& config) {
  Tensor x({1, waveform.size()}, std::vector<double>(waveform.begin(), waveform.end()));
  return select_exits(model.forward(x), 0, config.mode, config.gamma);
}

int majority_vote(std::span<const int> labels) {
  if (labels.empty()) throw InputError("majority vote over no labels");
  std::array<int, data::kNumClasses> counts{};
  for (int y : labels) {
    if (y < 0 || y >= data::kNumClasses) throw InputError("vote label " + std::to_string(y) + " out of range");
    ++counts[static_cast<std::size_t>(y)];
  }
  int best = 0;
  for (int c = 1; c < data::kNumClasses; ++c) {
    if (counts[static_cast<std::size_t>(c)] >= counts[static_cast<std::size_t>(best)]) best = c;
  }
  return best;
}

int majority_exit(std::span<const FrameVote> votes) {
  if (votes.empty()) throw InputError("majority exit over no votes");
  int hi = 0;
  for (const auto& v : votes) hi = std::max(hi, v.exit);
  std::vector<int> counts(static_cast<std::size_t>(hi) + 1, 0);
  for (const auto& v : votes) ++counts[static_cast<std::size_t>(v.exit)];
  int best = 1;
  for (int e = 1; e <= hi; ++e) {
    if (counts[static_cast<std::size_t>(e)] > counts[static_cast<std::size_t>(best)]) best = e;
  }
  return best;
}

namespace {

void median_filter(std::vector<FramePrediction>& preds, int window) {
  if (window <= 1 || preds.empty()) return;
  const auto half = static_cast<std::ptrdiff_t>(window / 2);
  const auto n = static_cast<std::ptrdiff_t>(preds.size());
  std::vector<int> src(preds.size()), buf;
  for (std::size_t i = 0; i < preds.size(); ++i) src[i] = preds[i].final_label;
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    buf.clear();
    for (std::ptrdiff_t j = std::max<std::ptrdiff_t>(0, i - half); j <= std::min(n - 1, i + half); ++j) {
      buf.push_back(src[static_cast<std::size_t>(j)]);
    }
    std::nth_element(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>(buf.size() / 2), buf.end());
    preds[static_cast<std::size_t>(i)].final_label = buf[buf.size() / 2];
  }
}

}  // namespace

std::vector<FramePrediction> predict_recording(const MultiExitNet& model, const Audio& audio,
                                               const InferenceConfig& config, std::size_t batch_size) {
  config.validate();
  require_model_audio(audio, model.config().sample_rate_hz);
  data::ChunkGeometry geo;
  geo.sample_rate = model.config().sample_rate_hz;
  geo.frames_per_chunk = model.config().frames_per_chunk;
  if (std::abs(config.window_s - geo.window_s()) > 1e-9) {
    throw ConfigError("window_s", "model expects " + std::to_string(geo.window_s()) + " s windows");
  }

  data::FrameLabelSequence no_labels;
  no_labels.frame_ms = geo.frame_ms;
  const auto chunks = data::make_chunks(audio, no_labels, config.hop_s, {}, geo);
  const std::size_t total = data::frame_count(audio.duration_s(), geo.frame_ms);

  std::vector<FramePrediction> preds(total);
  for (std::size_t j = 0; j < total; ++j) preds[j].frame_index = j;

  const std::size_t samples = static_cast<std::size_t>(geo.chunk_samples());
  for (std::size_t start = 0; start < chunks.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, chunks.size() - start);
    Tensor x({n, samples});
    for (std::size_t i = 0; i < n; ++i) {
      std::copy(chunks[start + i].waveform.begin(), chunks[start + i].waveform.end(), x.data() + i * samples);
    }
    const ExitOutputs out = model.forward(x);
    for (std::size_t i = 0; i < n; ++i) {
      const auto votes = select_exits(out, i, config.mode, config.gamma);
      const std::size_t off = chunks[start + i].offset_frame;
      for (std::size_t t = 0; t < votes.size() && off + t < total; ++t) preds[off + t].votes.push_back(votes[t]);
    }
  }

  std::vector<int> labels;
  for (auto& p : preds) {
    labels.clear();
    for (const auto& v : p.votes) labels.push_back(v.label);
    p.final_label = majority_vote(labels);
    p.majority_exit = majority_exit(p.votes);
    for (const auto& v : p.votes) {
      if (v.label == p.final_label) p.confidence = std::max(p.confidence, v.confidence);
    }
  }
  median_filter(preds, config.median_filter_frames);
  return preds;
}

std::vector<std::vector<FramePrediction>> predict_recordings(const MultiExitNet& model,
                                                             std::span<const Audio> recordings,
                                                             const InferenceConfig& config, std::size_t jobs) {
  std::vector<std::vector<FramePrediction>> out(recordings.size());
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(recordings.size(), 1));
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < recordings.size();) {
      try {
        out[i] = predict_recording(model, recordings[i], config);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

data::FrameLabelSequence fused_labels(std::span<const FramePrediction> predictions, int frame_ms) {
  data::FrameLabelSequence s;
  s.frame_ms = frame_ms;
  for (const auto& p : predictions) s.labels.push_back(p.final_label);
  return s;
}

SegmentOutput frames_to_segments(const data::FrameLabelSequence& labels) {
  SegmentOutput out;
  const double fs = labels.frame_s();
  auto runs = [&](auto positive, std::vector<Segment>& dst) {
    const std::size_t n = labels.labels.size();
    for (std::size_t i = 0; i < n;) {
      if (!positive(labels.labels[i])) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < n && positive(labels.labels[j])) ++j;
      dst.push_back({static_cast<double>(i) * fs, static_cast<double>(j) * fs});
      i = j;
    }
  };
  runs([](int y) { return y >= 1; }, out.vad);
  runs([](int y) { return y == 2; }, out.osd);
  return out;
}

std::vector<SegmentAnnotation> to_annotations(const SegmentOutput& segments, const std::string& recording_id) {
  std::vector<SegmentAnnotation> out;
  for (const auto& s : segments.vad) out.push_back({recording_id, kSpeechSpeaker, s.onset_s, s.offset_s - s.onset_s});
  for (const auto& s : segments.osd) out.push_back({recording_id, kOverlapSpeaker, s.onset_s, s.offset_s - s.onset_s});
  return out;
}

bool is_detection_output(std::span<const SegmentAnnotation> segments) {
  return !segments.empty() && std::all_of(segments.begin(), segments.end(), [](const auto& s) {
    return s.speaker_id == kSpeechSpeaker || s.speaker_id == kOverlapSpeaker;
  });
}

data::FrameLabelSequence detection_labels(const std::vector<SegmentAnnotation>& segments, double duration_s,
                                          int frame_ms) {
  std::vector<SegmentAnnotation> speech, overlap;
  for (const auto& s : segments) {
    if (s.speaker_id == kSpeechSpeaker) speech.push_back(s);
    else if (s.speaker_id == kOverlapSpeaker) overlap.push_back(s);
    else throw InputError("detection RTTM has unexpected speaker '" + s.speaker_id + "'");
  }
  auto vad = data::frame_labels(speech, duration_s, frame_ms);
  const auto osd = data::frame_labels(overlap, duration_s, frame_ms);
  for (std::size_t j = 0; j < vad.labels.size(); ++j) {
    if (osd.labels[j] >= 1) vad.labels[j] = 2;
  }
  return vad;
}

void write_frame_dump(std::ostream& out, std::span<const FramePrediction> predictions, int frame_ms) {
  for (const auto& p : predictions) {
    const double t = std::round(static_cast<double>(p.frame_index) * frame_ms) / 1000.0;
    nlohmann::json j = {{"t", t}, {"label", p.final_label}, {"exit", p.majority_exit}, {"confidence", p.confidence}};
    out << j.dump() << '\n';
  }
}

}  // namespace mexosd::inference
