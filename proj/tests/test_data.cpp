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

#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "mexosd/data.hpp"
#include "mexosd/error.hpp"
#include "mexosd/rttm.hpp"
#include "mexosd/synthetic.hpp"
#include "mexosd/wav.hpp"
#include "support.hpp"

using namespace mexosd;
using namespace mexosd::data;

namespace {

SegmentAnnotation seg(std::string spk, double on, double dur) { return {"rec", std::move(spk), on, dur}; }

Audio silence(double seconds) {
  Audio a;
  a.samples.assign(static_cast<std::size_t>(std::llround(seconds * 16000)), 0.0);
  return a;
}

std::vector<SegmentAnnotation> random_segments(std::mt19937_64& rng, double duration, int speakers, int count) {
  std::uniform_real_distribution<double> on(0.0, duration), len(0.01, 2.0);
  std::uniform_int_distribution<int> spk(0, speakers - 1);
  std::vector<SegmentAnnotation> out;
  for (int i = 0; i < count; ++i) out.push_back(seg("s" + std::to_string(spk(rng)), on(rng), len(rng)));
  return out;
}

}  // namespace

TEST_CASE("RTTM parsing") {
  const auto one = parse_rttm("SPEAKER rec1 1 0.00 1.50 <NA> <NA> spkA <NA> <NA>\n");
  REQUIRE(one.size() == 1);
  CHECK(one[0] == SegmentAnnotation{"rec1", "spkA", 0.0, 1.5});
  CHECK(parse_rttm("").empty());

  const auto mixed = parse_rttm(
      "SPKR-INFO rec1 1 <NA> <NA> <NA> unknown spkA <NA> <NA>\n"
      "SPEAKER rec1 1 2.5 0.75 <NA> <NA> spkB <NA> <NA>\n"
      "\n"
      "SPEAKER\trec1\t1\t0.25\t1.00\t<NA>\t<NA>\tspkA\t<NA>\t<NA>\t<NA>\n");
  REQUIRE(mixed.size() == 2);
  CHECK(mixed[0].speaker_id == "spkB");
  CHECK(mixed[1].onset_s == 0.25);

  try {
    parse_rttm("SPEAKER r 1 0.0 1.0 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 0.5 -1.0 <NA> <NA> b <NA> <NA>\n");
    FAIL("negative duration accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  CHECK_THROWS_AS(parse_rttm("SPEAKER r 1 zero 1.0 <NA> <NA> a <NA> <NA>"), ParseError);
  CHECK_THROWS_AS(parse_rttm("SPEAKER r 1 0.0"), ParseError);
}

TEST_CASE("RTTM writing uses two decimals and round-trips") {
  const std::vector<SegmentAnnotation> segs{{"r", "a", 0.0, 1.5}, {"r", "b", 0.27, 0.06}};
  const std::string text = format_rttm(segs);
  CHECK(text == "SPEAKER r 1 0.00 1.50 <NA> <NA> a <NA> <NA>\nSPEAKER r 1 0.27 0.06 <NA> <NA> b <NA> <NA>\n");
  CHECK(parse_rttm(text) == segs);
}

TEST_CASE("frame labels follow the midpoint rule") {
  CHECK(frame_labels({}, 0.09).labels == std::vector<int>{0, 0, 0});
  CHECK(frame_labels({seg("a", 0.0, 0.09)}, 0.09).labels == std::vector<int>{1, 1, 1});
  CHECK(frame_labels({seg("a", 0.03, 0.03), seg("b", 0.03, 0.03)}, 0.09).labels == std::vector<int>{0, 2, 0});
  CHECK(frame_labels({seg("a", 0, 0.09), seg("b", 0, 0.09), seg("c", 0, 0.09)}, 0.09).labels ==
        std::vector<int>{2, 2, 2});
  // Midpoint of frame 0 is 0.015: a segment starting at 0.016 misses it, one ending at 0.015 too.
  CHECK(frame_labels({seg("a", 0.016, 0.05)}, 0.09).labels == std::vector<int>{0, 1, 0});
  CHECK(frame_labels({seg("a", 0.0, 0.015)}, 0.09).labels == std::vector<int>{0, 0, 0});
  // Two segments of one speaker never make an overlap.
  CHECK(frame_labels({seg("a", 0, 0.06), seg("a", 0.03, 0.06)}, 0.09).labels == std::vector<int>{1, 1, 1});
}

TEST_CASE("frame count is the ceiling of duration over 30 ms") {
  CHECK(frame_count(0.0) == 0);
  CHECK(frame_count(0.03) == 1);
  CHECK(frame_count(0.031) == 2);
  CHECK(frame_count(1.5) == 50);
  CHECK(frame_count(3.0) == 100);
  CHECK(frame_labels({}, 1.0).labels.size() == 34);
}

TEST_CASE("segments past the end are clipped and counted") {
  std::size_t clipped = 0;
  const auto l = frame_labels({seg("a", 0.03, 10.0)}, 0.09, 30, &clipped);
  CHECK(clipped == 1);
  CHECK(l.labels == std::vector<int>{0, 1, 1});
}

TEST_CASE("frame labelling properties") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    auto segs = random_segments(rng, 6.0, 4, 6);
    const auto a = frame_labels(segs, 6.0);
    CHECK(frame_labels(segs, 6.0) == a);
    for (int y : a.labels) CHECK((y >= 0 && y <= 2));
    segs.push_back(random_segments(rng, 6.0, 5, 1)[0]);
    const auto b = frame_labels(segs, 6.0);
    for (std::size_t j = 0; j < a.labels.size(); ++j) CHECK(b.labels[j] >= a.labels[j]);
  }
}

TEST_CASE("hop must be a positive multiple of the frame") {
  CHECK(hop_frames(0.3) == 10);
  CHECK(hop_frames(0.03) == 1);
  CHECK_THROWS_AS(hop_frames(0.31), ConfigError);
  CHECK_THROWS_AS(hop_frames(0.0), ConfigError);
  CHECK_THROWS_AS(hop_frames(-0.3), ConfigError);
}

TEST_CASE("chunking examples") {
  const FrameLabelSequence none;
  CHECK(make_chunks(silence(1.5), none, 0.3).size() == 1);
  CHECK(make_chunks(silence(1.5), none, 0.75).size() == 1);

  const auto c3 = make_chunks(silence(3.0), none, 0.3);
  REQUIRE(c3.size() == 6);
  for (std::size_t i = 0; i < 6; ++i) CHECK(c3[i].offset_s == doctest::Approx(0.3 * static_cast<double>(i)));

  Audio one = silence(1.0);
  for (auto& v : one.samples) v = 0.5;
  const auto l1 = frame_labels({seg("a", 0.0, 1.0)}, 1.0);
  const auto c1 = make_chunks(one, l1, 0.3);
  REQUIRE(c1.size() == 1);
  CHECK(c1[0].waveform.size() == 24000);
  CHECK(c1[0].labels.size() == 50);
  CHECK(c1[0].waveform[15999] == 0.5);
  CHECK(c1[0].waveform[16000] == 0.0);
  // 1.0 s spans 34 frames; frame 33's midpoint (1.005 s) lies past the segment.
  CHECK(c1[0].labels[32] == 1);
  CHECK(c1[0].labels[33] == 0);
  CHECK(c1[0].labels[49] == 0);
}

TEST_CASE("the last window is aligned to the recording end") {
  Audio a = silence(2.0);
  for (std::size_t i = 0; i < a.samples.size(); ++i) a.samples[i] = static_cast<double>(i) / 1e6;
  const auto chunks = make_chunks(a, frame_labels({}, 2.0), 0.3);
  REQUIRE(chunks.size() >= 2);
  CHECK(chunks.back().offset_frame + 50 == frame_count(2.0));
  CHECK(chunks.back().waveform.front() == a.samples[chunks.back().offset_frame * 480]);
}

TEST_CASE("chunks carry the labels of their span") {
  std::mt19937_64 rng(5);
  const auto segs = random_segments(rng, 4.2, 3, 8);
  const auto labels = frame_labels(segs, 4.2);
  for (const auto& c : make_chunks(silence(4.2), labels, 0.3)) {
    for (std::size_t j = 0; j < 50; ++j) CHECK(c.labels[j] == labels.labels[c.offset_frame + j]);
  }
}

TEST_CASE("chunk coverage: every frame at least once, at most ceil(window / hop) times") {
  for (std::size_t hop = 1; hop <= 50; ++hop) {
    // With hop == window an end-aligned last window must overlap its neighbour.
    const std::size_t bound = hop == 50 ? 2 : (50 + hop - 1) / hop;
    for (std::size_t total = 1; total <= 300; ++total) {
      CAPTURE(hop);
      CAPTURE(total);
      std::vector<std::size_t> cover(total, 0);
      for (std::size_t off : chunk_offsets(total, 50, hop)) {
        for (std::size_t j = off; j < std::min(total, off + 50); ++j) ++cover[j];
      }
      const auto [lo, hi] = std::minmax_element(cover.begin(), cover.end());
      REQUIRE(*lo >= 1);
      REQUIRE(*hi <= bound);
    }
  }
}

TEST_CASE("chunking rejects audio outside the contract") {
  Audio stereo = silence(1.5);
  stereo.channels = 2;
  CHECK_THROWS_AS(make_chunks(stereo, {}, 0.3), InputError);
  Audio fast = silence(1.5);
  fast.sample_rate = 8000;
  CHECK_THROWS_AS(make_chunks(fast, {}, 0.3), InputError);
}

TEST_CASE("mixing merges labels and normalizes the peak") {
  CHECK(merge_labels(std::vector<int>{1, 1, 0}, std::vector<int>{0, 1, 1}) == std::vector<int>{1, 2, 1});
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> u(0, 2);
  for (int t = 0; t < 100; ++t) {
    std::vector<int> a(20), b(20);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    CHECK(merge_labels(a, b) == merge_labels(b, a));
    CHECK(merge_labels(a, std::vector<int>(20, 0)) == a);
  }

  std::vector<double> wa{0.5, -0.9, 0.2}, wb{0.6, -0.6, 0.0};
  const std::vector<int> la{1, 0, 1}, lb{0, 0, 0};
  const auto m = synth_mix(wa, la, wb, lb, 0.0);
  CHECK(m.labels == la);
  CHECK(std::abs(m.waveform[1]) == doctest::Approx(0.99));
  CHECK(m.waveform[0] == doctest::Approx(1.1 * 0.99 / 1.5));

  const auto muted = synth_mix(wa, la, wb, lb, -INFINITY);
  CHECK(muted.waveform == wa);  // peak 0.9 is already below 0.99

  CHECK_THROWS_AS(synth_mix(wa, la, std::vector<double>{0.0}, std::vector<int>{0}, 0.0), InputError);
}

TEST_CASE("augmentation replaces the waveform and keeps the labels") {
  ChunkSample c;
  c.waveform.assign(24000, 0.1);
  c.labels.assign(50, 1);
  c.labels[3] = 2;
  const auto same = apply_augmentation(c, [](std::span<const double> w) { return std::vector<double>(w.begin(), w.end()); });
  CHECK(same.waveform == c.waveform);
  CHECK(same.labels == c.labels);

  std::mt19937_64 rng(1);
  const auto noisy = apply_augmentation(c, [&](std::span<const double> w) {
    std::normal_distribution<double> n(0.0, 0.01);
    std::vector<double> out(w.begin(), w.end());
    for (auto& v : out) v += n(rng);
    return out;
  });
  CHECK(noisy.labels == c.labels);
  CHECK(noisy.waveform != c.waveform);
  CHECK_THROWS_AS(apply_augmentation(c, [](std::span<const double> w) {
    return std::vector<double>(w.begin(), w.end() - 1);
  }), InputError);
}

TEST_CASE("label histogram") {
  ChunkSample a;
  a.labels.assign(50, 1);
  std::vector<ChunkSample> two{a, a};
  CHECK(label_histogram(two) == std::vector<std::uint64_t>{0, 100, 0});
  CHECK(label_histogram(std::span<const ChunkSample>{}) == std::vector<std::uint64_t>{0, 0, 0});
}

TEST_CASE("WAV round trip and contract") {
  testing::TempDir dir;
  Audio a = silence(0.5);
  for (std::size_t i = 0; i < a.samples.size(); ++i) a.samples[i] = std::sin(0.01 * static_cast<double>(i)) * 0.5;
  write_wav(dir / "a.wav", a);
  const Audio b = read_wav(dir / "a.wav");
  CHECK(b.sample_rate == 16000);
  CHECK(b.channels == 1);
  REQUIRE(b.samples.size() == a.samples.size());
  for (std::size_t i = 0; i < a.samples.size(); ++i) CHECK(std::abs(b.samples[i] - a.samples[i]) <= 1.0 / 32768.0);
  // Quantized samples survive a second pass bit-exactly.
  write_wav(dir / "b.wav", b);
  CHECK(read_wav(dir / "b.wav").samples == b.samples);

  std::ofstream(dir / "junk.wav") << "not a wave file";
  CHECK_THROWS_AS(read_wav(dir / "junk.wav"), InputError);
  CHECK_THROWS_AS(read_wav(dir / "missing.wav"), InputError);
}

TEST_CASE("manifests resolve relative paths and reject duplicates") {
  testing::TempDir dir;
  write_wav(dir / "a.wav", silence(0.3));
  write_rttm(dir / "a.rttm", {{"a", "x", 0.0, 0.12}});
  std::ofstream(dir / "m.jsonl") << R"({"audio": "a.wav", "rttm": "a.rttm", "id": "a"})" << "\n\n";
  const auto entries = read_manifest(dir / "m.jsonl");
  REQUIRE(entries.size() == 1);
  CHECK(entries[0].audio_path == dir / "a.wav");
  const auto rec = load_recording(entries[0]);
  CHECK(rec.labels.labels == std::vector<int>{1, 1, 1, 1, 0, 0, 0, 0, 0, 0});

  std::ofstream(dir / "dup.jsonl") << R"({"audio": "a.wav", "rttm": "a.rttm", "id": "a"})" << "\n"
                                   << R"({"audio": "a.wav", "rttm": "a.rttm", "id": "a"})" << "\n";
  try {
    read_manifest(dir / "dup.jsonl");
    FAIL("duplicate accepted");
  } catch (const ParseError& e) {
    CHECK(e.line() == 2);
  }
  std::ofstream(dir / "norttm.jsonl") << R"({"audio": "a.wav", "id": "a"})" << "\n";
  CHECK_THROWS_AS(read_manifest(dir / "norttm.jsonl"), ParseError);
  CHECK(read_manifest(dir / "norttm.jsonl", false).size() == 1);
  std::ofstream(dir / "gone.jsonl") << R"({"audio": "nope.wav", "id": "a"})" << "\n";
  CHECK_THROWS_AS(read_manifest(dir / "gone.jsonl", false), InputError);

  write_manifest(dir / "out.jsonl", entries);
  CHECK(read_manifest(dir / "out.jsonl")[0].recording_id == "a");
}

TEST_CASE("recording mixtures clip, shift and prefix annotations") {
  Recording a{"ra", silence(3.0), {{"ra", "x", 0.5, 1.0}, {"ra", "y", 2.5, 0.5}}, {}};
  Recording b{"rb", silence(3.0), {{"rb", "x", 0.7, 1.0}}, {}};
  for (auto& v : a.audio.samples) v = 0.3;
  for (auto& v : b.audio.samples) v = 0.3;
  const auto m = mix_recordings(a, 1.0, b, 0.5, 1.5, 0.0, "m");
  CHECK(m.audio.samples.size() == 24000);
  CHECK(m.audio.samples[0] == doctest::Approx(0.6));
  REQUIRE(m.segments.size() == 2);
  CHECK(m.segments[0].speaker_id == "ra:x");
  CHECK(m.segments[0].onset_s == doctest::Approx(0.0));
  CHECK(m.segments[0].duration_s == doctest::Approx(0.5));
  CHECK(m.segments[1].speaker_id == "rb:x");
  CHECK(m.segments[1].onset_s == doctest::Approx(0.2));
  CHECK(m.segments[1].duration_s == doctest::Approx(1.0));
  const auto labels = frame_labels(m.segments, 1.5);
  CHECK(labels.labels[5] == 1);
  CHECK(labels.labels[10] == 2);
  CHECK(labels.labels[30] == 1);
  CHECK(labels.labels[45] == 0);
  CHECK_THROWS_AS(mix_recordings(a, 2.0, b, 0.0, 1.5, 0.0, "m"), InputError);
}

TEST_CASE("corpus mixing reaches the requested proportion deterministically") {
  std::vector<Recording> src;
  for (int i = 0; i < 3; ++i) {
    auto p = synthetic::generate_recording("r" + std::to_string(i), {.duration_s = 10.0}, 100 + i);
    src.push_back({p.id, p.audio, p.segments, frame_labels(p.segments, p.audio.duration_s())});
  }
  CorpusMixOptions o;
  o.proportion = 0.4;
  o.crop_s = 3.0;
  const auto a = mix_corpus(src, o, 7);
  const auto b = mix_corpus(src, o, 7);
  double total = 0.0;
  for (const auto& m : a) {
    total += m.audio.duration_s();
    double peak = 0.0;
    for (double v : m.audio.samples) peak = std::max(peak, std::abs(v));
    CHECK(peak <= 0.99 + 1e-12);
  }
  CHECK(total >= 12.0 - 1e-9);
  CHECK(total <= 12.0 + 3.0);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].audio.samples == b[i].audio.samples);
  CHECK(mix_corpus(src, {.proportion = 0.0}, 1).empty());
}

TEST_CASE("synthetic proxies are deterministic, on the 10 ms grid and contain overlap") {
  const auto a = synthetic::generate_recording("p", {.duration_s = 30.0}, 9);
  const auto b = synthetic::generate_recording("p", {.duration_s = 30.0}, 9);
  CHECK(a.audio.samples == b.audio.samples);
  CHECK(a.segments == b.segments);
  CHECK(a.audio.samples.size() == 480000);
  for (const auto& s : a.segments) {
    CHECK(std::abs(s.onset_s * 100 - std::round(s.onset_s * 100)) < 1e-6);
    CHECK(std::abs(s.duration_s * 100 - std::round(s.duration_s * 100)) < 1e-6);
    CHECK(s.offset_s() <= 30.0 + 1e-9);
  }
  const auto h = frame_labels(a.segments, 30.0);
  const auto counts = std::vector<std::uint64_t>{
      static_cast<std::uint64_t>(std::count(h.labels.begin(), h.labels.end(), 0)),
      static_cast<std::uint64_t>(std::count(h.labels.begin(), h.labels.end(), 1)),
      static_cast<std::uint64_t>(std::count(h.labels.begin(), h.labels.end(), 2))};
  for (auto c : counts) CHECK(c > 0);
}
