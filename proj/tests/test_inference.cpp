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
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mexosd/error.hpp"
#include "mexosd/inference.hpp"
#include "support.hpp"

using namespace mexosd;
using namespace mexosd::inference;
using testing::constant_model;
using testing::toy_config;

namespace {

// Frequency count then the largest class among the most frequent.
int brute_force_vote(const std::vector<int>& labels) {
  std::map<int, int> freq;
  for (int y : labels) ++freq[y];
  int best_count = 0;
  for (auto [y, n] : freq) best_count = std::max(best_count, n);
  int best = -1;
  for (auto [y, n] : freq) {
    if (n == best_count) best = std::max(best, y);
  }
  return best;
}

Audio noise_audio(double seconds, std::uint64_t seed) {
  Audio a;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.1);
  a.samples.resize(static_cast<std::size_t>(std::llround(seconds * 16000)));
  for (auto& s : a.samples) s = n(rng);
  return a;
}

// One batch item, `frames` frames, logits built from per-exit probability rows.
ExitOutputs from_probabilities(const std::vector<std::vector<std::array<double, 3>>>& probs) {
  ExitOutputs out;
  for (const auto& exit : probs) {
    Tensor z({1, exit.size(), 3});
    for (std::size_t t = 0; t < exit.size(); ++t) {
      for (std::size_t k = 0; k < 3; ++k) z[t * 3 + k] = std::log(exit[t][k]);
    }
    out.logits.push_back(z);
    out.features.push_back(Tensor({1, exit.size(), 2}));
  }
  return out;
}

ExitOutputs random_outputs(std::size_t frames, std::uint64_t seed, double scale) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  ExitOutputs out;
  for (int e = 0; e < 3; ++e) {
    Tensor z({1, frames, 3});
    for (auto& v : z.values()) v = n(rng);
    out.logits.push_back(z);
    out.features.push_back(Tensor({1, frames, 2}));
  }
  return out;
}

data::FrameLabelSequence seq(std::vector<int> labels) { return {30, std::move(labels)}; }

}  // namespace

TEST_CASE("majority vote examples and tie rule") {
  CHECK(majority_vote(std::vector<int>{2, 2, 1, 0, 2}) == 2);
  CHECK(majority_vote(std::vector<int>{1, 2}) == 2);
  CHECK(majority_vote(std::vector<int>{0, 1}) == 1);
  CHECK(majority_vote(std::vector<int>{0, 0, 1}) == 0);
  CHECK(majority_vote(std::vector<int>{0}) == 0);
  CHECK_THROWS_AS(majority_vote(std::vector<int>{}), InputError);
  CHECK_THROWS_AS(majority_vote(std::vector<int>{3}), InputError);
}

TEST_CASE("majority vote agrees with a frequency count on every tuple up to length 5") {
  std::size_t cases = 0;
  for (int len = 1; len <= 5; ++len) {
    int total = 1;
    for (int i = 0; i < len; ++i) total *= 3;
    for (int code = 0; code < total; ++code) {
      std::vector<int> v;
      for (int i = 0, c = code; i < len; ++i, c /= 3) v.push_back(c % 3);
      REQUIRE(majority_vote(v) == brute_force_vote(v));
      ++cases;
    }
  }
  CHECK(cases == 3 + 9 + 27 + 81 + 243);
}

TEST_CASE("majority exit prefers the earlier exit on ties") {
  std::vector<FrameVote> v{{0, 3, 0.5}, {0, 1, 0.5}};
  CHECK(majority_exit(v) == 1);
  v.push_back({1, 3, 0.5});
  CHECK(majority_exit(v) == 3);
  CHECK_THROWS_AS(majority_exit(std::vector<FrameVote>{}), InputError);
}

TEST_CASE("exiting mode takes the first confident exit") {
  const auto out = from_probabilities({
      {{0.95, 0.03, 0.02}, {0.85, 0.10, 0.05}, {0.40, 0.30, 0.30}},
      {{0.10, 0.10, 0.80}, {0.04, 0.92, 0.04}, {0.30, 0.40, 0.30}},
      {{0.10, 0.10, 0.80}, {0.10, 0.10, 0.80}, {0.20, 0.20, 0.60}},
  });
  const auto v = select_exits(out, 0, Mode::exiting, 0.9);
  CHECK(v[0].label == 0);
  CHECK(v[0].exit == 1);
  CHECK(v[0].confidence == doctest::Approx(0.95));
  CHECK(v[1].label == 1);
  CHECK(v[1].exit == 2);
  CHECK(v[2].label == 2);
  CHECK(v[2].exit == 3);
  CHECK(v[2].confidence == doctest::Approx(0.60));

  const auto n = select_exits(out, 0, Mode::normal, 0.9);
  for (const auto& f : n) CHECK(f.exit == 3);
  CHECK(n[0].label == 2);
}

TEST_CASE("the threshold comparison is strict") {
  const auto out = from_probabilities({{{0.95, 0.03, 0.02}}, {{0.95, 0.03, 0.02}}, {{0.2, 0.7, 0.1}}});
  const double p = softmax_last(out.logits[0])[0];
  CHECK(select_exits(out, 0, Mode::exiting, p)[0].exit == 3);
  CHECK(select_exits(out, 0, Mode::exiting, std::nextafter(p, 0.0))[0].exit == 1);
}

TEST_CASE("unreachable and always-met thresholds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto out = random_outputs(50, seed, 3.0);
    const auto normal = select_exits(out, 0, Mode::normal, 0.9);
    CHECK(select_exits(out, 0, Mode::exiting, 1.1) == normal);
    CHECK(select_exits(out, 0, Mode::exiting, 1.0) == normal);
    for (const auto& f : select_exits(out, 0, Mode::exiting, 0.0)) CHECK(f.exit == 1);
  }
}

TEST_CASE("lowering gamma never moves a frame to a later exit") {
  const std::vector<double> gammas{1.1, 0.99, 0.95, 0.9, 0.8, 0.7, 0.5, 0.34, 0.0};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto out = random_outputs(200, seed, 2.0);
    auto prev = select_exits(out, 0, Mode::exiting, gammas[0]);
    for (std::size_t g = 1; g < gammas.size(); ++g) {
      const auto cur = select_exits(out, 0, Mode::exiting, gammas[g]);
      for (std::size_t t = 0; t < cur.size(); ++t) REQUIRE(cur[t].exit <= prev[t].exit);
      prev = cur;
    }
  }
}

TEST_CASE("a window-length recording gets exactly one vote per frame") {
  const auto model = MultiExitNet::build(toy_config(), 2);
  const auto preds = predict_recording(model, noise_audio(1.5, 1), {});
  REQUIRE(preds.size() == 50);
  for (const auto& p : preds) {
    REQUIRE(p.votes.size() == 1);
    CHECK(p.final_label == p.votes[0].label);
    CHECK(p.majority_exit == 3);
    CHECK(p.confidence == p.votes[0].confidence);
  }
}

TEST_CASE("a 3 s recording at 0.3 s hop gives interior frames 5 votes") {
  const auto model = MultiExitNet::build(toy_config(), 3);
  const auto preds = predict_recording(model, noise_audio(3.0, 2), {});
  REQUIRE(preds.size() == 100);
  std::size_t five = 0;
  for (const auto& p : preds) {
    CHECK(p.votes.size() >= 1);
    CHECK(p.votes.size() <= 5);
    five += p.votes.size() == 5;
    std::vector<int> labels;
    for (const auto& v : p.votes) labels.push_back(v.label);
    CHECK(p.final_label == majority_vote(labels));
  }
  for (std::size_t j = 40; j < 60; ++j) CHECK(preds[j].votes.size() == 5);
  CHECK(five >= 20);
}

TEST_CASE("a constant model yields constant labels at any hop") {
  const auto model = constant_model(toy_config(), 1);
  const auto audio = noise_audio(4.2, 3);
  for (double hop : {0.03, 0.3, 0.75, 1.5}) {
    InferenceConfig cfg;
    cfg.hop_s = hop;
    for (const auto& p : predict_recording(model, audio, cfg)) REQUIRE(p.final_label == 1);
  }
}

TEST_CASE("exiting with gamma >= 1 matches normal mode on whole recordings") {
  const auto model = MultiExitNet::build(toy_config(true), 4);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const auto audio = noise_audio(2.0 + 0.37 * static_cast<double>(seed), seed + 10);
    const auto normal = fused_labels(predict_recording(model, audio, {}));
    for (double g : {1.0, 1.1}) {
      InferenceConfig cfg;
      cfg.mode = Mode::exiting;
      cfg.gamma = g;
      CHECK(fused_labels(predict_recording(model, audio, cfg)) == normal);
    }
    InferenceConfig zero;
    zero.mode = Mode::exiting;
    zero.gamma = 0.0;
    for (const auto& p : predict_recording(model, audio, zero)) {
      for (const auto& v : p.votes) REQUIRE(v.exit == 1);
    }
  }
}

TEST_CASE("parallel prediction keeps input order and equals sequential") {
  const auto model = MultiExitNet::build(toy_config(), 5);
  std::vector<Audio> recs{noise_audio(1.6, 1), noise_audio(2.5, 2), noise_audio(1.5, 3)};
  const auto seq_out = predict_recordings(model, recs, {}, 1);
  const auto par_out = predict_recordings(model, recs, {}, 3);
  REQUIRE(par_out.size() == 3);
  for (std::size_t r = 0; r < 3; ++r) {
    REQUIRE(par_out[r].size() == seq_out[r].size());
    for (std::size_t j = 0; j < par_out[r].size(); ++j) CHECK(par_out[r][j].votes == seq_out[r][j].votes);
  }
  recs[1].channels = 2;
  CHECK_THROWS_AS(predict_recordings(model, recs, {}, 2), InputError);
}

TEST_CASE("inference config validation") {
  CHECK(parse_mode("normal") == Mode::normal);
  CHECK(parse_mode("exiting") == Mode::exiting);
  CHECK_THROWS_AS(parse_mode("budget"), ConfigError);
  InferenceConfig c;
  c.hop_s = 0.31;
  CHECK_THROWS(c.validate());
  c.hop_s = 0.3;
  c.gamma = -0.1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.gamma = 0.9;
  c.median_filter_frames = 4;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.median_filter_frames = 0;
  c.window_s = 1.2;
  const auto model = MultiExitNet::build(toy_config(), 6);
  CHECK_THROWS_AS(predict_recording(model, noise_audio(1.5, 1), c), ConfigError);
}

TEST_CASE("frames to segments examples") {
  auto s = frames_to_segments(seq({1, 1, 2, 2, 0}));
  REQUIRE(s.vad.size() == 1);
  REQUIRE(s.osd.size() == 1);
  CHECK(s.vad[0].onset_s == doctest::Approx(0.0));
  CHECK(s.vad[0].offset_s == doctest::Approx(0.12));
  CHECK(s.osd[0].onset_s == doctest::Approx(0.06));
  CHECK(s.osd[0].offset_s == doctest::Approx(0.12));

  s = frames_to_segments(seq(std::vector<int>(9, 0)));
  CHECK(s.vad.empty());
  CHECK(s.osd.empty());

  s = frames_to_segments(seq(std::vector<int>(7, 2)));
  REQUIRE(s.vad.size() == 1);
  REQUIRE(s.osd.size() == 1);
  CHECK(s.vad[0] == s.osd[0]);
  CHECK(s.vad[0].offset_s == doctest::Approx(0.21));

  s = frames_to_segments(seq({2, 0, 1, 2, 1, 0, 1}));
  CHECK(s.vad.size() == 3);
  CHECK(s.osd.size() == 2);
}

TEST_CASE("segments are sorted, disjoint, maximal, contained and round-trip exactly") {
  std::mt19937_64 rng(42);
  std::uniform_int_distribution<int> len(0, 300), cls(0, 2), run(1, 12);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> labels;
    const int n = len(rng);
    while (static_cast<int>(labels.size()) < n) labels.insert(labels.end(), static_cast<std::size_t>(run(rng)), cls(rng));
    labels.resize(static_cast<std::size_t>(n));
    const auto ref = seq(labels);
    const auto s = frames_to_segments(ref);

    for (const auto* list : {&s.vad, &s.osd}) {
      for (std::size_t i = 0; i < list->size(); ++i) {
        CHECK((*list)[i].onset_s < (*list)[i].offset_s);
        if (i) CHECK((*list)[i - 1].offset_s < (*list)[i].onset_s - 1e-9);
      }
    }
    for (const auto& o : s.osd) {
      CHECK(std::any_of(s.vad.begin(), s.vad.end(), [&](const Segment& v) {
        return v.onset_s <= o.onset_s + 1e-9 && o.offset_s <= v.offset_s + 1e-9;
      }));
    }

    const double duration = 0.03 * n;
    const auto back = detection_labels(to_annotations(s, "r"), duration);
    REQUIRE(back.labels == labels);
  }
}

TEST_CASE("detection RTTM output is recognised") {
  const auto ann = to_annotations(frames_to_segments(seq({0, 1, 2, 0})), "rec");
  CHECK(is_detection_output(ann));
  REQUIRE(ann.size() == 2);
  CHECK(ann[0].speaker_id == "speech");
  CHECK(ann[1].speaker_id == "overlap");
  std::vector<SegmentAnnotation> speakers{{"rec", "spk1", 0.0, 1.0}};
  CHECK_FALSE(is_detection_output(speakers));
  CHECK_THROWS_AS(detection_labels(speakers, 1.0), InputError);
}

TEST_CASE("frame dump lines carry time, label, exit and confidence") {
  const auto model = constant_model(toy_config(), 2);
  InferenceConfig cfg;
  cfg.mode = Mode::exiting;
  const auto preds = predict_recording(model, noise_audio(1.8, 4), cfg);
  std::ostringstream os;
  write_frame_dump(os, preds);
  std::istringstream in(os.str());
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("t").get<double>() == doctest::Approx(0.03 * static_cast<double>(n)));
    CHECK(j.at("label") == 2);
    CHECK(j.at("exit") == 1);
    CHECK(j.at("confidence").get<double>() > 0.9);
    ++n;
  }
  CHECK(n == preds.size());
  CHECK(n == 60);
}
