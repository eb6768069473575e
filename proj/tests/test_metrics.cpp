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

#include <optional>
#include <random>
#include <set>
#include <sstream>

#include "mexosd/error.hpp"
#include "mexosd/metrics.hpp"

using namespace mexosd;
using namespace mexosd::metrics;

namespace {

data::FrameLabelSequence seq(std::vector<int> labels) { return {30, std::move(labels)}; }

// Written separately from the library: positive sets as explicit sets,
// counts by index lists, rates from the textbook definitions.
struct Oracle {
  std::optional<double> fa, miss, er, precision, recall, f1;
};

Oracle oracle(const std::vector<int>& ref, const std::vector<int>& hyp, Task task) {
  const std::set<int> positive = task == Task::vad ? std::set<int>{1, 2} : std::set<int>{2};
  std::vector<std::size_t> ref_pos, hyp_pos, both;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const bool r = positive.count(ref[i]) > 0, h = positive.count(hyp[i]) > 0;
    if (r) ref_pos.push_back(i);
    if (h) hyp_pos.push_back(i);
    if (r && h) both.push_back(i);
  }
  const auto tp = static_cast<double>(both.size());
  const auto fp = static_cast<double>(hyp_pos.size() - both.size());
  const auto fn = static_cast<double>(ref_pos.size() - both.size());
  Oracle o;
  if (!ref_pos.empty()) {
    o.miss = 100.0 * fn / static_cast<double>(ref_pos.size());
    o.fa = 100.0 * fp / static_cast<double>(ref_pos.size());
    o.er = *o.miss + *o.fa;
  }
  if (!hyp_pos.empty()) o.precision = tp / static_cast<double>(hyp_pos.size());
  if (!ref_pos.empty()) o.recall = tp / static_cast<double>(ref_pos.size());
  if (o.precision && o.recall) {
    o.f1 = *o.precision + *o.recall > 0.0 ? 2.0 * *o.precision * *o.recall / (*o.precision + *o.recall) : 0.0;
  }
  return o;
}

void check_against_oracle(const std::vector<int>& ref, const std::vector<int>& hyp, Task task) {
  const auto got = detection_metrics(seq(ref), seq(hyp), task);
  const auto want = oracle(ref, hyp, task);
  REQUIRE(got.fa == want.fa);
  REQUIRE(got.miss == want.miss);
  REQUIRE(got.er == want.er);
  REQUIRE(got.precision == want.precision);
  REQUIRE(got.recall == want.recall);
  REQUIRE(got.f1 == want.f1);
  REQUIRE(got.frames == ref.size());
}

inference::FramePrediction pred(int label, int exit) {
  inference::FramePrediction p;
  p.final_label = label;
  p.majority_exit = exit;
  p.votes = {{label, exit, 0.95}};
  return p;
}

}  // namespace

TEST_CASE("a perfect hypothesis scores zero error and unit F1") {
  const auto ref = seq({0, 1, 2, 1, 0, 2, 2});
  for (Task t : {Task::vad, Task::osd}) {
    const auto r = detection_metrics(ref, ref, t);
    CHECK(*r.fa == 0.0);
    CHECK(*r.miss == 0.0);
    CHECK(*r.er == 0.0);
    CHECK(*r.precision == 1.0);
    CHECK(*r.recall == 1.0);
    CHECK(*r.f1 == 1.0);
    CHECK(r.frames == 7);
  }
}

TEST_CASE("hand-counted OSD case") {
  const auto r = detection_metrics(seq({0, 1, 1, 2, 2, 0}), seq({0, 1, 2, 2, 0, 0}), Task::osd);
  CHECK(*r.miss == 50.0);
  CHECK(*r.fa == 50.0);
  CHECK(*r.er == 100.0);
  CHECK(*r.precision == 0.5);
  CHECK(*r.recall == 0.5);
  CHECK(*r.f1 == 0.5);
  const auto c = count_detection(std::vector<int>{0, 1, 1, 2, 2, 0}, std::vector<int>{0, 1, 2, 2, 0, 0}, Task::osd);
  CHECK(c == DetectionCounts{1, 1, 1, 3});
}

TEST_CASE("metrics match the counting oracle exhaustively on short sequences") {
  // Every reference of length 6, each against a handful of sampled hypotheses.
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int code = 0; code < 729; ++code) {
    std::vector<int> ref;
    for (int i = 0, c = code; i < 6; ++i, c /= 3) ref.push_back(c % 3);
    for (int h = 0; h < 8; ++h) {
      std::vector<int> hyp(6);
      for (auto& y : hyp) y = cls(rng);
      check_against_oracle(ref, hyp, Task::vad);
      check_against_oracle(ref, hyp, Task::osd);
    }
  }
}

TEST_CASE("metrics match the counting oracle on random long sequences") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> cls(0, 2);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<int> ref(200), hyp(200);
    for (auto& y : ref) y = cls(rng);
    for (auto& y : hyp) y = cls(rng);
    for (Task t : {Task::vad, Task::osd}) {
      check_against_oracle(ref, hyp, t);
      const auto r = detection_metrics(seq(ref), seq(hyp), t);
      CHECK(*r.er == *r.fa + *r.miss);
    }
  }
}

TEST_CASE("swapping reference and hypothesis swaps FA and Miss when positive counts match") {
  const std::vector<int> a{2, 2, 0, 1, 0, 2}, b{0, 2, 2, 1, 2, 0};
  const auto ab = detection_metrics(seq(a), seq(b), Task::osd);
  const auto ba = detection_metrics(seq(b), seq(a), Task::osd);
  CHECK(*ab.fa == *ba.miss);
  CHECK(*ab.miss == *ba.fa);
  CHECK(*ab.f1 == *ba.f1);
}

TEST_CASE("F1 ignores frame order") {
  std::vector<int> ref{0, 1, 2, 2, 1, 0, 2, 1}, hyp{1, 1, 2, 0, 1, 2, 2, 0};
  const auto base = detection_metrics(seq(ref), seq(hyp), Task::vad);
  std::mt19937_64 rng(1);
  std::vector<std::size_t> perm(ref.size());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (int k = 0; k < 10; ++k) {
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> r2, h2;
    for (auto i : perm) {
      r2.push_back(ref[i]);
      h2.push_back(hyp[i]);
    }
    CHECK(detection_metrics(seq(r2), seq(h2), Task::vad).f1 == base.f1);
  }
}

TEST_CASE("undefined metrics stay undefined") {
  const auto r = detection_metrics(seq({0, 1, 0}), seq({0, 2, 0}), Task::osd);
  CHECK_FALSE(r.miss.has_value());
  CHECK_FALSE(r.fa.has_value());
  CHECK_FALSE(r.er.has_value());
  CHECK_FALSE(r.recall.has_value());
  CHECK_FALSE(r.f1.has_value());
  CHECK(*r.precision == 0.0);

  const auto silent = detection_metrics(seq({1, 1}), seq({0, 0}), Task::vad);
  CHECK_FALSE(silent.precision.has_value());
  CHECK(*silent.recall == 0.0);
  CHECK_FALSE(silent.f1.has_value());

  const auto disjoint = detection_metrics(seq({2, 0}), seq({0, 2}), Task::osd);
  CHECK(*disjoint.f1 == 0.0);

  CHECK_THROWS_AS(detection_metrics(seq({0, 1}), seq({0}), Task::vad), InputError);
}

TEST_CASE("exit rates of constructed predictions follow the construction tally") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 2), ex(1, 3);
  std::vector<inference::FramePrediction> preds;
  std::vector<int> ref;
  std::uint64_t tally[3][3] = {};
  for (int j = 0; j < 500; ++j) {
    const int k = cls(rng), e = ex(rng);
    ref.push_back(k);
    preds.push_back(pred(cls(rng), e));
    ++tally[k][e - 1];
  }
  const auto r = exit_rates(preds, seq(ref), 0.9);
  for (std::size_t k = 0; k < 3; ++k) {
    double sum = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      CHECK(r.counts[k][i] == tally[k][i]);
      sum += *r.rate(k, i);
    }
    CHECK(sum == doctest::Approx(1.0));
  }
}

TEST_CASE("exit rates for trivial exit patterns") {
  const std::vector<int> ref{0, 1, 1, 0};
  std::vector<inference::FramePrediction> first, last;
  for (int y : ref) {
    first.push_back(pred(y, 1));
    last.push_back(pred(y, 3));
  }
  const auto a = exit_rates(first, seq(ref), 0.5);
  const auto b = exit_rates(last, seq(ref), 1.0);
  for (std::size_t k : {0u, 1u}) {
    CHECK(*a.rate(k, 0) == 1.0);
    CHECK(*a.rate(k, 1) == 0.0);
    CHECK(*b.rate(k, 2) == 1.0);
  }
  CHECK_FALSE(a.rate(2, 0).has_value());

  const auto p = exit_rates(first, seq({2, 2, 2, 2}), 0.5, 3, ClassBasis::predicted);
  CHECK(p.class_frames(0) == 2);
  CHECK(p.class_frames(2) == 0);

  auto merged = a;
  merged += b;
  CHECK(merged.class_frames(1) == 4);
  CHECK(*merged.rate(1, 0) == 0.5);

  std::vector<inference::FramePrediction> bad{pred(0, 4)};
  CHECK_THROWS_AS(exit_rates(bad, seq({0}), 0.5), InputError);
  CHECK_THROWS_AS(exit_rates(first, seq({0}), 0.5), InputError);
}

namespace {

ReportBundle sample_bundle() {
  ReportBundle b;
  b.dataset = "dev";
  const auto ref = seq({0, 1, 1, 2, 2, 0, 1});
  const auto hyp = seq({0, 1, 2, 2, 0, 0, 1});
  b.detection.push_back(detection_metrics(ref, hyp, Task::vad));
  b.detection.push_back(detection_metrics(ref, hyp, Task::osd));
  std::vector<inference::FramePrediction> preds;
  for (int j = 0; j < 7; ++j) preds.push_back(pred(hyp.labels[static_cast<std::size_t>(j)], 1 + j % 3));
  b.exits.push_back(exit_rates(preds, seq({0, 1, 1, 0, 0, 0, 1}), 0.9));
  return b;
}

}  // namespace

TEST_CASE("text rendering has one section per report with the six metric columns") {
  const auto b = sample_bundle();
  const std::string text = render_text(b);
  std::istringstream in(text);
  std::vector<std::string> lines;
  for (std::string l; std::getline(in, l);) lines.push_back(l);
  std::vector<std::string> headers;
  for (const auto& l : lines) {
    if (l.rfind("== ", 0) == 0) headers.push_back(l);
  }
  REQUIRE(headers.size() == 3);
  CHECK(headers[0] == "== VAD [dev], 7 frames ==");
  CHECK(headers[1] == "== OSD [dev], 7 frames ==");
  CHECK(headers[2].rfind("== Exit rates [dev], gamma 0.900", 0) == 0);

  std::istringstream cols(lines[1]);
  std::vector<std::string> names;
  for (std::string w; cols >> w;) names.push_back(w);
  CHECK(names == std::vector<std::string>{"FA%", "Miss%", "ER%", "Precision", "Recall", "F1"});
  CHECK(text.find("n/a") != std::string::npos);  // the overlap class never occurs in the exit reference
  CHECK(render_text(b) == text);
}

TEST_CASE("JSON round trip reproduces the text exactly") {
  const auto b = sample_bundle();
  const auto j = to_json(b);
  CHECK(j.at("detection")[0].at("task") == "VAD");
  for (const char* key : {"task", "fa", "miss", "er", "precision", "recall", "f1", "frames"}) {
    CHECK(j.at("detection")[0].contains(key));
  }
  const auto back = bundle_from_json(nlohmann::json::parse(j.dump()));
  CHECK(back == b);
  CHECK(render_text(back) == render_text(b));
  CHECK_THROWS_AS(bundle_from_json(nlohmann::json::parse(R"({"detection": [{"task": "VAD"}]})")), ParseError);
}

TEST_CASE("CSV lists one row per class and exit") {
  const std::string csv = render_csv(sample_bundle());
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "dataset,class,exit,rate");
  std::size_t rows = 0, empty = 0;
  while (std::getline(in, line)) {
    ++rows;
    CHECK(line.rfind("dev,", 0) == 0);
    empty += line.back() == ',';
  }
  CHECK(rows == 9);
  CHECK(empty == 3);
  CHECK(csv.find("dev,0,1,0.500000") != std::string::npos);
}

TEST_CASE("task names parse both cases") {
  CHECK(parse_task("vad") == Task::vad);
  CHECK(parse_task("OSD") == Task::osd);
  CHECK_THROWS_AS(parse_task("DER"), ConfigError);
  CHECK(is_positive(Task::vad, 1));
  CHECK_FALSE(is_positive(Task::osd, 1));
}
