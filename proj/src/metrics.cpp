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

#include "mexosd/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

#include "mexosd/error.hpp"

namespace mexosd::metrics {
namespace {

const char* const kClassNames[] = {"non-speech", "single", "overlap"};

std::string fixed(const std::optional<double>& v, int precision) {
  if (!v) return "n/a";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", precision, *v);
  return buf;
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : std::string(width - s.size(), ' ') + s;
}

nlohmann::json opt(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

std::optional<double> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

std::optional<double> ratio(std::uint64_t num, std::uint64_t den, double scale = 1.0) {
  if (den == 0) return std::nullopt;
  return scale * static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

const char* task_name(Task t) { return t == Task::vad ? "VAD" : "OSD"; }

Task parse_task(std::string_view name) {
  if (name == "VAD" || name == "vad") return Task::vad;
  if (name == "OSD" || name == "osd") return Task::osd;
  throw ConfigError("task", "expected VAD or OSD, got '" + std::string(name) + "'");
}

bool is_positive(Task t, int label) { return t == Task::vad ? label >= 1 : label == 2; }

DetectionCounts& DetectionCounts::operator+=(const DetectionCounts& o) noexcept {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  return *this;
}

DetectionCounts count_detection(std::span<const int> ref, std::span<const int> hyp, Task task) {
  if (ref.size() != hyp.size()) {
    throw InputError("reference has " + std::to_string(ref.size()) + " frames, hypothesis " +
                     std::to_string(hyp.size()));
  }
  DetectionCounts c;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const bool r = is_positive(task, ref[i]), h = is_positive(task, hyp[i]);
    if (r && h) ++c.tp;
    else if (h) ++c.fp;
    else if (r) ++c.fn;
    else ++c.tn;
  }
  return c;
}

DetectionReport report_from_counts(Task task, const DetectionCounts& c) {
  DetectionReport r;
  r.task = task;
  r.frames = c.frames();
  r.miss = ratio(c.fn, c.ref_positive(), 100.0);
  r.fa = ratio(c.fp, c.ref_positive(), 100.0);
  if (r.miss && r.fa) r.er = *r.miss + *r.fa;
  r.precision = ratio(c.tp, c.tp + c.fp);
  r.recall = ratio(c.tp, c.tp + c.fn);
  if (r.precision && r.recall) {
    const double s = *r.precision + *r.recall;
    r.f1 = s > 0.0 ? 2.0 * *r.precision * *r.recall / s : 0.0;
  }
  return r;
}

DetectionReport detection_metrics(const data::FrameLabelSequence& ref, const data::FrameLabelSequence& hyp,
                                  Task task) {
  if (ref.frame_ms != hyp.frame_ms) throw InputError("reference and hypothesis use different frame lengths");
  return report_from_counts(task, count_detection(ref.labels, hyp.labels, task));
}

std::optional<double> ExitRateReport::rate(std::size_t k, std::size_t exit_index) const {
  return ratio(counts.at(k).at(exit_index), class_frames(k));
}

std::uint64_t ExitRateReport::class_frames(std::size_t k) const {
  std::uint64_t n = 0;
  for (auto c : counts.at(k)) n += c;
  return n;
}

ExitRateReport& ExitRateReport::operator+=(const ExitRateReport& o) {
  if (counts.empty()) counts = std::vector<std::vector<std::uint64_t>>(o.counts.size(),
                                                                        std::vector<std::uint64_t>(o.counts.empty() ? 0 : o.counts[0].size()));
  if (o.counts.size() != counts.size() || (!counts.empty() && o.counts[0].size() != counts[0].size())) {
    throw InputError("cannot merge exit-rate reports of different shapes");
  }
  for (std::size_t k = 0; k < counts.size(); ++k) {
    for (std::size_t i = 0; i < counts[k].size(); ++i) counts[k][i] += o.counts[k][i];
  }
  return *this;
}

ExitRateReport exit_rates(std::span<const inference::FramePrediction> predictions, const data::FrameLabelSequence& ref,
                          double gamma, std::size_t num_exits, ClassBasis basis, std::string dataset) {
  if (basis == ClassBasis::reference && predictions.size() != ref.labels.size()) {
    throw InputError("exit rates need one prediction per reference frame (" + std::to_string(predictions.size()) +
                     " vs " + std::to_string(ref.labels.size()) + ")");
  }
  ExitRateReport r;
  r.dataset = std::move(dataset);
  r.gamma = gamma;
  r.basis = basis;
  r.counts.assign(data::kNumClasses, std::vector<std::uint64_t>(num_exits, 0));
  for (std::size_t j = 0; j < predictions.size(); ++j) {
    const int k = basis == ClassBasis::reference ? ref.labels[j] : predictions[j].final_label;
    const int e = predictions[j].majority_exit;
    if (k < 0 || k >= data::kNumClasses) throw InputError("class " + std::to_string(k) + " out of range");
    if (e < 1 || static_cast<std::size_t>(e) > num_exits) throw InputError("exit " + std::to_string(e) + " out of range");
    ++r.counts[static_cast<std::size_t>(k)][static_cast<std::size_t>(e - 1)];
  }
  return r;
}

std::string render_text(const ReportBundle& b) {
  std::ostringstream out;
  const std::string title = b.dataset.empty() ? std::string() : " [" + b.dataset + "]";
  for (const auto& d : b.detection) {
    out << "== " << task_name(d.task) << title << ", " << d.frames << " frames ==\n";
    out << pad("FA%", 9) << pad("Miss%", 9) << pad("ER%", 9) << pad("Precision", 11) << pad("Recall", 9)
        << pad("F1", 9) << '\n';
    out << pad(fixed(d.fa, 2), 9) << pad(fixed(d.miss, 2), 9) << pad(fixed(d.er, 2), 9)
        << pad(fixed(d.precision, 4), 11) << pad(fixed(d.recall, 4), 9) << pad(fixed(d.f1, 4), 9) << '\n';
  }
  for (const auto& e : b.exits) {
    char g[32];
    std::snprintf(g, sizeof g, "%.3f", e.gamma);
    out << "== Exit rates" << (e.dataset.empty() ? title : " [" + e.dataset + "]") << ", gamma " << g << ", "
        << (e.basis == ClassBasis::reference ? "reference" : "predicted") << " class ==\n";
    const std::size_t m = e.counts.empty() ? 0 : e.counts[0].size();
    out << std::string(10, ' ');
    for (std::size_t i = 0; i < m; ++i) out << pad("exit" + std::to_string(i + 1), 9);
    out << pad("frames", 10) << '\n';
    for (std::size_t k = 0; k < e.counts.size(); ++k) {
      std::string name = k < 3 ? kClassNames[k] : std::to_string(k);
      out << name << std::string(10 - std::min<std::size_t>(10, name.size()), ' ');
      for (std::size_t i = 0; i < m; ++i) out << pad(fixed(e.rate(k, i), 4), 9);
      out << pad(std::to_string(e.class_frames(k)), 10) << '\n';
    }
  }
  return out.str();
}

nlohmann::json to_json(const ReportBundle& b) {
  nlohmann::json j;
  j["dataset"] = b.dataset;
  j["detection"] = nlohmann::json::array();
  for (const auto& d : b.detection) {
    j["detection"].push_back({{"task", task_name(d.task)},
                              {"fa", opt(d.fa)},
                              {"miss", opt(d.miss)},
                              {"er", opt(d.er)},
                              {"precision", opt(d.precision)},
                              {"recall", opt(d.recall)},
                              {"f1", opt(d.f1)},
                              {"frames", d.frames}});
  }
  j["exit_rates"] = nlohmann::json::array();
  for (const auto& e : b.exits) {
    nlohmann::json rates = nlohmann::json::array();
    for (std::size_t k = 0; k < e.counts.size(); ++k) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t i = 0; i < e.counts[k].size(); ++i) row.push_back(opt(e.rate(k, i)));
      rates.push_back(row);
    }
    j["exit_rates"].push_back({{"dataset", e.dataset},
                               {"gamma", e.gamma},
                               {"basis", e.basis == ClassBasis::reference ? "reference" : "predicted"},
                               {"counts", e.counts},
                               {"rates", rates}});
  }
  return j;
}

ReportBundle bundle_from_json(const nlohmann::json& j) {
  try {
    ReportBundle b;
    b.dataset = j.value("dataset", "");
    for (const auto& d : j.at("detection")) {
      DetectionReport r;
      r.task = parse_task(d.at("task").get<std::string>());
      r.fa = opt_from(d.at("fa"));
      r.miss = opt_from(d.at("miss"));
      r.er = opt_from(d.at("er"));
      r.precision = opt_from(d.at("precision"));
      r.recall = opt_from(d.at("recall"));
      r.f1 = opt_from(d.at("f1"));
      r.frames = d.at("frames").get<std::uint64_t>();
      b.detection.push_back(r);
    }
    for (const auto& e : j.at("exit_rates")) {
      ExitRateReport r;
      r.dataset = e.value("dataset", "");
      r.gamma = e.at("gamma").get<double>();
      r.basis = e.at("basis").get<std::string>() == "predicted" ? ClassBasis::predicted : ClassBasis::reference;
      r.counts = e.at("counts").get<std::vector<std::vector<std::uint64_t>>>();
      b.exits.push_back(std::move(r));
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("malformed report JSON: ") + e.what());
  }
}

std::string render_csv(const ReportBundle& b) {
  std::ostringstream out;
  out << "dataset,class,exit,rate\n";
  for (const auto& e : b.exits) {
    const std::string ds = e.dataset.empty() ? b.dataset : e.dataset;
    for (std::size_t k = 0; k < e.counts.size(); ++k) {
      for (std::size_t i = 0; i < e.counts[k].size(); ++i) {
        const auto r = e.rate(k, i);
        out << ds << ',' << k << ',' << i + 1 << ',';
        if (r) {
          char buf[32];
          std::snprintf(buf, sizeof buf, "%.6f", *r);
          out << buf;
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace mexosd::metrics
