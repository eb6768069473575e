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

#include "mexosd/rttm.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "mexosd/error.hpp"

namespace mexosd {
namespace {

std::vector<std::string_view> split_ws(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.push_back(line.substr(start, i - start));
  }
  return out;
}

double parse_seconds(std::string_view field, const char* what, std::size_t line_no) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size() || !std::isfinite(v)) {
    throw ParseError(std::string("malformed ") + what + " '" + std::string(field) + "'", line_no);
  }
  if (v < 0.0) throw ParseError(std::string("negative ") + what + " '" + std::string(field) + "'", line_no);
  return v;
}

}  // namespace

std::vector<SegmentAnnotation> parse_rttm(std::string_view text) {
  std::vector<SegmentAnnotation> out;
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    const auto fields = split_ws(text.substr(start, end - start));
    start = end + 1;
    if (fields.empty() || fields[0] != "SPEAKER") continue;
    if (fields.size() < 8) throw ParseError("SPEAKER line needs at least 8 fields", line_no);
    SegmentAnnotation seg;
    seg.recording_id = std::string(fields[1]);
    seg.onset_s = parse_seconds(fields[3], "onset", line_no);
    seg.duration_s = parse_seconds(fields[4], "duration", line_no);
    seg.speaker_id = std::string(fields[7]);
    if (seg.duration_s > 0.0) out.push_back(std::move(seg));
  }
  return out;
}

std::vector<SegmentAnnotation> read_rttm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open annotation file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_rttm(ss.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  }
}

std::string format_rttm(const std::vector<SegmentAnnotation>& segments) {
  std::string out;
  char buf[64];
  for (const auto& s : segments) {
    out += "SPEAKER " + s.recording_id + " 1 ";
    std::snprintf(buf, sizeof buf, "%.2f %.2f", s.onset_s, s.duration_s);
    out += buf;
    out += " <NA> <NA> " + s.speaker_id + " <NA> <NA>\n";
  }
  return out;
}

void write_rttm(const std::filesystem::path& path, const std::vector<SegmentAnnotation>& segments) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << format_rttm(segments);
}

std::vector<SegmentAnnotation> segments_for(const std::vector<SegmentAnnotation>& all,
                                            std::string_view recording_id) {
  std::vector<SegmentAnnotation> out;
  for (const auto& s : all) {
    if (s.recording_id == recording_id) out.push_back(s);
  }
  return out;
}

}  // namespace mexosd
