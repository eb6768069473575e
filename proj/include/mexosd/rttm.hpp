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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace mexosd {

struct SegmentAnnotation {
  std::string recording_id;
  std::string speaker_id;
  double onset_s = 0.0;
  double duration_s = 0.0;

  double offset_s() const noexcept { return onset_s + duration_s; }
  bool operator==(const SegmentAnnotation&) const = default;
};

/// One annotation per SPEAKER line, in file order; other record types are
/// skipped. Throws ParseError (with line number) on malformed or negative
/// onset/duration fields.
std::vector<SegmentAnnotation> parse_rttm(std::string_view text);
std::vector<SegmentAnnotation> read_rttm(const std::filesystem::path& path);

/// SPEAKER lines with two-decimal onset and duration.
std::string format_rttm(const std::vector<SegmentAnnotation>& segments);
void write_rttm(const std::filesystem::path& path, const std::vector<SegmentAnnotation>& segments);

/// Segments of one recording only.
std::vector<SegmentAnnotation> segments_for(const std::vector<SegmentAnnotation>& all, std::string_view recording_id);

}  // namespace mexosd
