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

// Procedural speech proxies for tests and demos: each "speaker" is a
// harmonic carrier with syllable-rate amplitude modulation plus band-limited
// noise bursts. Turns are separated by pauses and overlap on purpose.

#include <cstdint>
#include <string>
#include <vector>

#include "mexosd/rttm.hpp"
#include "mexosd/wav.hpp"

namespace mexosd::synthetic {

struct ProxyOptions {
  double duration_s = 30.0;
  int speakers = 4;
  double min_turn_s = 0.6;
  double max_turn_s = 3.0;
  double min_pause_s = 0.3;
  double max_pause_s = 1.5;
  /// Probability that the next turn starts before the current one ends.
  double overlap_probability = 0.35;
  double noise_floor = 0.003;
};

struct ProxyRecording {
  std::string id;
  Audio audio;
  std::vector<SegmentAnnotation> segments;
};

/// Deterministic in (id, options, seed). Segment boundaries sit on a 10 ms grid.
ProxyRecording generate_recording(const std::string& id, const ProxyOptions& options, std::uint64_t seed);

}  // namespace mexosd::synthetic
