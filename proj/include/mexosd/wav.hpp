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
#include <vector>

namespace mexosd {

struct Audio {
  int sample_rate = 16000;
  int channels = 1;
  std::vector<double> samples;  // interleaved, in [-1, 1)

  double duration_s() const noexcept {
    return channels > 0 && sample_rate > 0
               ? static_cast<double>(samples.size()) / (static_cast<double>(sample_rate) * channels)
               : 0.0;
  }
};

/// Reads a RIFF/WAVE PCM16 file of any rate and channel count; callers check
/// the audio contract.
Audio read_wav(const std::filesystem::path& path);
/// Writes PCM16, clipping to full scale.
void write_wav(const std::filesystem::path& path, const Audio& audio);

/// Throws InputError unless the audio is 16 kHz mono.
void require_model_audio(const Audio& audio, int sample_rate = 16000);

}  // namespace mexosd
