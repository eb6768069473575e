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

#include "mexosd/wav.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>

#include "mexosd/error.hpp"

namespace mexosd {
namespace {

std::uint32_t le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}
std::uint16_t le16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

Audio read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string where = " in " + path.string();
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw InputError("not a RIFF/WAVE file" + where);
  }
  Audio audio;
  int bits = 0;
  bool have_fmt = false;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::uint32_t size = le32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    if (pos + 8 + size > bytes.size()) throw InputError("truncated chunk" + where);
    if (std::memcmp(bytes.data() + pos, "fmt ", 4) == 0) {
      if (size < 16) throw InputError("short fmt chunk" + where);
      const std::uint16_t format = le16(body);
      audio.channels = le16(body + 2);
      audio.sample_rate = static_cast<int>(le32(body + 4));
      bits = le16(body + 14);
      if (format != 1 || bits != 16) throw InputError("only PCM16 WAV is supported" + where);
      have_fmt = true;
    } else if (std::memcmp(bytes.data() + pos, "data", 4) == 0) {
      if (!have_fmt) throw InputError("data chunk before fmt chunk" + where);
      const std::size_t n = size / 2;
      audio.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        audio.samples[i] = static_cast<double>(static_cast<std::int16_t>(le16(body + 2 * i))) / 32768.0;
      }
      return audio;
    }
    pos += 8 + size + (size & 1u);
  }
  throw InputError("no data chunk" + where);
}

void write_wav(const std::filesystem::path& path, const Audio& audio) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write audio file " + path.string());
  const auto data_bytes = static_cast<std::uint32_t>(audio.samples.size() * 2);
  out.write("RIFF", 4);
  put32(out, 36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, 1);
  put16(out, static_cast<std::uint16_t>(audio.channels));
  put32(out, static_cast<std::uint32_t>(audio.sample_rate));
  put32(out, static_cast<std::uint32_t>(audio.sample_rate * audio.channels * 2));
  put16(out, static_cast<std::uint16_t>(audio.channels * 2));
  put16(out, 16);
  out.write("data", 4);
  put32(out, data_bytes);
  for (double v : audio.samples) {
    const double scaled = std::clamp(std::round(v * 32768.0), -32768.0, 32767.0);
    put16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(scaled)));
  }
  if (!out) throw InputError("write failed for " + path.string());
}

void require_model_audio(const Audio& audio, int sample_rate) {
  if (audio.channels != 1) {
    throw InputError("audio must be mono, got " + std::to_string(audio.channels) + " channels");
  }
  if (audio.sample_rate != sample_rate) {
    throw InputError("audio must be sampled at " + std::to_string(sample_rate) + " Hz, got " +
                     std::to_string(audio.sample_rate) + " Hz (no resampling is performed)");
  }
}

}  // namespace mexosd
