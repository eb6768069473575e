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

#include "mexosd/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace mexosd::synthetic {
namespace {

struct Voice {
  double f0;
  double formant;
  double am_rate;
  double amplitude;
};

double quantize(double t) { return std::round(t * 100.0) / 100.0; }

void render_turn(const Voice& v, double onset, double duration, std::mt19937_64& rng, std::vector<double>& out,
                 int sample_rate) {
  const auto begin = static_cast<std::size_t>(std::llround(onset * sample_rate));
  const auto len = static_cast<std::size_t>(std::llround(duration * sample_rate));
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> jitter(-0.03, 0.03);
  const double sr = static_cast<double>(sample_rate);
  const double drift = 1.0 + jitter(rng);
  // Two-pole resonator shaping white noise around the formant.
  const double r = 0.97;
  const double theta = 2.0 * std::numbers::pi * v.formant / sr;
  const double a1 = 2.0 * r * std::cos(theta), a2 = -r * r;
  double y1 = 0.0, y2 = 0.0;
  const double ramp = 0.02 * sr;
  for (std::size_t i = 0; i < len && begin + i < out.size(); ++i) {
    const double t = static_cast<double>(i) / sr;
    const double f0 = v.f0 * drift * (1.0 + 0.04 * std::sin(2.0 * std::numbers::pi * 0.7 * t));
    double tone = 0.0;
    for (int h = 1; h <= 4; ++h) tone += std::sin(2.0 * std::numbers::pi * f0 * h * t) / h;
    const double env = 0.55 + 0.45 * std::sin(2.0 * std::numbers::pi * v.am_rate * t);
    const double y = (1.0 - r) * noise(rng) + a1 * y1 + a2 * y2;
    y2 = y1;
    y1 = y;
    const double edge = std::min({1.0, static_cast<double>(i) / ramp, static_cast<double>(len - i) / ramp});
    out[begin + i] += v.amplitude * edge * env * (0.6 * tone + 4.0 * y);
  }
}

}  // namespace

ProxyRecording generate_recording(const std::string& id, const ProxyOptions& o, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };

  std::vector<Voice> voices;
  for (int s = 0; s < o.speakers; ++s) {
    voices.push_back({uniform(90.0, 320.0), uniform(500.0, 2800.0), uniform(3.0, 6.0), uniform(0.12, 0.22)});
  }

  ProxyRecording rec;
  rec.id = id;
  rec.audio.sample_rate = 16000;
  rec.audio.channels = 1;
  const auto total = static_cast<std::size_t>(std::llround(o.duration_s * rec.audio.sample_rate));
  rec.audio.samples.assign(total, 0.0);

  double t = quantize(uniform(o.min_pause_s, o.max_pause_s));
  int last = -1;
  while (t < o.duration_s - o.min_turn_s) {
    int spk = static_cast<int>(unit(rng) * o.speakers) % o.speakers;
    if (spk == last) spk = (spk + 1) % o.speakers;
    const double dur = quantize(std::min(uniform(o.min_turn_s, o.max_turn_s), o.duration_s - t));
    if (dur <= 0.0) break;
    rec.segments.push_back({id, "spk" + std::to_string(spk), t, dur});
    render_turn(voices[static_cast<std::size_t>(spk)], t, dur, rng, rec.audio.samples, rec.audio.sample_rate);
    last = spk;
    if (unit(rng) < o.overlap_probability && dur > 0.5) {
      const double ov = quantize(uniform(0.3, std::min(1.5, dur - 0.2)));
      t = quantize(t + dur - ov);
    } else {
      t = quantize(t + dur + uniform(o.min_pause_s, o.max_pause_s));
    }
  }

  std::normal_distribution<double> floor_noise(0.0, o.noise_floor);
  for (double& v : rec.audio.samples) v += floor_noise(rng);
  double peak = 0.0;
  for (double v : rec.audio.samples) peak = std::max(peak, std::abs(v));
  if (peak > 0.95) {
    for (double& v : rec.audio.samples) v *= 0.95 / peak;
  }
  return rec;
}

}  // namespace mexosd::synthetic
