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

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "mexosd/model.hpp"
#include "mexosd/tensor.hpp"

namespace mexosd::testing {

// Layer-by-layer count written from the architecture description, kept
// independent of the model's registration code.
inline std::size_t conv_params(std::size_t ci, std::size_t co, std::size_t k) { return ci * co * k * k + co; }
inline std::size_t linear_params(std::size_t i, std::size_t o) { return i * o + o; }

inline ParameterCounts analytic_counts(const ModelConfig& c) {
  auto z = [](int v) { return static_cast<std::size_t>(v); };
  const std::size_t bn = c.batch_norm ? 2 : 0;
  const std::size_t F = z(c.sinc_filters), c0 = z(c.extractor_conv_channels[0]), c1 = z(c.extractor_conv_channels[1]);
  const std::size_t r = z(c.se_reduction), S = z(c.stage_channels), H = z(c.lstm_hidden);
  ParameterCounts p;
  p.extractor = 2 * F + bn * F;  // sinc cut-offs and their batch norm
  p.extractor += conv_params(1, c0, 3) + bn * c0 + conv_params(c0, c0, 3) + bn * c0;
  p.extractor += linear_params(c0, c0 / r) + linear_params(c0 / r, c0);
  p.extractor += conv_params(c0, c1, 3) + bn * c1 + conv_params(c1, c1, 3) + bn * c1;
  p.extractor += linear_params(c1, c1 / r) + linear_params(c1 / r, c1);
  for (std::size_t k = 1; k <= z(c.num_stages); ++k) {
    if (c.dc_enabled) {
      const std::size_t d0 = z(c.dc_widths[0]), d1 = z(c.dc_widths[1]), d2 = z(c.dc_widths[2]);
      p.conv_stages += conv_params(S * k, d0, 1) + bn * d0 + conv_params(d0, d1, 3) + bn * d1 +
                       conv_params(d1, d2, 1) + bn * d2;
    } else {
      const std::size_t w0 = z(c.plain_widths[0]), w1 = z(c.plain_widths[1]);
      p.conv_stages += conv_params(S, w0, 1) + bn * w0 + conv_params(w0, w1, 3) + bn * w1;
    }
  }
  for (std::size_t l = 0; l < z(c.lstm_layers); ++l) {
    const std::size_t in = l == 0 ? S : 2 * H;
    p.recurrent += 2 * (4 * H * in + 4 * H * H + 4 * H);
  }
  const std::size_t M = z(c.mlp_hidden);
  p.heads = z(c.num_exits) * (linear_params(2 * H, M) + linear_params(M, z(c.num_classes)));
  p.total = p.extractor + p.conv_stages + p.recurrent + p.heads;
  return p;
}

/// Small network with the full topology: 8 sinc filters, 4-channel stages,
/// 8-unit recurrent layers.
inline ModelConfig toy_config(bool dc = false) {
  ModelConfig c;
  c.sinc_filters = 8;
  c.extractor_conv_channels = {4, 4};
  c.stage_channels = 4;
  c.plain_widths = {8, 4};
  c.dc_widths = {8, 6, 4};
  c.lstm_hidden = 8;
  c.mlp_hidden = 8;
  c.dc_enabled = dc;
  return c;
}

inline Tensor random_waveforms(std::size_t batch, std::size_t samples, std::uint64_t seed, double amp = 0.3) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-amp, amp);
  Tensor x({batch, samples});
  for (auto& v : x.values()) v = u(rng);
  return x;
}

/// Every exit ignores its input and emits `label` with near certainty.
inline MultiExitNet constant_model(const ModelConfig& config, int label, std::uint64_t seed = 1) {
  auto model = MultiExitNet::build(config, seed);
  auto& p = model.parameters();
  for (int i = 1; i <= config.num_exits; ++i) {
    const std::string base = "exit" + std::to_string(i) + ".classify";
    for (auto& w : p[*p.find(base + ".weight")].values()) w = 0.0;
    auto& b = p[*p.find(base + ".bias")];
    for (auto& v : b.values()) v = 0.0;
    b[static_cast<std::size_t>(label)] = 12.0;
  }
  return model;
}

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    std::random_device rd;
    path_ = std::filesystem::temp_directory_path() /
            ("mexosd-test-" + std::to_string(rd()) + "-" + std::to_string(counter++));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const noexcept { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace mexosd::testing
