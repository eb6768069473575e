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

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "mexosd/layers.hpp"
#include "mexosd/parameters.hpp"
#include "mexosd/tensor.hpp"

namespace mexosd {

/// Hyperparameters of the multi-exit CRNN. Defaults reproduce the reference
/// configuration: 1.5 s chunks at 16 kHz, 50 frames of 30 ms each.
struct ModelConfig {
  int sample_rate_hz = 16000;
  int chunk_samples = 24000;
  int sinc_filters = 128;
  int sinc_kernel = 251;
  int sinc_stride = 80;
  std::array<int, 2> extractor_conv_channels{32, 64};
  int se_reduction = 4;
  /// (freq, time) factors of the two extractor average pools.
  std::array<int, 2> pool1{2, 3};
  std::array<int, 2> pool2{2, 2};
  int stage_channels = 64;
  int num_stages = 3;
  bool dc_enabled = false;
  std::array<int, 3> dc_widths{320, 80, 64};
  std::array<int, 2> plain_widths{256, 64};
  int lstm_hidden = 128;
  int lstm_layers = 2;
  int mlp_hidden = 128;
  int num_classes = 3;
  int num_exits = 3;
  int frames_per_chunk = 50;
  bool batch_norm = true;

  /// Throws ConfigError naming the first field that breaks the shape contract.
  void validate() const;

  /// Frequency bins / time steps leaving the extractor.
  int extractor_freq_bins() const;
  int sinc_steps() const;

  bool operator==(const ModelConfig&) const = default;
};

/// Per-exit outputs for a batch of chunks. logits[i] is (batch, frames,
/// classes); features[i] is (batch, frames, mlp_hidden), the representation
/// fed to exit i's classifier.
struct ExitOutputs {
  std::vector<Tensor> logits;
  std::vector<Tensor> features;

  std::size_t num_exits() const noexcept { return logits.size(); }
};

/// Gradient of a scalar objective with respect to every exit's outputs.
struct ExitGradients {
  std::vector<Tensor> logits;
  std::vector<Tensor> features;
};

struct ParameterCounts {
  std::size_t extractor = 0;
  std::size_t conv_stages = 0;
  std::size_t recurrent = 0;
  std::size_t heads = 0;
  std::size_t total = 0;
};

namespace detail {

struct ConvUnitCache {
  Tensor input;
  nn::BatchNormCache bn;
  Tensor output;
};

struct ExitCache {
  Shape stage_shape;
  Tensor sequence;  // (batch, frames, channels)
  nn::RecurrentCache recurrent;
  Tensor recurrent_out;
  Tensor features;
};

}  // namespace detail

/// Intermediates kept by a training-phase forward pass for backprop.
struct ForwardTape {
  Tensor waveforms;
  nn::SincCache sinc;
  nn::BatchNormCache sinc_bn;
  Tensor sinc_out;
  std::vector<detail::ConvUnitCache> extractor_units;
  nn::SqueezeExciteCache se1, se2;
  Shape pool1_in, pool2_in;
  std::vector<std::vector<detail::ConvUnitCache>> stage_units;
  std::vector<Tensor> stage_outputs;  // index 0 is the extractor output
  std::vector<detail::ExitCache> exits;
};

/// Multi-exit CRNN: extractor, `num_stages` convolutional stages with one
/// exit after each, a single recurrent aggregator shared by all exits and one
/// two-layer head per exit.
class MultiExitNet {
 public:
  /// Deterministic given (config, seed).
  static MultiExitNet build(const ModelConfig& config, std::uint64_t seed);
  /// Rebuild the graph for `config` and adopt the given tensors; layouts must
  /// match what `build` would create.
  static MultiExitNet from_state(const ModelConfig& config, ParameterSet parameters, ParameterSet buffers);

  const ModelConfig& config() const noexcept { return config_; }
  ParameterSet& parameters() noexcept { return params_; }
  const ParameterSet& parameters() const noexcept { return params_; }
  ParameterSet& buffers() noexcept { return buffers_; }
  const ParameterSet& buffers() const noexcept { return buffers_; }

  /// Inference-phase forward (running batch-norm statistics). Thread-safe.
  ExitOutputs forward(const Tensor& waveforms) const;
  /// Forward in either phase; fills `tape` when non-null. Never mutates the
  /// model, so training-phase calls leave running statistics untouched.
  ExitOutputs forward(const Tensor& waveforms, nn::Phase phase, ForwardTape* tape) const;
  /// Training-phase forward that also folds batch statistics into the
  /// running averages.
  ExitOutputs forward_train(const Tensor& waveforms, ForwardTape& tape);

  /// Accumulates dObjective/dParameters into `grads` (layout of parameters()).
  void backward(const ForwardTape& tape, const ExitGradients& upstream, ParameterSet& grads) const;

  ParameterCounts count_parameters() const;

 private:
  MultiExitNet() = default;
  void construct(std::uint64_t seed);
  ExitOutputs run(const Tensor& waveforms, nn::Phase phase, ForwardTape* tape, ParameterSet* running) const;

  struct ConvUnit {
    nn::Conv2d conv;
    nn::BatchNorm bn;
    bool has_bn = false;
  };
  struct Head {
    nn::Linear reduce;
    nn::Linear classify;
  };

  Tensor run_unit(const ConvUnit& unit, const Tensor& x, nn::Phase phase, detail::ConvUnitCache* cache,
                  ParameterSet* running) const;
  Tensor unit_backward(const ConvUnit& unit, const detail::ConvUnitCache& cache, Tensor grad,
                       ParameterSet& grads) const;

  ModelConfig config_;
  ParameterSet params_;
  ParameterSet buffers_;

  nn::SincConv sinc_;
  nn::BatchNorm sinc_bn_;
  std::vector<ConvUnit> extractor_units_;  // 2 before pool1, 2 before pool2
  nn::SqueezeExcite se1_, se2_;
  nn::AvgPool2d pool1_, pool2_;
  std::vector<std::vector<ConvUnit>> stages_;
  nn::BiLstmStack recurrent_;
  std::vector<Head> heads_;
};

}  // namespace mexosd
