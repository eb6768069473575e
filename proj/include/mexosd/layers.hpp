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

// Building blocks of the multi-exit network. Every layer keeps only slot
// indices into a ParameterSet; forward passes are const and write their
// intermediates into caller-owned caches, so a frozen model can be evaluated
// from several threads at once. Backward passes accumulate into a gradient
// set with the same layout as the parameters.

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "mexosd/parameters.hpp"
#include "mexosd/tensor.hpp"

namespace mexosd::nn {

using Rng = std::mt19937_64;

enum class Phase { inference, training };

/// Fully connected layer applied to the last axis of its input.
class Linear {
 public:
  Linear() = default;
  Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng);

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }
  std::size_t parameter_count() const noexcept { return in_ * out_ + out_; }

  Tensor forward(const ParameterSet& params, const Tensor& x) const;
  /// Accumulates weight and bias gradients; returns dL/dx when requested.
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x, const Tensor& grad_out,
                  bool want_input_grad = true) const;

 private:
  std::size_t in_ = 0, out_ = 0;
  std::size_t weight_ = 0, bias_ = 0;
};

/// Stride-1 2D convolution with symmetric zero padding ("same" output size).
/// Layout (batch, channels, height, width); odd square kernels only.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(ParameterSet& params, const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
         std::size_t kernel, Rng& rng);

  std::size_t in_channels() const noexcept { return cin_; }
  std::size_t out_channels() const noexcept { return cout_; }
  std::size_t kernel() const noexcept { return k_; }
  std::size_t parameter_count() const noexcept { return cout_ * cin_ * k_ * k_ + cout_; }

  Tensor forward(const ParameterSet& params, const Tensor& x) const;
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x, const Tensor& grad_out) const;

 private:
  std::size_t cin_ = 0, cout_ = 0, k_ = 1;
  std::size_t weight_ = 0, bias_ = 0;
};

struct BatchNormCache {
  Tensor normalized;  // x-hat
  std::vector<double> inv_std;
};

/// Per-channel batch normalization over axis 1 of a (batch, channels, ...)
/// tensor. Running statistics live in a separate buffer set.
class BatchNorm {
 public:
  static constexpr double kEpsilon = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm() = default;
  BatchNorm(ParameterSet& params, ParameterSet& buffers, const std::string& prefix, std::size_t channels);

  std::size_t parameter_count() const noexcept { return 2 * channels_; }

  /// Training phase normalizes with batch statistics and, when
  /// `running_stats` is non-null, folds them into the running averages.
  Tensor forward(const ParameterSet& params, const ParameterSet& buffers, const Tensor& x, Phase phase,
                 BatchNormCache* cache, ParameterSet* running_stats) const;
  /// Gradient through the training-phase transform.
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const BatchNormCache& cache,
                  const Tensor& grad_out) const;

 private:
  std::size_t channels_ = 0;
  std::size_t gamma_ = 0, beta_ = 0;
  std::size_t running_mean_ = 0, running_var_ = 0;
};

void relu_inplace(Tensor& x);
/// grad *= (activated > 0)
void relu_backward_inplace(const Tensor& activated, Tensor& grad);

struct SqueezeExciteCache {
  Tensor input;
  Tensor squeezed;  // (batch, channels)
  Tensor hidden;    // post-ReLU bottleneck
  Tensor gate;      // sigmoid output
};

/// Squeeze-and-excitation channel gate with a reduction-ratio bottleneck.
class SqueezeExcite {
 public:
  SqueezeExcite() = default;
  SqueezeExcite(ParameterSet& params, const std::string& prefix, std::size_t channels, std::size_t reduction,
                Rng& rng);

  std::size_t parameter_count() const noexcept { return reduce_.parameter_count() + expand_.parameter_count(); }

  Tensor forward(const ParameterSet& params, const Tensor& x, SqueezeExciteCache* cache) const;
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const SqueezeExciteCache& cache,
                  const Tensor& grad_out) const;

 private:
  Linear reduce_;
  Linear expand_;
};

/// Non-overlapping average pooling over the last two axes.
struct AvgPool2d {
  std::size_t pool_h = 1, pool_w = 1;

  Tensor forward(const Tensor& x) const;
  Tensor backward(const Shape& input_shape, const Tensor& grad_out) const;
};

struct SincCache {
  Tensor padded;   // (batch, padded_samples)
  Tensor filters;  // (filters, kernel)
};

/// Band-pass filterbank parameterized by learnable low cut-off and bandwidth
/// per filter (Hz), applied as a strided 1D convolution over the waveform.
/// Output (batch, filters, ceil(samples / stride)).
class SincConv {
 public:
  static constexpr double kMinLowHz = 50.0;
  static constexpr double kMinBandHz = 50.0;

  SincConv() = default;
  SincConv(ParameterSet& params, const std::string& prefix, std::size_t filters, std::size_t kernel,
           std::size_t stride, double sample_rate);

  std::size_t filters() const noexcept { return filters_; }
  std::size_t output_steps(std::size_t samples) const noexcept;
  std::size_t parameter_count() const noexcept { return 2 * filters_; }

  /// Materialized impulse responses, (filters, kernel).
  Tensor filter_bank(const ParameterSet& params) const;
  Tensor forward(const ParameterSet& params, const Tensor& waveforms, SincCache* cache) const;
  /// Accumulates cut-off gradients; the waveform is not differentiated.
  void backward(const ParameterSet& params, ParameterSet& grads, const SincCache& cache,
                const Tensor& grad_out) const;

 private:
  std::size_t filters_ = 0, kernel_ = 0, stride_ = 1;
  double sample_rate_ = 16000.0;
  std::size_t low_ = 0, band_ = 0;
};

/// (batch, channels, freq, time) -> (batch, time, channels), averaging the
/// frequency axis.
Tensor freq_mean_to_sequence(const Tensor& x);
Tensor freq_mean_to_sequence_backward(const Shape& input_shape, const Tensor& grad_out);

struct LstmCache {
  Tensor gates;       // (batch, time, 4*hidden): i, f, g, o after nonlinearity
  Tensor cells;       // (batch, time, hidden)
  Tensor cells_tanh;  // tanh(cells)
  Tensor hidden;      // (batch, time, hidden)
};

/// One direction of an LSTM layer. Gate order i, f, g, o; single bias.
class LstmDirection {
 public:
  LstmDirection() = default;
  LstmDirection(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                bool reverse, Rng& rng);

  std::size_t hidden_size() const noexcept { return hidden_; }
  std::size_t parameter_count() const noexcept { return 4 * hidden_ * (input_ + hidden_) + 4 * hidden_; }

  /// x (batch, time, input) -> hidden states (batch, time, hidden), indexed
  /// by original time even when running in reverse.
  Tensor forward(const ParameterSet& params, const Tensor& x, LstmCache* cache) const;
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x, const LstmCache& cache,
                  const Tensor& grad_hidden) const;

 private:
  std::size_t input_ = 0, hidden_ = 0;
  bool reverse_ = false;
  std::size_t w_ih_ = 0, w_hh_ = 0, bias_ = 0;
};

struct RecurrentCache {
  std::vector<Tensor> layer_inputs;
  std::vector<LstmCache> forward_dir;
  std::vector<LstmCache> backward_dir;
};

/// Stack of bidirectional LSTM layers; output (batch, time, 2*hidden).
class BiLstmStack {
 public:
  BiLstmStack() = default;
  BiLstmStack(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
              std::size_t layers, Rng& rng);

  std::size_t output_size() const noexcept { return 2 * hidden_; }
  std::size_t parameter_count() const noexcept;

  Tensor forward(const ParameterSet& params, const Tensor& x, RecurrentCache* cache) const;
  Tensor backward(const ParameterSet& params, ParameterSet& grads, const RecurrentCache& cache,
                  const Tensor& grad_out) const;

 private:
  std::size_t hidden_ = 0;
  std::vector<LstmDirection> fwd_;
  std::vector<LstmDirection> bwd_;
};

/// Concatenate (batch, c_i, ...) tensors along axis 1.
Tensor concat_channels(const std::vector<const Tensor*>& parts);
/// Inverse of concat_channels for gradients: slice [offset, offset + channels).
Tensor slice_channels(const Tensor& x, std::size_t offset, std::size_t channels);

}  // namespace mexosd::nn
