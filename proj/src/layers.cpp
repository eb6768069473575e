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

#include "mexosd/layers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "mexosd/error.hpp"
#include "mexosd/kernels.hpp"

namespace mexosd::nn {
namespace {

void init_uniform(Tensor& t, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : t.values()) v = dist(rng);
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

// ---------------------------------------------------------------- Linear

Linear::Linear(ParameterSet& params, const std::string& prefix, std::size_t in, std::size_t out, Rng& rng)
    : in_(in), out_(out) {
  weight_ = params.add(prefix + ".weight", {out, in});
  bias_ = params.add(prefix + ".bias", {out});
  init_uniform(params[weight_], std::sqrt(6.0 / static_cast<double>(in)), rng);
}

Tensor Linear::forward(const ParameterSet& params, const Tensor& x) const {
  if (x.rank() == 0 || x.shape().back() != in_) {
    throw ShapeError("linear layer expects last axis " + std::to_string(in_) + ", got " +
                     shape_string(x.shape()));
  }
  const auto& k = kernels::active();
  Shape out_shape = x.shape();
  out_shape.back() = out_;
  Tensor y(out_shape);
  const std::size_t rows = x.size() / in_;
  const double* w = params[weight_].data();
  const double* b = params[bias_].data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * in_;
    double* yr = y.data() + r * out_;
    for (std::size_t o = 0; o < out_; ++o) yr[o] = b[o] + k.dot(w + o * in_, xr, in_);
  }
  return y;
}

Tensor Linear::backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x, const Tensor& grad_out,
                        bool want_input_grad) const {
  const auto& k = kernels::active();
  const std::size_t rows = x.size() / in_;
  const double* w = params[weight_].data();
  double* gw = grads[weight_].data();
  double* gb = grads[bias_].data();
  Tensor gx;
  if (want_input_grad) gx = Tensor(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * in_;
    const double* gr = grad_out.data() + r * out_;
    for (std::size_t o = 0; o < out_; ++o) {
      const double g = gr[o];
      if (g == 0.0) continue;
      gb[o] += g;
      k.axpy(g, xr, gw + o * in_, in_);
      if (want_input_grad) k.axpy(g, w + o * in_, gx.data() + r * in_, in_);
    }
  }
  return gx;
}

// ---------------------------------------------------------------- Conv2d
//
// Each input plane is copied into a zero-padded buffer of width W + 2p. The
// output is accumulated in the same padded-width layout, which turns every
// kernel tap into one contiguous axpy; the 2p trailing columns of each
// output row are scratch and are dropped on copy-out.

namespace {

struct PaddedGeometry {
  std::size_t h, w, pad, wp, hp;
  std::size_t plane;  // padded plane length incl. tail slack
  std::size_t span;   // h * wp, flattened output length
};

PaddedGeometry geometry(std::size_t h, std::size_t w, std::size_t k) {
  const std::size_t pad = k / 2;
  PaddedGeometry g{h, w, pad, w + 2 * pad, h + 2 * pad, 0, 0};
  g.plane = g.hp * g.wp + 2 * pad;
  g.span = h * g.wp;
  return g;
}

void pad_planes(const double* src, std::size_t channels, const PaddedGeometry& g, std::vector<double>& dst) {
  dst.assign(channels * g.plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < g.h; ++y) {
      std::copy_n(src + (c * g.h + y) * g.w, g.w, dst.data() + c * g.plane + (y + g.pad) * g.wp + g.pad);
    }
  }
}

}  // namespace

Conv2d::Conv2d(ParameterSet& params, const std::string& prefix, std::size_t in_channels, std::size_t out_channels,
               std::size_t kernel, Rng& rng)
    : cin_(in_channels), cout_(out_channels), k_(kernel) {
  if (kernel % 2 == 0) throw ConfigError(prefix + ".kernel", "convolution kernels must be odd");
  weight_ = params.add(prefix + ".weight", {cout_, cin_, k_, k_});
  bias_ = params.add(prefix + ".bias", {cout_});
  init_uniform(params[weight_], std::sqrt(6.0 / static_cast<double>(cin_ * k_ * k_)), rng);
}

Tensor Conv2d::forward(const ParameterSet& params, const Tensor& x) const {
  if (x.rank() != 4 || x.dim(1) != cin_) {
    throw ShapeError("conv2d expects (batch, " + std::to_string(cin_) + ", h, w), got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  Tensor y({batch, cout_, h, w});
  const auto& kt = kernels::active();
  const double* weight = params[weight_].data();
  const double* bias = params[bias_].data();
  const std::size_t taps = k_ * k_;

  if (k_ == 1) {
    const std::size_t hw = h * w;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = x.data() + b * cin_ * hw;
      for (std::size_t co = 0; co < cout_; ++co) {
        double* yp = y.data() + (b * cout_ + co) * hw;
        std::fill_n(yp, hw, bias[co]);
        for (std::size_t ci = 0; ci < cin_; ++ci) kt.axpy(weight[co * cin_ + ci], xb + ci * hw, yp, hw);
      }
    }
    return y;
  }

  const PaddedGeometry g = geometry(h, w, k_);
  std::vector<double> padded;
  std::vector<double> acc(g.span);
  for (std::size_t b = 0; b < batch; ++b) {
    pad_planes(x.data() + b * cin_ * h * w, cin_, g, padded);
    for (std::size_t co = 0; co < cout_; ++co) {
      std::fill(acc.begin(), acc.end(), bias[co]);
      for (std::size_t ci = 0; ci < cin_; ++ci) {
        const double* plane = padded.data() + ci * g.plane;
        const double* wk = weight + (co * cin_ + ci) * taps;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            kt.axpy(wk[ky * k_ + kx], plane + ky * g.wp + kx, acc.data(), g.span);
          }
        }
      }
      double* yp = y.data() + (b * cout_ + co) * h * w;
      for (std::size_t yy = 0; yy < h; ++yy) std::copy_n(acc.data() + yy * g.wp, w, yp + yy * w);
    }
  }
  return y;
}

Tensor Conv2d::backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x,
                        const Tensor& grad_out) const {
  const std::size_t batch = x.dim(0), h = x.dim(2), w = x.dim(3);
  const auto& kt = kernels::active();
  const double* weight = params[weight_].data();
  double* gw = grads[weight_].data();
  double* gb = grads[bias_].data();
  Tensor gx(x.shape());
  const std::size_t taps = k_ * k_;
  const std::size_t hw = h * w;

  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t co = 0; co < cout_; ++co) {
      const double* gp = grad_out.data() + (b * cout_ + co) * hw;
      double s = 0.0;
      for (std::size_t i = 0; i < hw; ++i) s += gp[i];
      gb[co] += s;
    }
  }

  if (k_ == 1) {
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xb = x.data() + b * cin_ * hw;
      double* gxb = gx.data() + b * cin_ * hw;
      for (std::size_t co = 0; co < cout_; ++co) {
        const double* gp = grad_out.data() + (b * cout_ + co) * hw;
        for (std::size_t ci = 0; ci < cin_; ++ci) {
          gw[co * cin_ + ci] += kt.dot(gp, xb + ci * hw, hw);
          kt.axpy(weight[co * cin_ + ci], gp, gxb + ci * hw, hw);
        }
      }
    }
    return gx;
  }

  const PaddedGeometry g = geometry(h, w, k_);
  std::vector<double> padded;
  std::vector<double> grad_padded(cin_ * g.plane);
  std::vector<double> gout_wide(g.span);
  for (std::size_t b = 0; b < batch; ++b) {
    pad_planes(x.data() + b * cin_ * hw, cin_, g, padded);
    std::fill(grad_padded.begin(), grad_padded.end(), 0.0);
    for (std::size_t co = 0; co < cout_; ++co) {
      // Scratch columns stay zero so they contribute nothing.
      std::fill(gout_wide.begin(), gout_wide.end(), 0.0);
      const double* gp = grad_out.data() + (b * cout_ + co) * hw;
      for (std::size_t yy = 0; yy < h; ++yy) std::copy_n(gp + yy * w, w, gout_wide.data() + yy * g.wp);
      for (std::size_t ci = 0; ci < cin_; ++ci) {
        const double* plane = padded.data() + ci * g.plane;
        double* gplane = grad_padded.data() + ci * g.plane;
        const double* wk = weight + (co * cin_ + ci) * taps;
        double* gwk = gw + (co * cin_ + ci) * taps;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const std::size_t off = ky * g.wp + kx;
            gwk[ky * k_ + kx] += kt.dot(gout_wide.data(), plane + off, g.span);
            kt.axpy(wk[ky * k_ + kx], gout_wide.data(), gplane + off, g.span);
          }
        }
      }
    }
    double* gxb = gx.data() + b * cin_ * hw;
    for (std::size_t ci = 0; ci < cin_; ++ci) {
      for (std::size_t yy = 0; yy < h; ++yy) {
        std::copy_n(grad_padded.data() + ci * g.plane + (yy + g.pad) * g.wp + g.pad, w, gxb + (ci * h + yy) * w);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------- BatchNorm

BatchNorm::BatchNorm(ParameterSet& params, ParameterSet& buffers, const std::string& prefix, std::size_t channels)
    : channels_(channels) {
  gamma_ = params.add(prefix + ".gamma", {channels});
  beta_ = params.add(prefix + ".beta", {channels});
  params[gamma_].fill(1.0);
  running_mean_ = buffers.add(prefix + ".running_mean", {channels});
  running_var_ = buffers.add(prefix + ".running_var", {channels});
  buffers[running_var_].fill(1.0);
}

Tensor BatchNorm::forward(const ParameterSet& params, const ParameterSet& buffers, const Tensor& x, Phase phase,
                          BatchNormCache* cache, ParameterSet* running_stats) const {
  if (x.rank() < 2 || x.dim(1) != channels_) {
    throw ShapeError("batch norm expects " + std::to_string(channels_) + " channels, got " +
                     shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0);
  const std::size_t inner = x.size() / (batch * channels_);
  const double* gamma = params[gamma_].data();
  const double* beta = params[beta_].data();
  Tensor y(x.shape());

  if (phase == Phase::inference) {
    const double* rm = buffers[running_mean_].data();
    const double* rv = buffers[running_var_].data();
    for (std::size_t c = 0; c < channels_; ++c) {
      const double inv = 1.0 / std::sqrt(rv[c] + kEpsilon);
      const double scale = gamma[c] * inv;
      const double shift = beta[c] - rm[c] * scale;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* xp = x.data() + (b * channels_ + c) * inner;
        double* yp = y.data() + (b * channels_ + c) * inner;
        for (std::size_t i = 0; i < inner; ++i) yp[i] = xp[i] * scale + shift;
      }
    }
    return y;
  }

  const double n = static_cast<double>(batch * inner);
  if (cache) {
    cache->normalized = Tensor(x.shape());
    cache->inv_std.assign(channels_, 0.0);
  }
  for (std::size_t c = 0; c < channels_; ++c) {
    double mean = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = x.data() + (b * channels_ + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) mean += xp[i];
    }
    mean /= n;
    double var = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const double* xp = x.data() + (b * channels_ + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    }
    var /= n;
    const double inv = 1.0 / std::sqrt(var + kEpsilon);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        const double xhat = (x[base + i] - mean) * inv;
        if (cache) cache->normalized[base + i] = xhat;
        y[base + i] = gamma[c] * xhat + beta[c];
      }
    }
    if (cache) cache->inv_std[c] = inv;
    if (running_stats) {
      double& rm = (*running_stats)[running_mean_][c];
      double& rv = (*running_stats)[running_var_][c];
      const double unbiased = n > 1.0 ? var * n / (n - 1.0) : var;
      rm = (1.0 - kMomentum) * rm + kMomentum * mean;
      rv = (1.0 - kMomentum) * rv + kMomentum * unbiased;
    }
  }
  return y;
}

Tensor BatchNorm::backward(const ParameterSet& params, ParameterSet& grads, const BatchNormCache& cache,
                           const Tensor& grad_out) const {
  const Tensor& xhat = cache.normalized;
  const std::size_t batch = xhat.dim(0);
  const std::size_t inner = xhat.size() / (batch * channels_);
  const double n = static_cast<double>(batch * inner);
  const double* gamma = params[gamma_].data();
  double* ggamma = grads[gamma_].data();
  double* gbeta = grads[beta_].data();
  Tensor gx(xhat.shape());
  for (std::size_t c = 0; c < channels_; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        sum_g += grad_out[base + i];
        sum_gx += grad_out[base + i] * xhat[base + i];
      }
    }
    ggamma[c] += sum_gx;
    gbeta[c] += sum_g;
    const double k = gamma[c] * cache.inv_std[c] / n;
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t base = (b * channels_ + c) * inner;
      for (std::size_t i = 0; i < inner; ++i) {
        gx[base + i] = k * (n * grad_out[base + i] - sum_g - xhat[base + i] * sum_gx);
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------------ ReLU

void relu_inplace(Tensor& x) {
  for (double& v : x.values()) v = v > 0.0 ? v : 0.0;
}

void relu_backward_inplace(const Tensor& activated, Tensor& grad) {
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!(activated[i] > 0.0)) grad[i] = 0.0;
  }
}

// ---------------------------------------------------------- SqueezeExcite

SqueezeExcite::SqueezeExcite(ParameterSet& params, const std::string& prefix, std::size_t channels,
                             std::size_t reduction, Rng& rng) {
  const std::size_t bottleneck = channels / reduction;
  if (bottleneck == 0) throw ConfigError("se_reduction", "reduction leaves no bottleneck channels");
  reduce_ = Linear(params, prefix + ".reduce", channels, bottleneck, rng);
  expand_ = Linear(params, prefix + ".expand", bottleneck, channels, rng);
}

Tensor SqueezeExcite::forward(const ParameterSet& params, const Tensor& x, SqueezeExciteCache* cache) const {
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.size() / (batch * channels);
  Tensor squeezed({batch, channels});
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* xp = x.data() + bc * inner;
    double s = 0.0;
    for (std::size_t i = 0; i < inner; ++i) s += xp[i];
    squeezed[bc] = s / static_cast<double>(inner);
  }
  Tensor hidden = reduce_.forward(params, squeezed);
  relu_inplace(hidden);
  Tensor gate = expand_.forward(params, hidden);
  for (double& v : gate.values()) v = sigmoid(v);

  Tensor y(x.shape());
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* xp = x.data() + bc * inner;
    double* yp = y.data() + bc * inner;
    for (std::size_t i = 0; i < inner; ++i) yp[i] = xp[i] * gate[bc];
  }
  if (cache) {
    cache->input = x;
    cache->squeezed = std::move(squeezed);
    cache->hidden = std::move(hidden);
    cache->gate = std::move(gate);
  }
  return y;
}

Tensor SqueezeExcite::backward(const ParameterSet& params, ParameterSet& grads, const SqueezeExciteCache& cache,
                               const Tensor& grad_out) const {
  const Tensor& x = cache.input;
  const std::size_t batch = x.dim(0), channels = x.dim(1);
  const std::size_t inner = x.size() / (batch * channels);
  const auto& kt = kernels::active();
  Tensor gx(x.shape());
  Tensor ggate({batch, channels});
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double* gp = grad_out.data() + bc * inner;
    const double* xp = x.data() + bc * inner;
    double* gxp = gx.data() + bc * inner;
    const double gate = cache.gate[bc];
    for (std::size_t i = 0; i < inner; ++i) gxp[i] = gp[i] * gate;
    ggate[bc] = kt.dot(gp, xp, inner) * gate * (1.0 - gate);
  }
  Tensor ghidden = expand_.backward(params, grads, cache.hidden, ggate);
  relu_backward_inplace(cache.hidden, ghidden);
  Tensor gsqueezed = reduce_.backward(params, grads, cache.squeezed, ghidden);
  for (std::size_t bc = 0; bc < batch * channels; ++bc) {
    const double add = gsqueezed[bc] / static_cast<double>(inner);
    double* gxp = gx.data() + bc * inner;
    for (std::size_t i = 0; i < inner; ++i) gxp[i] += add;
  }
  return gx;
}

// -------------------------------------------------------------- AvgPool2d

Tensor AvgPool2d::forward(const Tensor& x) const {
  const std::size_t r = x.rank();
  const std::size_t h = x.dim(r - 2), w = x.dim(r - 1);
  if (h % pool_h || w % pool_w) {
    throw ShapeError("average pool (" + std::to_string(pool_h) + ", " + std::to_string(pool_w) +
                     ") does not tile " + shape_string(x.shape()));
  }
  const std::size_t oh = h / pool_h, ow = w / pool_w;
  const std::size_t planes = x.size() / (h * w);
  Shape out_shape = x.shape();
  out_shape[r - 2] = oh;
  out_shape[r - 1] = ow;
  Tensor y(out_shape);
  const double norm = 1.0 / static_cast<double>(pool_h * pool_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* xp = x.data() + p * h * w;
    double* yp = y.data() + p * oh * ow;
    for (std::size_t yy = 0; yy < h; ++yy) {
      double* yrow = yp + (yy / pool_h) * ow;
      const double* xrow = xp + yy * w;
      for (std::size_t xx = 0; xx < w; ++xx) yrow[xx / pool_w] += xrow[xx];
    }
    for (std::size_t i = 0; i < oh * ow; ++i) yp[i] *= norm;
  }
  return y;
}

Tensor AvgPool2d::backward(const Shape& input_shape, const Tensor& grad_out) const {
  const std::size_t r = input_shape.size();
  const std::size_t h = input_shape[r - 2], w = input_shape[r - 1];
  const std::size_t oh = h / pool_h, ow = w / pool_w;
  const std::size_t planes = shape_volume(input_shape) / (h * w);
  Tensor gx(input_shape);
  const double norm = 1.0 / static_cast<double>(pool_h * pool_w);
  for (std::size_t p = 0; p < planes; ++p) {
    const double* gp = grad_out.data() + p * oh * ow;
    double* gxp = gx.data() + p * h * w;
    for (std::size_t yy = 0; yy < h; ++yy) {
      const double* grow = gp + (yy / pool_h) * ow;
      for (std::size_t xx = 0; xx < w; ++xx) gxp[yy * w + xx] = grow[xx / pool_w] * norm;
    }
  }
  return gx;
}

// --------------------------------------------------------------- SincConv

namespace {

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

struct CutOffs {
  double low, high;
  bool clamped;  // high pinned at Nyquist
};

CutOffs cutoffs(double low_param, double band_param, double sample_rate) {
  const double nyquist = sample_rate / 2.0;
  const double low = SincConv::kMinLowHz + std::abs(low_param);
  double high = low + SincConv::kMinBandHz + std::abs(band_param);
  bool clamped = false;
  if (high > nyquist) {
    high = nyquist;
    clamped = true;
  }
  return {low, high, clamped};
}

// 2 f sinc(2 pi f t), written so that d/df = 2 cos(2 pi f t) everywhere.
double band_edge(double f, double t) {
  if (t == 0.0) return 2.0 * f;
  return std::sin(2.0 * std::numbers::pi * f * t) / (std::numbers::pi * t);
}

double hamming(std::size_t n, std::size_t kernel) {
  if (kernel == 1) return 1.0;
  return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(kernel - 1));
}

double tap_time(std::size_t n, std::size_t kernel, double sample_rate) {
  return (static_cast<double>(n) - static_cast<double>(kernel - 1) / 2.0) / sample_rate;
}

}  // namespace

SincConv::SincConv(ParameterSet& params, const std::string& prefix, std::size_t filters, std::size_t kernel,
                   std::size_t stride, double sample_rate)
    : filters_(filters), kernel_(kernel), stride_(stride), sample_rate_(sample_rate) {
  if (kernel % 2 == 0) throw ConfigError("sinc_kernel", "must be odd");
  low_ = params.add(prefix + ".low_hz", {filters});
  band_ = params.add(prefix + ".band_hz", {filters});
  // Mel-spaced initial bands covering [30 Hz, Nyquist - min_low - min_band].
  const double lo_mel = hz_to_mel(30.0);
  const double hi_mel = hz_to_mel(sample_rate / 2.0 - (kMinLowHz + kMinBandHz));
  std::vector<double> edges(filters + 1);
  for (std::size_t i = 0; i <= filters; ++i) {
    const double frac = static_cast<double>(i) / static_cast<double>(filters);
    edges[i] = mel_to_hz(lo_mel + frac * (hi_mel - lo_mel));
  }
  for (std::size_t f = 0; f < filters; ++f) {
    params[low_][f] = edges[f];
    params[band_][f] = edges[f + 1] - edges[f];
  }
}

std::size_t SincConv::output_steps(std::size_t samples) const noexcept {
  return (samples + stride_ - 1) / stride_;
}

Tensor SincConv::filter_bank(const ParameterSet& params) const {
  Tensor bank({filters_, kernel_});
  for (std::size_t f = 0; f < filters_; ++f) {
    const CutOffs c = cutoffs(params[low_][f], params[band_][f], sample_rate_);
    const double band = c.high - c.low;
    for (std::size_t n = 0; n < kernel_; ++n) {
      const double t = tap_time(n, kernel_, sample_rate_);
      bank[f * kernel_ + n] = hamming(n, kernel_) * (band_edge(c.high, t) - band_edge(c.low, t)) / (2.0 * band);
    }
  }
  return bank;
}

Tensor SincConv::forward(const ParameterSet& params, const Tensor& waveforms, SincCache* cache) const {
  if (waveforms.rank() != 2) throw ShapeError("sinc layer expects (batch, samples)");
  const std::size_t batch = waveforms.dim(0), samples = waveforms.dim(1);
  const std::size_t steps = output_steps(samples);
  const std::size_t needed = (steps - 1) * stride_ + kernel_;
  const std::size_t pad_total = needed > samples ? needed - samples : 0;
  const std::size_t pad_left = pad_total / 2;
  const std::size_t padded_len = samples + pad_total;

  Tensor padded({batch, padded_len});
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(waveforms.data() + b * samples, samples, padded.data() + b * padded_len + pad_left);
  }
  Tensor bank = filter_bank(params);
  const auto& kt = kernels::active();
  Tensor y({batch, filters_, steps});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xp = padded.data() + b * padded_len;
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* h = bank.data() + f * kernel_;
      double* yp = y.data() + (b * filters_ + f) * steps;
      for (std::size_t t = 0; t < steps; ++t) yp[t] = kt.dot(h, xp + t * stride_, kernel_);
    }
  }
  if (cache) {
    cache->padded = std::move(padded);
    cache->filters = std::move(bank);
  }
  return y;
}

void SincConv::backward(const ParameterSet& params, ParameterSet& grads, const SincCache& cache,
                        const Tensor& grad_out) const {
  const std::size_t batch = cache.padded.dim(0), padded_len = cache.padded.dim(1);
  const std::size_t steps = grad_out.dim(2);
  const auto& kt = kernels::active();
  Tensor gbank({filters_, kernel_});
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xp = cache.padded.data() + b * padded_len;
    for (std::size_t f = 0; f < filters_; ++f) {
      const double* gp = grad_out.data() + (b * filters_ + f) * steps;
      double* gh = gbank.data() + f * kernel_;
      for (std::size_t t = 0; t < steps; ++t) {
        if (gp[t] != 0.0) kt.axpy(gp[t], xp + t * stride_, gh, kernel_);
      }
    }
  }
  for (std::size_t f = 0; f < filters_; ++f) {
    const double low_param = params[low_][f];
    const double band_param = params[band_][f];
    const CutOffs c = cutoffs(low_param, band_param, sample_rate_);
    const double band = c.high - c.low;
    double d_low = 0.0, d_high = 0.0;
    for (std::size_t n = 0; n < kernel_; ++n) {
      const double t = tap_time(n, kernel_, sample_rate_);
      const double w = hamming(n, kernel_);
      const double num = band_edge(c.high, t) - band_edge(c.low, t);
      const double g = gbank[f * kernel_ + n];
      const double cos_h = 2.0 * std::cos(2.0 * std::numbers::pi * c.high * t);
      const double cos_l = 2.0 * std::cos(2.0 * std::numbers::pi * c.low * t);
      d_high += g * w * (cos_h / (2.0 * band) - num / (2.0 * band * band));
      d_low += g * w * (-cos_l / (2.0 * band) + num / (2.0 * band * band));
    }
    const double sign_low = low_param >= 0.0 ? 1.0 : -1.0;
    const double sign_band = band_param >= 0.0 ? 1.0 : -1.0;
    const double high_follows = c.clamped ? 0.0 : 1.0;
    grads[low_][f] += sign_low * (d_low + high_follows * d_high);
    grads[band_][f] += sign_band * high_follows * d_high;
  }
}

// ---------------------------------------------------- frequency pooling

Tensor freq_mean_to_sequence(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("frequency pooling expects (batch, channels, freq, time)");
  const std::size_t batch = x.dim(0), channels = x.dim(1), freq = x.dim(2), time = x.dim(3);
  Tensor y({batch, time, channels});
  const double norm = 1.0 / static_cast<double>(freq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      const double* xp = x.data() + (b * channels + c) * freq * time;
      for (std::size_t t = 0; t < time; ++t) {
        double s = 0.0;
        for (std::size_t f = 0; f < freq; ++f) s += xp[f * time + t];
        y[(b * time + t) * channels + c] = s * norm;
      }
    }
  }
  return y;
}

Tensor freq_mean_to_sequence_backward(const Shape& input_shape, const Tensor& grad_out) {
  const std::size_t batch = input_shape[0], channels = input_shape[1], freq = input_shape[2],
                    time = input_shape[3];
  Tensor gx(input_shape);
  const double norm = 1.0 / static_cast<double>(freq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < channels; ++c) {
      double* gp = gx.data() + (b * channels + c) * freq * time;
      for (std::size_t t = 0; t < time; ++t) {
        const double g = grad_out[(b * time + t) * channels + c] * norm;
        for (std::size_t f = 0; f < freq; ++f) gp[f * time + t] = g;
      }
    }
  }
  return gx;
}

// ------------------------------------------------------------------ LSTM

LstmDirection::LstmDirection(ParameterSet& params, const std::string& prefix, std::size_t input,
                             std::size_t hidden, bool reverse, Rng& rng)
    : input_(input), hidden_(hidden), reverse_(reverse) {
  w_ih_ = params.add(prefix + ".w_ih", {4 * hidden, input});
  w_hh_ = params.add(prefix + ".w_hh", {4 * hidden, hidden});
  bias_ = params.add(prefix + ".bias", {4 * hidden});
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden));
  init_uniform(params[w_ih_], bound, rng);
  init_uniform(params[w_hh_], bound, rng);
  init_uniform(params[bias_], bound, rng);
}

Tensor LstmDirection::forward(const ParameterSet& params, const Tensor& x, LstmCache* cache) const {
  if (x.rank() != 3 || x.dim(2) != input_) {
    throw ShapeError("lstm expects (batch, time, " + std::to_string(input_) + "), got " + shape_string(x.shape()));
  }
  const std::size_t batch = x.dim(0), time = x.dim(1), hsz = hidden_, gsz = 4 * hidden_;
  const auto& kt = kernels::active();
  const double* w_ih = params[w_ih_].data();
  const double* w_hh = params[w_hh_].data();
  const double* bias = params[bias_].data();

  Tensor gates({batch, time, gsz});
  Tensor cells({batch, time, hsz});
  Tensor cells_tanh({batch, time, hsz});
  Tensor hidden({batch, time, hsz});
  std::vector<double> zero(hsz, 0.0);
  std::vector<double> z(gsz);

  for (std::size_t b = 0; b < batch; ++b) {
    const double* h_prev = zero.data();
    const double* c_prev = zero.data();
    for (std::size_t s = 0; s < time; ++s) {
      const std::size_t t = reverse_ ? time - 1 - s : s;
      const std::size_t row = b * time + t;
      const double* xt = x.data() + row * input_;
      for (std::size_t r = 0; r < gsz; ++r) {
        z[r] = bias[r] + kt.dot(w_ih + r * input_, xt, input_) + kt.dot(w_hh + r * hsz, h_prev, hsz);
      }
      double* gt = gates.data() + row * gsz;
      double* ct = cells.data() + row * hsz;
      double* tt = cells_tanh.data() + row * hsz;
      double* ht = hidden.data() + row * hsz;
      for (std::size_t j = 0; j < hsz; ++j) {
        const double i = sigmoid(z[j]);
        const double f = sigmoid(z[hsz + j]);
        const double g = std::tanh(z[2 * hsz + j]);
        const double o = sigmoid(z[3 * hsz + j]);
        gt[j] = i;
        gt[hsz + j] = f;
        gt[2 * hsz + j] = g;
        gt[3 * hsz + j] = o;
        ct[j] = f * c_prev[j] + i * g;
        tt[j] = std::tanh(ct[j]);
        ht[j] = o * tt[j];
      }
      h_prev = ht;
      c_prev = ct;
    }
  }
  if (cache) {
    cache->gates = std::move(gates);
    cache->cells = std::move(cells);
    cache->cells_tanh = std::move(cells_tanh);
    cache->hidden = hidden;
  }
  return hidden;
}

Tensor LstmDirection::backward(const ParameterSet& params, ParameterSet& grads, const Tensor& x,
                               const LstmCache& cache, const Tensor& grad_hidden) const {
  const std::size_t batch = x.dim(0), time = x.dim(1), hsz = hidden_, gsz = 4 * hidden_;
  const auto& kt = kernels::active();
  const double* w_ih = params[w_ih_].data();
  const double* w_hh = params[w_hh_].data();
  double* gw_ih = grads[w_ih_].data();
  double* gw_hh = grads[w_hh_].data();
  double* gbias = grads[bias_].data();

  Tensor gx(x.shape());
  std::vector<double> zero(hsz, 0.0);
  std::vector<double> dh_next(hsz), dc_next(hsz), dh_next_acc(hsz), dz(gsz);

  for (std::size_t b = 0; b < batch; ++b) {
    std::fill(dh_next.begin(), dh_next.end(), 0.0);
    std::fill(dc_next.begin(), dc_next.end(), 0.0);
    for (std::size_t s = time; s-- > 0;) {
      const std::size_t t = reverse_ ? time - 1 - s : s;
      const std::size_t row = b * time + t;
      const double* h_prev = zero.data();
      const double* c_prev = zero.data();
      if (s > 0) {
        const std::size_t tp = reverse_ ? time - s : s - 1;
        h_prev = cache.hidden.data() + (b * time + tp) * hsz;
        c_prev = cache.cells.data() + (b * time + tp) * hsz;
      }
      const double* gt = cache.gates.data() + row * gsz;
      const double* tt = cache.cells_tanh.data() + row * hsz;
      const double* gh = grad_hidden.data() + row * hsz;
      for (std::size_t j = 0; j < hsz; ++j) {
        const double i = gt[j], f = gt[hsz + j], g = gt[2 * hsz + j], o = gt[3 * hsz + j];
        const double dh = gh[j] + dh_next[j];
        const double d_o = dh * tt[j];
        const double dc = dh * o * (1.0 - tt[j] * tt[j]) + dc_next[j];
        dz[j] = dc * g * i * (1.0 - i);
        dz[hsz + j] = dc * c_prev[j] * f * (1.0 - f);
        dz[2 * hsz + j] = dc * i * (1.0 - g * g);
        dz[3 * hsz + j] = d_o * o * (1.0 - o);
        dc_next[j] = dc * f;
      }
      const double* xt = x.data() + row * input_;
      double* gxt = gx.data() + row * input_;
      std::fill(dh_next_acc.begin(), dh_next_acc.end(), 0.0);
      for (std::size_t r = 0; r < gsz; ++r) {
        const double d = dz[r];
        if (d == 0.0) continue;
        gbias[r] += d;
        kt.axpy(d, xt, gw_ih + r * input_, input_);
        if (s > 0) kt.axpy(d, h_prev, gw_hh + r * hsz, hsz);
        kt.axpy(d, w_ih + r * input_, gxt, input_);
        kt.axpy(d, w_hh + r * hsz, dh_next_acc.data(), hsz);
      }
      dh_next.swap(dh_next_acc);
    }
  }
  return gx;
}

// ------------------------------------------------------------ BiLstmStack

BiLstmStack::BiLstmStack(ParameterSet& params, const std::string& prefix, std::size_t input, std::size_t hidden,
                         std::size_t layers, Rng& rng)
    : hidden_(hidden) {
  std::size_t in = input;
  for (std::size_t l = 0; l < layers; ++l) {
    const std::string base = prefix + ".layer" + std::to_string(l);
    fwd_.emplace_back(params, base + ".forward", in, hidden, false, rng);
    bwd_.emplace_back(params, base + ".backward", in, hidden, true, rng);
    in = 2 * hidden;
  }
}

std::size_t BiLstmStack::parameter_count() const noexcept {
  std::size_t n = 0;
  for (std::size_t l = 0; l < fwd_.size(); ++l) n += fwd_[l].parameter_count() + bwd_[l].parameter_count();
  return n;
}

Tensor BiLstmStack::forward(const ParameterSet& params, const Tensor& x, RecurrentCache* cache) const {
  if (cache) {
    cache->layer_inputs.clear();
    cache->forward_dir.assign(fwd_.size(), {});
    cache->backward_dir.assign(fwd_.size(), {});
  }
  Tensor cur = x;
  for (std::size_t l = 0; l < fwd_.size(); ++l) {
    Tensor hf = fwd_[l].forward(params, cur, cache ? &cache->forward_dir[l] : nullptr);
    Tensor hb = bwd_[l].forward(params, cur, cache ? &cache->backward_dir[l] : nullptr);
    const std::size_t rows = cur.dim(0) * cur.dim(1);
    Tensor out({cur.dim(0), cur.dim(1), 2 * hidden_});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(hf.data() + r * hidden_, hidden_, out.data() + r * 2 * hidden_);
      std::copy_n(hb.data() + r * hidden_, hidden_, out.data() + r * 2 * hidden_ + hidden_);
    }
    if (cache) cache->layer_inputs.push_back(std::move(cur));
    cur = std::move(out);
  }
  return cur;
}

Tensor BiLstmStack::backward(const ParameterSet& params, ParameterSet& grads, const RecurrentCache& cache,
                             const Tensor& grad_out) const {
  Tensor g = grad_out;
  for (std::size_t l = fwd_.size(); l-- > 0;) {
    const Tensor& in = cache.layer_inputs[l];
    const std::size_t rows = in.dim(0) * in.dim(1);
    Tensor gf({in.dim(0), in.dim(1), hidden_});
    Tensor gb({in.dim(0), in.dim(1), hidden_});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(g.data() + r * 2 * hidden_, hidden_, gf.data() + r * hidden_);
      std::copy_n(g.data() + r * 2 * hidden_ + hidden_, hidden_, gb.data() + r * hidden_);
    }
    Tensor gx = fwd_[l].backward(params, grads, in, cache.forward_dir[l], gf);
    Tensor gx_b = bwd_[l].backward(params, grads, in, cache.backward_dir[l], gb);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += gx_b[i];
    g = std::move(gx);
  }
  return g;
}

// ------------------------------------------------------ channel concat

Tensor concat_channels(const std::vector<const Tensor*>& parts) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Tensor& first = *parts.front();
  const std::size_t batch = first.dim(0);
  const std::size_t inner = first.size() / (batch * first.dim(1));
  std::size_t channels = 0;
  for (const Tensor* p : parts) {
    if (p->dim(0) != batch || p->size() / (batch * p->dim(1)) != inner) {
      throw ShapeError("concat_channels: incompatible " + shape_string(p->shape()));
    }
    channels += p->dim(1);
  }
  Shape shape = first.shape();
  shape[1] = channels;
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    double* dst = out.data() + b * channels * inner;
    for (const Tensor* p : parts) {
      const std::size_t n = p->dim(1) * inner;
      std::copy_n(p->data() + b * n, n, dst);
      dst += n;
    }
  }
  return out;
}

Tensor slice_channels(const Tensor& x, std::size_t offset, std::size_t channels) {
  const std::size_t batch = x.dim(0), total = x.dim(1);
  const std::size_t inner = x.size() / (batch * total);
  Shape shape = x.shape();
  shape[1] = channels;
  Tensor out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy_n(x.data() + (b * total + offset) * inner, channels * inner, out.data() + b * channels * inner);
  }
  return out;
}

}  // namespace mexosd::nn
