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

#include "mexosd/model.hpp"

#include <cmath>
#include <string>

#include "mexosd/error.hpp"

namespace mexosd {
namespace {

void require_positive(int value, const char* field) {
  if (value <= 0) throw ConfigError(field, "must be positive, got " + std::to_string(value));
}

void add_into(Tensor& acc, const Tensor& g) {
  if (acc.empty()) {
    acc = g;
    return;
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

bool starts_with(const std::string& s, const char* prefix) { return s.rfind(prefix, 0) == 0; }

}  // namespace

// ------------------------------------------------------------ ModelConfig

int ModelConfig::sinc_steps() const { return (chunk_samples + sinc_stride - 1) / sinc_stride; }

int ModelConfig::extractor_freq_bins() const { return sinc_filters / (pool1[0] * pool2[0]); }

void ModelConfig::validate() const {
  require_positive(sample_rate_hz, "sample_rate_hz");
  require_positive(chunk_samples, "chunk_samples");
  require_positive(sinc_filters, "sinc_filters");
  require_positive(sinc_kernel, "sinc_kernel");
  require_positive(sinc_stride, "sinc_stride");
  require_positive(extractor_conv_channels[0], "extractor_conv_channels");
  require_positive(extractor_conv_channels[1], "extractor_conv_channels");
  require_positive(se_reduction, "se_reduction");
  for (int v : pool1) require_positive(v, "pool1");
  for (int v : pool2) require_positive(v, "pool2");
  require_positive(stage_channels, "stage_channels");
  require_positive(num_stages, "num_stages");
  for (int v : dc_widths) require_positive(v, "dc_widths");
  for (int v : plain_widths) require_positive(v, "plain_widths");
  require_positive(lstm_hidden, "lstm_hidden");
  require_positive(lstm_layers, "lstm_layers");
  require_positive(mlp_hidden, "mlp_hidden");
  require_positive(num_classes, "num_classes");
  require_positive(num_exits, "num_exits");
  require_positive(frames_per_chunk, "frames_per_chunk");

  if (sinc_kernel % 2 == 0) throw ConfigError("sinc_kernel", "must be odd");
  if (sample_rate_hz / 2 <= 130) throw ConfigError("sample_rate_hz", "too low for the sinc filterbank range");
  if (num_exits != num_stages) {
    throw ConfigError("num_exits", "must equal num_stages (one exit per stage), got " +
                                       std::to_string(num_exits) + " vs " + std::to_string(num_stages));
  }
  if (extractor_conv_channels[1] != stage_channels) {
    throw ConfigError("extractor_conv_channels", "second entry must equal stage_channels");
  }
  if (se_reduction > extractor_conv_channels[0]) {
    throw ConfigError("se_reduction", "exceeds the extractor channel count");
  }
  if (sinc_filters % (pool1[0] * pool2[0]) != 0) {
    throw ConfigError("sinc_filters", "must be divisible by the product of the pool frequency factors");
  }
  if (sinc_steps() != frames_per_chunk * pool1[1] * pool2[1]) {
    throw ConfigError("frames_per_chunk",
                      "ceil(chunk_samples / sinc_stride) = " + std::to_string(sinc_steps()) +
                          " must equal frames_per_chunk times the pool time factors");
  }
  if (plain_widths[1] != stage_channels) {
    throw ConfigError("plain_widths", "last width must equal stage_channels");
  }
  if (dc_widths[2] != stage_channels) throw ConfigError("dc_widths", "last width must equal stage_channels");
}

// ----------------------------------------------------------- construction

MultiExitNet MultiExitNet::build(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  MultiExitNet net;
  net.config_ = config;
  net.construct(seed);
  return net;
}

MultiExitNet MultiExitNet::from_state(const ModelConfig& config, ParameterSet parameters, ParameterSet buffers) {
  MultiExitNet net = build(config, 0);
  if (!net.params_.same_layout(parameters)) throw CheckpointError("parameter layout does not match the config");
  if (!net.buffers_.same_layout(buffers)) throw CheckpointError("buffer layout does not match the config");
  net.params_ = std::move(parameters);
  net.buffers_ = std::move(buffers);
  return net;
}

void MultiExitNet::construct(std::uint64_t seed) {
  const ModelConfig& c = config_;
  nn::Rng rng(seed);
  auto sz = [](int v) { return static_cast<std::size_t>(v); };

  sinc_ = nn::SincConv(params_, "extractor.sinc", sz(c.sinc_filters), sz(c.sinc_kernel), sz(c.sinc_stride),
                       static_cast<double>(c.sample_rate_hz));
  if (c.batch_norm) sinc_bn_ = nn::BatchNorm(params_, buffers_, "extractor.sinc_bn", sz(c.sinc_filters));

  auto make_unit = [&](const std::string& name, std::size_t in, std::size_t out, std::size_t k) {
    ConvUnit u;
    u.conv = nn::Conv2d(params_, name, in, out, k, rng);
    u.has_bn = c.batch_norm;
    if (u.has_bn) u.bn = nn::BatchNorm(params_, buffers_, name + ".bn", out);
    return u;
  };

  const std::size_t c0 = sz(c.extractor_conv_channels[0]);
  const std::size_t c1 = sz(c.extractor_conv_channels[1]);
  extractor_units_.push_back(make_unit("extractor.conv1", 1, c0, 3));
  extractor_units_.push_back(make_unit("extractor.conv2", c0, c0, 3));
  se1_ = nn::SqueezeExcite(params_, "extractor.se1", c0, sz(c.se_reduction), rng);
  pool1_ = {sz(c.pool1[0]), sz(c.pool1[1])};
  extractor_units_.push_back(make_unit("extractor.conv3", c0, c1, 3));
  extractor_units_.push_back(make_unit("extractor.conv4", c1, c1, 3));
  se2_ = nn::SqueezeExcite(params_, "extractor.se2", c1, sz(c.se_reduction), rng);
  pool2_ = {sz(c.pool2[0]), sz(c.pool2[1])};

  const std::size_t ch = sz(c.stage_channels);
  for (int k = 0; k < c.num_stages; ++k) {
    const std::string base = "stage" + std::to_string(k + 1);
    std::vector<ConvUnit> units;
    if (c.dc_enabled) {
      const std::size_t in = ch * sz(k + 1);
      units.push_back(make_unit(base + ".conv1", in, sz(c.dc_widths[0]), 1));
      units.push_back(make_unit(base + ".conv2", sz(c.dc_widths[0]), sz(c.dc_widths[1]), 3));
      units.push_back(make_unit(base + ".conv3", sz(c.dc_widths[1]), sz(c.dc_widths[2]), 1));
    } else {
      units.push_back(make_unit(base + ".conv1", ch, sz(c.plain_widths[0]), 1));
      units.push_back(make_unit(base + ".conv2", sz(c.plain_widths[0]), sz(c.plain_widths[1]), 3));
    }
    stages_.push_back(std::move(units));
  }

  recurrent_ = nn::BiLstmStack(params_, "recurrent", ch, sz(c.lstm_hidden), sz(c.lstm_layers), rng);

  for (int i = 0; i < c.num_exits; ++i) {
    const std::string base = "exit" + std::to_string(i + 1);
    Head h;
    h.reduce = nn::Linear(params_, base + ".reduce", recurrent_.output_size(), sz(c.mlp_hidden), rng);
    h.classify = nn::Linear(params_, base + ".classify", sz(c.mlp_hidden), sz(c.num_classes), rng);
    heads_.push_back(h);
  }
}

// ---------------------------------------------------------------- forward

Tensor MultiExitNet::run_unit(const ConvUnit& unit, const Tensor& x, nn::Phase phase, detail::ConvUnitCache* cache,
                              ParameterSet* running) const {
  Tensor y = unit.conv.forward(params_, x);
  if (unit.has_bn) y = unit.bn.forward(params_, buffers_, y, phase, cache ? &cache->bn : nullptr, running);
  nn::relu_inplace(y);
  if (cache) {
    cache->input = x;
    cache->output = y;
  }
  return y;
}

ExitOutputs MultiExitNet::forward(const Tensor& waveforms) const {
  return run(waveforms, nn::Phase::inference, nullptr, nullptr);
}

ExitOutputs MultiExitNet::forward(const Tensor& waveforms, nn::Phase phase, ForwardTape* tape) const {
  return run(waveforms, phase, tape, nullptr);
}

ExitOutputs MultiExitNet::forward_train(const Tensor& waveforms, ForwardTape& tape) {
  return run(waveforms, nn::Phase::training, &tape, &buffers_);
}

ExitOutputs MultiExitNet::run(const Tensor& waveforms, nn::Phase phase, ForwardTape* tape,
                              ParameterSet* running) const {
  const ModelConfig& c = config_;
  if (waveforms.rank() != 2 || waveforms.dim(1) != static_cast<std::size_t>(c.chunk_samples) ||
      waveforms.dim(0) == 0) {
    throw ShapeError("forward expects (batch, " + std::to_string(c.chunk_samples) + ") waveforms, got " +
                     shape_string(waveforms.shape()));
  }
  for (double v : waveforms.values()) {
    if (!std::isfinite(v)) throw InputError("forward: waveform contains non-finite samples");
  }
  const std::size_t batch = waveforms.dim(0);

  if (tape) {
    *tape = ForwardTape{};
    tape->waveforms = waveforms;
    tape->extractor_units.resize(extractor_units_.size());
    tape->stage_units.resize(stages_.size());
    tape->exits.resize(heads_.size());
  }

  Tensor s = sinc_.forward(params_, waveforms, tape ? &tape->sinc : nullptr);
  if (c.batch_norm) s = sinc_bn_.forward(params_, buffers_, s, phase, tape ? &tape->sinc_bn : nullptr, running);
  nn::relu_inplace(s);
  if (tape) tape->sinc_out = s;

  Tensor h = s.reshaped({batch, 1, s.dim(1), s.dim(2)});
  auto unit_cache = [&](std::size_t i) { return tape ? &tape->extractor_units[i] : nullptr; };
  h = run_unit(extractor_units_[0], h, phase, unit_cache(0), running);
  h = run_unit(extractor_units_[1], h, phase, unit_cache(1), running);
  h = se1_.forward(params_, h, tape ? &tape->se1 : nullptr);
  if (tape) tape->pool1_in = h.shape();
  h = pool1_.forward(h);
  h = run_unit(extractor_units_[2], h, phase, unit_cache(2), running);
  h = run_unit(extractor_units_[3], h, phase, unit_cache(3), running);
  h = se2_.forward(params_, h, tape ? &tape->se2 : nullptr);
  if (tape) tape->pool2_in = h.shape();
  h = pool2_.forward(h);

  std::vector<Tensor> stage_out;
  stage_out.reserve(stages_.size() + 1);
  stage_out.push_back(std::move(h));
  for (std::size_t k = 0; k < stages_.size(); ++k) {
    Tensor x;
    if (c.dc_enabled) {
      std::vector<const Tensor*> parts;
      for (std::size_t j = 0; j <= k; ++j) parts.push_back(&stage_out[j]);
      x = nn::concat_channels(parts);
    } else {
      x = stage_out[k];
    }
    if (tape) tape->stage_units[k].resize(stages_[k].size());
    for (std::size_t u = 0; u < stages_[k].size(); ++u) {
      x = run_unit(stages_[k][u], x, phase, tape ? &tape->stage_units[k][u] : nullptr, running);
    }
    stage_out.push_back(std::move(x));
  }

  ExitOutputs out;
  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const Tensor& stage = stage_out[i + 1];
    detail::ExitCache* ec = tape ? &tape->exits[i] : nullptr;
    Tensor seq = nn::freq_mean_to_sequence(stage);
    Tensor rec = recurrent_.forward(params_, seq, ec ? &ec->recurrent : nullptr);
    Tensor feat = heads_[i].reduce.forward(params_, rec);
    nn::relu_inplace(feat);
    Tensor logits = heads_[i].classify.forward(params_, feat);
    if (ec) {
      ec->stage_shape = stage.shape();
      ec->sequence = std::move(seq);
      ec->recurrent_out = std::move(rec);
      ec->features = feat;
    }
    out.features.push_back(std::move(feat));
    out.logits.push_back(std::move(logits));
  }
  if (tape) tape->stage_outputs = std::move(stage_out);
  return out;
}

// --------------------------------------------------------------- backward

Tensor MultiExitNet::unit_backward(const ConvUnit& unit, const detail::ConvUnitCache& cache, Tensor grad,
                                   ParameterSet& grads) const {
  nn::relu_backward_inplace(cache.output, grad);
  if (unit.has_bn) grad = unit.bn.backward(params_, grads, cache.bn, grad);
  return unit.conv.backward(params_, grads, cache.input, grad);
}

void MultiExitNet::backward(const ForwardTape& tape, const ExitGradients& upstream, ParameterSet& grads) const {
  if (!grads.same_layout(params_)) throw ShapeError("gradient set layout does not match the model parameters");
  if (tape.exits.size() != heads_.size()) throw ShapeError("tape was not produced by a training forward pass");
  const ModelConfig& c = config_;
  const std::size_t num_stages = stages_.size();
  std::vector<Tensor> stage_grad(num_stages + 1);

  for (std::size_t i = 0; i < heads_.size(); ++i) {
    const detail::ExitCache& ec = tape.exits[i];
    const bool has_logit_grad = i < upstream.logits.size() && !upstream.logits[i].empty();
    const bool has_feat_grad = i < upstream.features.size() && !upstream.features[i].empty();
    if (!has_logit_grad && !has_feat_grad) continue;
    Tensor gfeat(ec.features.shape());
    if (has_logit_grad) gfeat = heads_[i].classify.backward(params_, grads, ec.features, upstream.logits[i]);
    if (has_feat_grad) add_into(gfeat, upstream.features[i]);
    nn::relu_backward_inplace(ec.features, gfeat);
    Tensor grec = heads_[i].reduce.backward(params_, grads, ec.recurrent_out, gfeat);
    Tensor gseq = recurrent_.backward(params_, grads, ec.recurrent, grec);
    add_into(stage_grad[i + 1], nn::freq_mean_to_sequence_backward(ec.stage_shape, gseq));
  }

  const std::size_t ch = static_cast<std::size_t>(c.stage_channels);
  for (std::size_t k = num_stages; k-- > 0;) {
    if (stage_grad[k + 1].empty()) continue;
    Tensor g = std::move(stage_grad[k + 1]);
    for (std::size_t u = stages_[k].size(); u-- > 0;) {
      g = unit_backward(stages_[k][u], tape.stage_units[k][u], std::move(g), grads);
    }
    if (c.dc_enabled) {
      for (std::size_t j = 0; j <= k; ++j) add_into(stage_grad[j], nn::slice_channels(g, j * ch, ch));
    } else {
      add_into(stage_grad[k], g);
    }
  }

  if (stage_grad[0].empty()) return;
  Tensor g = pool2_.backward(tape.pool2_in, stage_grad[0]);
  g = se2_.backward(params_, grads, tape.se2, g);
  g = unit_backward(extractor_units_[3], tape.extractor_units[3], std::move(g), grads);
  g = unit_backward(extractor_units_[2], tape.extractor_units[2], std::move(g), grads);
  g = pool1_.backward(tape.pool1_in, g);
  g = se1_.backward(params_, grads, tape.se1, g);
  g = unit_backward(extractor_units_[1], tape.extractor_units[1], std::move(g), grads);
  g = unit_backward(extractor_units_[0], tape.extractor_units[0], std::move(g), grads);

  g = g.reshaped(tape.sinc_out.shape());
  nn::relu_backward_inplace(tape.sinc_out, g);
  if (c.batch_norm) g = sinc_bn_.backward(params_, grads, tape.sinc_bn, g);
  sinc_.backward(params_, grads, tape.sinc, g);
}

// ------------------------------------------------------------------ counts

ParameterCounts MultiExitNet::count_parameters() const {
  ParameterCounts counts;
  for (std::size_t i = 0; i < params_.count(); ++i) {
    const std::string& name = params_.name(i);
    const std::size_t n = params_[i].size();
    if (starts_with(name, "extractor.")) {
      counts.extractor += n;
    } else if (starts_with(name, "stage")) {
      counts.conv_stages += n;
    } else if (starts_with(name, "recurrent.")) {
      counts.recurrent += n;
    } else if (starts_with(name, "exit")) {
      counts.heads += n;
    }
    counts.total += n;
  }
  return counts;
}

}  // namespace mexosd
