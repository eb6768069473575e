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

#include "mexosd/training.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>

#include <spdlog/spdlog.h>

#include "mexosd/error.hpp"

namespace mexosd::training {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError(key, "cannot parse '" + text + "' as a number");
  return value;
}

bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(key, "expected true or false, got '" + text + "'");
}

nlohmann::json model_value(const std::string& key, const std::string& text) {
  if (key == "dc_enabled" || key == "batch_norm") return parse_bool(key, text);
  if (text.find(',') != std::string::npos) {
    nlohmann::json list = nlohmann::json::array();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) list.push_back(parse_number<int>(key, trim(item)));
    return list;
  }
  return parse_number<int>(key, text);
}

void set_training_key(TrainConfig& t, const std::string& key, const std::string& v) {
  if (key == "epochs") t.epochs = parse_number<int>(key, v);
  else if (key == "batch_size") t.batch_size = parse_number<std::size_t>(key, v);
  else if (key == "initial_lr" || key == "lr") t.initial_lr = parse_number<double>(key, v);
  else if (key == "plateau_factor") t.plateau_factor = parse_number<double>(key, v);
  else if (key == "plateau_patience_epochs") t.plateau_patience_epochs = parse_number<int>(key, v);
  else if (key == "alpha") t.loss_weights.alpha = parse_number<double>(key, v);
  else if (key == "beta") t.loss_weights.beta = parse_number<double>(key, v);
  else if (key == "temperature") t.loss_weights.temperature = parse_number<double>(key, v);
  else if (key == "seed") t.seed = parse_number<std::uint64_t>(key, v);
  else if (key == "grad_clip_norm") t.grad_clip_norm = parse_number<double>(key, v);
  else if (key == "train_hop_s") t.train_hop_s = parse_number<double>(key, v);
  else throw ConfigError(key, "unknown training field");
}

void accumulate(loss::LossBreakdown& acc, const loss::LossBreakdown& x, double w) {
  acc.total += w * x.total;
  acc.classification += w * x.classification;
  acc.prob_distill += w * x.prob_distill;
  acc.feat_distill += w * x.feat_distill;
  if (acc.per_exit.size() < x.per_exit.size()) acc.per_exit.resize(x.per_exit.size());
  for (std::size_t i = 0; i < x.per_exit.size(); ++i) {
    acc.per_exit[i].classification += w * x.per_exit[i].classification;
    acc.per_exit[i].prob_distill += w * x.per_exit[i].prob_distill;
    acc.per_exit[i].feat_distill += w * x.per_exit[i].feat_distill;
  }
}

void scale(loss::LossBreakdown& acc, double s) {
  acc.total *= s;
  acc.classification *= s;
  acc.prob_distill *= s;
  acc.feat_distill *= s;
  for (auto& e : acc.per_exit) {
    e.classification *= s;
    e.prob_distill *= s;
    e.feat_distill *= s;
  }
}

nlohmann::json breakdown_json(const loss::LossBreakdown& b) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& e : b.per_exit) {
    per.push_back({{"classification", e.classification}, {"prob_distill", e.prob_distill},
                   {"feat_distill", e.feat_distill}});
  }
  return {{"total", b.total},
          {"classification", b.classification},
          {"prob_distill", b.prob_distill},
          {"feat_distill", b.feat_distill},
          {"per_exit", per}};
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (!(initial_lr > 0.0) || !std::isfinite(initial_lr)) throw ConfigError("initial_lr", "must be positive");
  if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) throw ConfigError("plateau_factor", "must lie in (0, 1)");
  if (plateau_patience_epochs < 1) throw ConfigError("plateau_patience_epochs", "must be >= 1");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grad_clip_norm", "must be positive");
  if (!(train_hop_s > 0.0)) throw ConfigError("train_hop_s", "must be positive");
  loss_weights.validate();
}

RunConfig parse_run_config(std::string_view text) {
  RunConfig rc;
  nlohmann::json model = nlohmann::json::object();
  std::string section = "training";
  std::istringstream in{std::string(text)};
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(raw);
    if (const auto c = line.find_first_of("#;"); c != std::string::npos) line = trim(line.substr(0, c));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError("unterminated section header '" + line + "'", line_no);
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "training") {
        throw ParseError("unknown section [" + section + "]", line_no);
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError("expected key = value, got '" + line + "'", line_no);
    const std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (value.size() >= 2 && value.front() == '"' && value.back() == '"') value = value.substr(1, value.size() - 2);
    if (section == "model") {
      model[key] = model_value(key, value);
    } else {
      set_training_key(rc.training, key, value);
    }
  }
  rc.model = config_from_json(model);
  rc.model.validate();
  rc.training.validate();
  return rc;
}

RunConfig read_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

Adam::Adam(const ParameterSet& layout, AdamOptions options)
    : opt_(options), m_(layout.zeros_like()), v_(layout.zeros_like()) {}

void Adam::step(ParameterSet& params, const ParameterSet& grads, double lr) {
  if (!params.same_layout(m_) || !grads.same_layout(m_)) throw ShapeError("optimizer layout mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t s = 0; s < params.count(); ++s) {
    double* p = params[s].data();
    const double* g = grads[s].data();
    double* m = m_[s].data();
    double* v = v_[s].data();
    for (std::size_t i = 0; i < params[s].size(); ++i) {
      m[i] = opt_.beta1 * m[i] + (1.0 - opt_.beta1) * g[i];
      v[i] = opt_.beta2 * v[i] + (1.0 - opt_.beta2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opt_.eps);
    }
  }
}

void Adam::restore(ParameterSet m, ParameterSet v, std::uint64_t steps) {
  if (!m.same_layout(m_) || !v.same_layout(v_)) throw CheckpointError("optimizer moments do not match the model");
  m_ = std::move(m);
  v_ = std::move(v);
  t_ = steps;
}

double clip_global_norm(ParameterSet& grads, double max_norm) {
  double sq = 0.0;
  for (std::size_t s = 0; s < grads.count(); ++s) {
    for (double g : grads[s].values()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && std::isfinite(norm)) {
    const double k = max_norm / norm;
    for (std::size_t s = 0; s < grads.count(); ++s) {
      for (double& g : grads[s].values()) g *= k;
    }
  }
  return norm;
}

PlateauScheduler::PlateauScheduler(double initial_lr, double factor, int patience)
    : lr_(initial_lr), factor_(factor), patience_(patience), best_(std::numeric_limits<double>::infinity()) {}

double PlateauScheduler::observe(double value) {
  if (value < best_) {
    best_ = value;
    bad_ = 0;
  } else if (++bad_ >= patience_) {
    lr_ *= factor_;
    bad_ = 0;
  }
  return lr_;
}

void PlateauScheduler::restore(double lr, double best, int bad_epochs) {
  lr_ = lr;
  best_ = best;
  bad_ = bad_epochs;
}

Batch make_batch(std::span<const data::ChunkSample* const> chunks) {
  if (chunks.empty()) throw InputError("empty batch");
  const std::size_t samples = chunks[0]->waveform.size();
  const std::size_t frames = chunks[0]->labels.size();
  Batch b;
  b.waveforms = Tensor({chunks.size(), samples});
  b.labels.batch = chunks.size();
  b.labels.frames = frames;
  b.labels.labels.reserve(chunks.size() * frames);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    if (chunks[i]->waveform.size() != samples || chunks[i]->labels.size() != frames) {
      throw ShapeError("chunks in a batch differ in length");
    }
    std::copy(chunks[i]->waveform.begin(), chunks[i]->waveform.end(), b.waveforms.data() + i * samples);
    b.labels.labels.insert(b.labels.labels.end(), chunks[i]->labels.begin(), chunks[i]->labels.end());
  }
  return b;
}

std::vector<double> exit_accuracy(const ExitOutputs& outputs, const loss::LabelBatch& labels) {
  std::vector<double> acc;
  for (const Tensor& z : outputs.logits) {
    const std::size_t k = z.dim(2);
    const std::size_t rows = labels.labels.size();
    if (z.size() != rows * k) throw ShapeError("labels do not match logits " + shape_string(z.shape()));
    std::size_t hit = 0;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* row = z.data() + r * k;
      const auto arg = static_cast<int>(std::max_element(row, row + k) - row);
      hit += arg == labels.labels[r];
    }
    acc.push_back(rows ? static_cast<double>(hit) / static_cast<double>(rows) : 0.0);
  }
  return acc;
}

DevEvaluation evaluate_dev(const MultiExitNet& model, std::span<const data::ChunkSample> dev_set,
                           const loss::ClassWeights& class_weights, const loss::LossWeights& loss_weights,
                           std::size_t batch_size) {
  if (dev_set.empty()) throw InputError("dev set is empty");
  DevEvaluation ev;
  ev.accuracy.assign(static_cast<std::size_t>(model.config().num_exits), 0.0);
  std::vector<const data::ChunkSample*> ptrs;
  for (std::size_t start = 0; start < dev_set.size(); start += batch_size) {
    ptrs.clear();
    for (std::size_t i = start; i < std::min(dev_set.size(), start + batch_size); ++i) ptrs.push_back(&dev_set[i]);
    const Batch b = make_batch(ptrs);
    const ExitOutputs out = model.forward(b.waveforms);
    const double w = static_cast<double>(b.labels.labels.size());
    accumulate(ev.loss, loss::joint_loss(out, b.labels, class_weights, loss_weights), w);
    const auto acc = exit_accuracy(out, b.labels);
    for (std::size_t i = 0; i < acc.size(); ++i) ev.accuracy[i] += w * acc[i];
    ev.frames += b.labels.labels.size();
  }
  const double inv = 1.0 / static_cast<double>(ev.frames);
  scale(ev.loss, inv);
  for (double& a : ev.accuracy) a *= inv;
  return ev;
}

Trainer::Trainer(MultiExitNet& model, const TrainConfig& config, loss::ClassWeights class_weights)
    : model_(model),
      config_(config),
      class_weights_(std::move(class_weights)),
      adam_(model.parameters()),
      scheduler_(config.initial_lr, config.plateau_factor, config.plateau_patience_epochs),
      grads_(model.parameters().zeros_like()),
      best_dev_(std::numeric_limits<double>::infinity()) {
  config_.validate();
}

loss::LossBreakdown Trainer::step(const Batch& batch) {
  ++steps_in_epoch_;
  ForwardTape tape;
  const ExitOutputs out = model_.forward_train(batch.waveforms, tape);
  ExitGradients upstream;
  const loss::LossBreakdown lb =
      loss::joint_loss_with_grad(out, batch.labels, class_weights_, config_.loss_weights, upstream);
  auto check = [&](const char* component, double v) {
    if (!std::isfinite(v)) {
      throw TrainingError("non-finite " + std::string(component) + " (" + std::to_string(v) + ") at epoch " +
                          std::to_string(epoch_ + 1) + ", step " + std::to_string(steps_in_epoch_));
    }
  };
  check("classification loss", lb.classification);
  check("probability distillation loss", lb.prob_distill);
  check("feature distillation loss", lb.feat_distill);
  check("total loss", lb.total);

  grads_.zero();
  model_.backward(tape, upstream, grads_);
  check("gradient norm", clip_global_norm(grads_, config_.grad_clip_norm));
  adam_.step(model_.parameters(), grads_, scheduler_.learning_rate());
  return lb;
}

TrainingState Trainer::state() const {
  TrainingState s;
  s.first_moment = adam_.first_moment();
  s.second_moment = adam_.second_moment();
  s.optimizer_step = adam_.steps();
  s.epoch = epoch_;
  s.learning_rate = scheduler_.learning_rate();
  s.best_dev_loss = best_dev_;
  s.plateau_best = scheduler_.best();
  s.plateau_bad_epochs = scheduler_.bad_epochs();
  return s;
}

void Trainer::restore(const TrainingState& s) {
  adam_.restore(s.first_moment, s.second_moment, s.optimizer_step);
  scheduler_.restore(s.learning_rate, s.plateau_best, s.plateau_bad_epochs);
  epoch_ = s.epoch;
  best_dev_ = s.best_dev_loss;
}

nlohmann::json epoch_record_to_json(const EpochRecord& r) {
  return {{"epoch", r.epoch},
          {"learning_rate", r.learning_rate},
          {"train", breakdown_json(r.train)},
          {"dev", breakdown_json(r.dev)},
          {"dev_accuracy", r.dev_accuracy}};
}

void write_history(std::ostream& out, const TrainHistory& history) {
  for (const auto& r : history) out << epoch_record_to_json(r).dump() << '\n';
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::mt19937_64 rng(seed ^ (0x9E3779B97F4A7C15ull * static_cast<std::uint64_t>(epoch)));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

FitResult fit(MultiExitNet model, std::span<const data::ChunkSample> train_set,
              std::span<const data::ChunkSample> dev_set, const TrainConfig& config, const FitOptions& options) {
  config.validate();
  if (config.epochs == 0 || (options.resume && options.resume->epoch >= config.epochs)) {
    return {std::move(model), {}};
  }
  if (train_set.empty()) throw InputError("training set is empty");
  if (dev_set.empty()) throw InputError("dev set is empty");

  auto weights = loss::class_weights_from_histogram(data::label_histogram(train_set, model.config().num_classes));
  Trainer trainer(model, config, weights);
  if (options.resume) trainer.restore(*options.resume);

  FitResult result{model, {}};
  double best = trainer.best_dev_loss();
  std::vector<const data::ChunkSample*> ptrs;
  for (int epoch = trainer.epoch() + 1; epoch <= config.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = trainer.scheduler().learning_rate();
    const auto order = epoch_order(train_set.size(), config.seed, epoch);
    std::size_t frames = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      ptrs.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + config.batch_size); ++i) {
        ptrs.push_back(&train_set[order[i]]);
      }
      const Batch b = make_batch(ptrs);
      const auto lb = trainer.step(b);
      accumulate(rec.train, lb, static_cast<double>(b.labels.labels.size()));
      frames += b.labels.labels.size();
    }
    scale(rec.train, 1.0 / static_cast<double>(frames));

    const DevEvaluation dev = evaluate_dev(model, dev_set, weights, config.loss_weights, config.batch_size);
    rec.dev = dev.loss;
    rec.dev_accuracy = dev.accuracy;
    if (dev.loss.total < best) {
      best = dev.loss.total;
      result.best = model;
    }
    trainer.scheduler().observe(dev.loss.total);
    trainer.set_epoch(epoch);
    trainer.set_best_dev_loss(best);
    spdlog::info("epoch {}/{}: train {:.4f} dev {:.4f} final-exit acc {:.3f} lr {:.2e}", epoch, config.epochs,
                 rec.train.total, rec.dev.total, rec.dev_accuracy.back(), rec.learning_rate);
    result.history.push_back(rec);
    if (options.on_epoch) options.on_epoch(rec, model, trainer);
  }
  return result;
}

}  // namespace mexosd::training
