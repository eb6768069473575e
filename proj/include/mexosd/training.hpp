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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "mexosd/checkpoint.hpp"
#include "mexosd/data.hpp"
#include "mexosd/loss.hpp"
#include "mexosd/model.hpp"

namespace mexosd::training {

struct TrainConfig {
  int epochs = 50;
  /// Desk-scale default; the reference recipe uses 256.
  std::size_t batch_size = 32;
  double initial_lr = 1e-3;
  double plateau_factor = 0.6;
  int plateau_patience_epochs = 6;
  loss::LossWeights loss_weights;
  std::uint64_t seed = 0;
  double grad_clip_norm = 5.0;
  /// Hop used to cut training recordings into chunks.
  double train_hop_s = 0.75;

  /// epochs = 0 is accepted and means "return the initial model".
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

/// Model and training sections of a key = value config file.
struct RunConfig {
  ModelConfig model;
  TrainConfig training;
};

/// `[model]` keys are ModelConfig fields (lists comma separated),
/// `[training]` keys are TrainConfig fields with `alpha`, `beta` and
/// `temperature` for the loss weights. `#` and `;` start comments.
RunConfig parse_run_config(std::string_view text);
RunConfig read_run_config(const std::filesystem::path& path);

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  explicit Adam(const ParameterSet& layout, AdamOptions options = {});

  void step(ParameterSet& params, const ParameterSet& grads, double lr);

  std::uint64_t steps() const noexcept { return t_; }
  const ParameterSet& first_moment() const noexcept { return m_; }
  const ParameterSet& second_moment() const noexcept { return v_; }
  void restore(ParameterSet m, ParameterSet v, std::uint64_t steps);

 private:
  AdamOptions opt_;
  ParameterSet m_, v_;
  std::uint64_t t_ = 0;
};

/// Scales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
double clip_global_norm(ParameterSet& grads, double max_norm);

/// Multiplies the rate by `factor` once the monitored value has gone
/// `patience` consecutive epochs without improving on its best.
class PlateauScheduler {
 public:
  PlateauScheduler(double initial_lr, double factor, int patience);

  /// Records one epoch's value; returns the rate for the next epoch.
  double observe(double value);

  double learning_rate() const noexcept { return lr_; }
  double best() const noexcept { return best_; }
  int bad_epochs() const noexcept { return bad_; }
  void restore(double lr, double best, int bad_epochs);

 private:
  double lr_, factor_;
  int patience_;
  double best_;
  int bad_ = 0;
};

struct Batch {
  Tensor waveforms;  // (batch, chunk_samples)
  loss::LabelBatch labels;
};

Batch make_batch(std::span<const data::ChunkSample* const> chunks);

/// Fraction of frames where argmax(logits) equals the label, per exit.
std::vector<double> exit_accuracy(const ExitOutputs& outputs, const loss::LabelBatch& labels);

struct DevEvaluation {
  loss::LossBreakdown loss;  // frame-weighted mean over batches
  std::vector<double> accuracy;
  std::size_t frames = 0;
};

/// Inference-phase evaluation; never mutates the model.
DevEvaluation evaluate_dev(const MultiExitNet& model, std::span<const data::ChunkSample> dev_set,
                           const loss::ClassWeights& class_weights, const loss::LossWeights& loss_weights,
                           std::size_t batch_size = 32);

/// One model, one optimizer, one scheduler. Owns no data.
class Trainer {
 public:
  Trainer(MultiExitNet& model, const TrainConfig& config, loss::ClassWeights class_weights);

  /// Forward, joint loss, backward, clip and one Adam update. Throws
  /// TrainingError naming the component if anything goes non-finite.
  loss::LossBreakdown step(const Batch& batch);

  TrainingState state() const;
  void restore(const TrainingState& state);

  PlateauScheduler& scheduler() noexcept { return scheduler_; }
  const loss::ClassWeights& class_weights() const noexcept { return class_weights_; }
  int epoch() const noexcept { return epoch_; }
  void set_epoch(int e) noexcept {
    epoch_ = e;
    steps_in_epoch_ = 0;
  }
  double best_dev_loss() const noexcept { return best_dev_; }
  void set_best_dev_loss(double v) noexcept { best_dev_ = v; }

 private:
  MultiExitNet& model_;
  TrainConfig config_;
  loss::ClassWeights class_weights_;
  Adam adam_;
  PlateauScheduler scheduler_;
  ParameterSet grads_;
  int epoch_ = 0;
  std::uint64_t steps_in_epoch_ = 0;
  double best_dev_;
};

struct EpochRecord {
  int epoch = 0;  // 1-based
  loss::LossBreakdown train;
  loss::LossBreakdown dev;
  std::vector<double> dev_accuracy;
  double learning_rate = 0.0;  // rate used during this epoch
};

using TrainHistory = std::vector<EpochRecord>;

nlohmann::json epoch_record_to_json(const EpochRecord& record);
void write_history(std::ostream& out, const TrainHistory& history);

struct FitOptions {
  /// Called after every epoch with the live model and trainer (checkpointing).
  std::function<void(const EpochRecord&, const MultiExitNet&, const Trainer&)> on_epoch;
  /// Continue from a saved state instead of starting fresh.
  const TrainingState* resume = nullptr;
};

struct FitResult {
  MultiExitNet best;  // minimal dev total loss (the initial model when epochs = 0)
  TrainHistory history;
};

/// Same seed and data give a bit-identical history and best model.
FitResult fit(MultiExitNet model, std::span<const data::ChunkSample> train_set,
              std::span<const data::ChunkSample> dev_set, const TrainConfig& config, const FitOptions& options = {});

/// Epoch-specific permutation of [0, n).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

}  // namespace mexosd::training
