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

// Joint multi-exit objective: every exit pays a class-weighted cross entropy
// on the reference labels plus two distillation terms pulling it toward the
// ensemble (mean over exits) of logits and of head features.

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mexosd/model.hpp"
#include "mexosd/tensor.hpp"

namespace mexosd::loss {

struct LossWeights {
  double alpha = 0.5;  // probability distillation
  double beta = 1.0;   // feature distillation
  double temperature = 1.0;

  void validate() const;
};

struct ClassWeights {
  std::vector<double> weights;
};

/// Frame labels of a batch, (batch, frames), row-major.
struct LabelBatch {
  std::size_t batch = 0;
  std::size_t frames = 0;
  std::vector<int> labels;
};

struct ExitLoss {
  double classification = 0.0;
  double prob_distill = 0.0;
  double feat_distill = 0.0;
};

struct LossBreakdown {
  double total = 0.0;
  double classification = 0.0;
  double prob_distill = 0.0;
  double feat_distill = 0.0;
  std::vector<ExitLoss> per_exit;
};

struct Teacher {
  Tensor logits;
  Tensor features;
};

/// weight_k proportional to 1 / max(count_k, 1), normalized to sum to K.
ClassWeights class_weights_from_histogram(std::span<const std::uint64_t> counts);

/// Weighted mean over frames of w[y] * -log softmax(z)[y].
double weighted_cross_entropy(const Tensor& logits, const LabelBatch& labels, const ClassWeights& weights);

/// Element-wise mean of the exits' logits and features.
Teacher ensemble_teacher(const ExitOutputs& outputs);

/// KL(softmax(p / t) || softmax(q / t)) averaged over rows of the last axis.
double mean_kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits, double temperature = 1.0);

/// Evaluate the objective. When `teacher` is given it replaces the ensemble
/// computed from `outputs` (used to hold the teacher fixed in gradient checks).
LossBreakdown joint_loss(const ExitOutputs& outputs, const LabelBatch& labels, const ClassWeights& class_weights,
                         const LossWeights& weights, const Teacher* teacher = nullptr);

/// Objective plus its gradient with respect to each exit's logits and
/// features. The teacher is a constant: no gradient flows through the mean.
LossBreakdown joint_loss_with_grad(const ExitOutputs& outputs, const LabelBatch& labels,
                                   const ClassWeights& class_weights, const LossWeights& weights,
                                   ExitGradients& grads, const Teacher* teacher = nullptr);

}  // namespace mexosd::loss
