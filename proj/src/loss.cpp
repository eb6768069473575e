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

#include "mexosd/loss.hpp"

#include <algorithm>
#include <cmath>

#include "mexosd/error.hpp"

namespace mexosd::loss {
namespace {

// log-softmax of row z (length k) at temperature t, written to out.
void log_softmax(const double* z, std::size_t k, double t, double* out) {
  double zmax = z[0] / t;
  for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j] / t);
  double sum = 0.0;
  for (std::size_t j = 0; j < k; ++j) sum += std::exp(z[j] / t - zmax);
  const double lse = zmax + std::log(sum);
  for (std::size_t j = 0; j < k; ++j) out[j] = z[j] / t - lse;
}

void check_outputs(const ExitOutputs& outputs) {
  if (outputs.logits.empty() || outputs.logits.size() != outputs.features.size()) {
    throw ShapeError("exit outputs must hold one logits and one features tensor per exit");
  }
  for (std::size_t i = 1; i < outputs.logits.size(); ++i) {
    if (outputs.logits[i].shape() != outputs.logits[0].shape() ||
        outputs.features[i].shape() != outputs.features[0].shape()) {
      throw ShapeError("exit outputs have non-uniform shapes");
    }
  }
}

void check_labels(const Tensor& logits, const LabelBatch& labels) {
  if (logits.rank() != 3 || logits.dim(0) != labels.batch || logits.dim(1) != labels.frames ||
      labels.labels.size() != labels.batch * labels.frames) {
    throw ShapeError("labels " + std::to_string(labels.batch) + "x" + std::to_string(labels.frames) +
                     " do not match logits " + shape_string(logits.shape()));
  }
  const int k = static_cast<int>(logits.dim(2));
  for (int y : labels.labels) {
    if (y < 0 || y >= k) throw InputError("label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
  }
}

// Returns the loss; when grad is non-null writes dL/dlogits (overwriting).
double cross_entropy_impl(const Tensor& logits, const LabelBatch& labels, const ClassWeights& cw, Tensor* grad) {
  check_labels(logits, labels);
  const std::size_t k = logits.dim(2);
  if (cw.weights.size() != k) throw ShapeError("class weight count does not match the number of classes");
  const std::size_t rows = labels.labels.size();
  std::vector<double> lp(k);
  double weight_sum = 0.0, acc = 0.0;
  for (std::size_t r = 0; r < rows; ++r) weight_sum += cw.weights[static_cast<std::size_t>(labels.labels[r])];
  if (!(weight_sum > 0.0)) throw InputError("applied class weights sum to zero");
  if (grad) *grad = Tensor(logits.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const auto y = static_cast<std::size_t>(labels.labels[r]);
    const double w = cw.weights[y];
    log_softmax(logits.data() + r * k, k, 1.0, lp.data());
    acc -= w * lp[y];
    if (grad) {
      double* g = grad->data() + r * k;
      for (std::size_t j = 0; j < k; ++j) g[j] = w * (std::exp(lp[j]) - (j == y ? 1.0 : 0.0)) / weight_sum;
    }
  }
  return acc / weight_sum;
}

// Mean over rows of KL(softmax(teacher/t) || softmax(student/t)); gradient is
// with respect to the student only.
double kl_impl(const Tensor& teacher, const Tensor& student, double t, Tensor* grad) {
  if (teacher.shape() != student.shape()) throw ShapeError("teacher/student shape mismatch");
  const std::size_t k = student.shape().back();
  const std::size_t rows = student.size() / k;
  std::vector<double> lt(k), ls(k);
  double acc = 0.0;
  if (grad) *grad = Tensor(student.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    log_softmax(teacher.data() + r * k, k, t, lt.data());
    log_softmax(student.data() + r * k, k, t, ls.data());
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double pt = std::exp(lt[j]);
      row += pt * (lt[j] - ls[j]);
      if (grad) (*grad)[r * k + j] = (std::exp(ls[j]) - pt) / (t * static_cast<double>(rows));
    }
    acc += row;
  }
  return acc / static_cast<double>(rows);
}

LossBreakdown joint_impl(const ExitOutputs& outputs, const LabelBatch& labels, const ClassWeights& cw,
                         const LossWeights& w, const Teacher* teacher, ExitGradients* grads) {
  w.validate();
  check_outputs(outputs);
  Teacher own;
  if (!teacher) {
    own = ensemble_teacher(outputs);
    teacher = &own;
  }
  const std::size_t m = outputs.num_exits();
  const double t2 = w.temperature * w.temperature;
  LossBreakdown out;
  out.per_exit.resize(m);
  if (grads) {
    grads->logits.assign(m, {});
    grads->features.assign(m, {});
  }
  for (std::size_t i = 0; i < m; ++i) {
    Tensor g_ce, g_z, g_f;
    ExitLoss& e = out.per_exit[i];
    e.classification = cross_entropy_impl(outputs.logits[i], labels, cw, grads ? &g_ce : nullptr);
    e.prob_distill = t2 * kl_impl(teacher->logits, outputs.logits[i], w.temperature, grads ? &g_z : nullptr);
    e.feat_distill = kl_impl(teacher->features, outputs.features[i], 1.0, grads ? &g_f : nullptr);
    out.classification += e.classification;
    out.prob_distill += e.prob_distill;
    out.feat_distill += e.feat_distill;
    if (grads) {
      for (std::size_t j = 0; j < g_ce.size(); ++j) g_ce[j] += w.alpha * t2 * g_z[j];
      for (double& v : g_f.values()) v *= w.beta;
      grads->logits[i] = std::move(g_ce);
      grads->features[i] = std::move(g_f);
    }
  }
  out.total = out.classification + w.alpha * out.prob_distill + w.beta * out.feat_distill;
  return out;
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0)) throw ConfigError("alpha", "must be nonnegative");
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be nonnegative");
  if (!(temperature > 0.0)) throw ConfigError("temperature", "must be positive");
}

ClassWeights class_weights_from_histogram(std::span<const std::uint64_t> counts) {
  if (counts.empty() || std::all_of(counts.begin(), counts.end(), [](std::uint64_t c) { return c == 0; })) {
    throw InputError("class histogram is empty; cannot derive class weights");
  }
  ClassWeights cw;
  double sum = 0.0;
  for (std::uint64_t c : counts) {
    cw.weights.push_back(1.0 / static_cast<double>(std::max<std::uint64_t>(c, 1)));
    sum += cw.weights.back();
  }
  const double k = static_cast<double>(counts.size());
  for (double& v : cw.weights) v *= k / sum;
  return cw;
}

double weighted_cross_entropy(const Tensor& logits, const LabelBatch& labels, const ClassWeights& weights) {
  return cross_entropy_impl(logits, labels, weights, nullptr);
}

Teacher ensemble_teacher(const ExitOutputs& outputs) {
  check_outputs(outputs);
  const double m = static_cast<double>(outputs.num_exits());
  Teacher t{Tensor(outputs.logits[0].shape()), Tensor(outputs.features[0].shape())};
  for (std::size_t i = 0; i < outputs.num_exits(); ++i) {
    for (std::size_t j = 0; j < t.logits.size(); ++j) t.logits[j] += outputs.logits[i][j];
    for (std::size_t j = 0; j < t.features.size(); ++j) t.features[j] += outputs.features[i][j];
  }
  for (double& v : t.logits.values()) v /= m;
  for (double& v : t.features.values()) v /= m;
  return t;
}

double mean_kl_divergence(const Tensor& teacher_logits, const Tensor& student_logits, double temperature) {
  return kl_impl(teacher_logits, student_logits, temperature, nullptr);
}

LossBreakdown joint_loss(const ExitOutputs& outputs, const LabelBatch& labels, const ClassWeights& class_weights,
                         const LossWeights& weights, const Teacher* teacher) {
  return joint_impl(outputs, labels, class_weights, weights, teacher, nullptr);
}

LossBreakdown joint_loss_with_grad(const ExitOutputs& outputs, const LabelBatch& labels,
                                   const ClassWeights& class_weights, const LossWeights& weights,
                                   ExitGradients& grads, const Teacher* teacher) {
  return joint_impl(outputs, labels, class_weights, weights, teacher, &grads);
}

}  // namespace mexosd::loss
