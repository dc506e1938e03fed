/*
 * Copyright 2026 The Coldstart Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *   http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "coldstart/objectives.hpp"

#include <cmath>
#include <string>

namespace coldstart {

void TrainConfig::validate() const {
  if (!(lambda_mix >= 0.0)) throw ConfigError("lambda_mix must be >= 0");
  if (!(lambda_mmd >= 0.0)) throw ConfigError("lambda_mmd must be >= 0");
  if (!(mixup_alpha > 0.0)) throw ConfigError("mixup_alpha must be > 0");
  if (!(feature_dropout_rate >= 0.0 && feature_dropout_rate <= 1.0)) {
    throw ConfigError("feature_dropout_rate must be in [0, 1]");
  }
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (mixup_enabled && batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 when mixup is enabled");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

LossValue bce_loss(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() != labels.rows() || scores.cols() != labels.cols()) {
    throw numgrad::ShapeError("bce_loss: scores and labels differ in shape");
  }
  const double n = static_cast<double>(scores.size());
  LossValue out;
  out.grad.resize(scores.rows(), scores.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < scores.size(); ++i) {
    const double p = scores.data()[i];
    const double y = labels.data()[i];
    if (!(p > 0.0 && p < 1.0)) {
      throw DomainError("bce_loss: score " + std::to_string(p) +
                        " outside (0, 1); is the sigmoid missing?");
    }
    sum -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
    out.grad.data()[i] = (p - y) / (p * (1.0 - p) * n);
  }
  out.value = sum / n;
  return out;
}

MmdValue mmd_loss(const Matrix& scores, const std::vector<bool>& cold_flags) {
  if (static_cast<Eigen::Index>(cold_flags.size()) != scores.rows()) {
    throw numgrad::ShapeError("mmd_loss: " + std::to_string(cold_flags.size()) +
                              " cold flags for " +
                              std::to_string(scores.rows()) + " rows");
  }
  MmdValue out;
  out.grad = Matrix::Zero(scores.rows(), scores.cols());
  Eigen::RowVectorXd warm_sum = Eigen::RowVectorXd::Zero(scores.cols());
  Eigen::RowVectorXd cold_sum = Eigen::RowVectorXd::Zero(scores.cols());
  Eigen::Index n_warm = 0;
  Eigen::Index n_cold = 0;
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    if (cold_flags[r]) {
      cold_sum += scores.row(r);
      ++n_cold;
    } else {
      warm_sum += scores.row(r);
      ++n_warm;
    }
  }
  if (n_warm == 0 || n_cold == 0) {
    out.skipped = true;
    return out;
  }
  const Eigen::RowVectorXd diff = warm_sum / static_cast<double>(n_warm) -
                                  cold_sum / static_cast<double>(n_cold);
  out.value = diff.squaredNorm();
  const Eigen::RowVectorXd g_warm = 2.0 * diff / static_cast<double>(n_warm);
  const Eigen::RowVectorXd g_cold = -2.0 * diff / static_cast<double>(n_cold);
  for (Eigen::Index r = 0; r < scores.rows(); ++r) {
    out.grad.row(r) = cold_flags[r] ? g_cold : g_warm;
  }
  return out;
}

double sample_beta(double alpha, Rng& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) {
    // Both draws underflowed (tiny alpha); the Beta is symmetric.
    return 0.5;
  }
  return x / (x + y);
}

std::vector<MixupDraw> draw_mixup(Eigen::Index n, double alpha, Rng& rng,
                                  std::optional<double> fixed_lambda) {
  if (n < 2) {
    throw std::invalid_argument(
        "mixup_apply: batch of " + std::to_string(n) +
        " row(s) has no partner to mix with; disable mixup for this batch");
  }
  if (!(alpha > 0.0)) {
    throw std::invalid_argument("mixup_apply: alpha must be > 0");
  }
  std::vector<MixupDraw> draws(n);
  std::uniform_int_distribution<Eigen::Index> pick(0, n - 2);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index j = pick(rng);
    if (j >= i) ++j;  // skip self
    const double lam = fixed_lambda ? *fixed_lambda : sample_beta(alpha, rng);
    draws[i] = MixupDraw{j, lam};
  }
  return draws;
}

MixupBatch mixup_apply(const Matrix& embeddings, const Matrix& labels,
                       double alpha, Rng& rng,
                       std::optional<double> fixed_lambda) {
  if (labels.rows() != embeddings.rows()) {
    throw numgrad::ShapeError("mixup_apply: embeddings and labels differ in rows");
  }
  return mixup_with(embeddings, labels,
                    draw_mixup(embeddings.rows(), alpha, rng, fixed_lambda));
}

MixupBatch mixup_with(const Matrix& embeddings, const Matrix& labels,
                      std::vector<MixupDraw> draws) {
  const Eigen::Index n = embeddings.rows();
  if (labels.rows() != n || static_cast<Eigen::Index>(draws.size()) != n) {
    throw numgrad::ShapeError("mixup_with: embeddings, labels and draws differ in rows");
  }
  MixupBatch out;
  out.embeddings.resize(n, embeddings.cols());
  out.labels.resize(n, labels.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [j, lam] = draws[i];
    out.embeddings.row(i) =
        lam * embeddings.row(i) + (1.0 - lam) * embeddings.row(j);
    out.labels.row(i) = lam * labels.row(i) + (1.0 - lam) * labels.row(j);
  }
  out.draws = std::move(draws);
  return out;
}

Matrix mixup_backward(const Matrix& grad_mixed,
                      const std::vector<MixupDraw>& draws) {
  if (static_cast<Eigen::Index>(draws.size()) != grad_mixed.rows()) {
    throw numgrad::ShapeError("mixup_backward: draw count does not match rows");
  }
  Matrix g = Matrix::Zero(grad_mixed.rows(), grad_mixed.cols());
  for (Eigen::Index i = 0; i < grad_mixed.rows(); ++i) {
    const MixupDraw& d = draws[i];
    g.row(i) += d.lambda * grad_mixed.row(i);
    g.row(d.partner) += (1.0 - d.lambda) * grad_mixed.row(i);
  }
  return g;
}

CombinedLoss combined_loss(const Matrix& scores, const Matrix* mixed_scores,
                           const Matrix& labels, const Matrix* mixed_labels,
                           const std::vector<bool>& cold_flags,
                           const TrainConfig& config) {
  if ((mixed_scores == nullptr) != (mixed_labels == nullptr)) {
    throw std::invalid_argument(
        "combined_loss: mixed scores and mixed labels must come together");
  }
  CombinedLoss out;
  LossValue main = bce_loss(scores, labels);
  out.loss.bce_main = main.value;
  out.grad_bce_main = main.grad;
  out.grad_main = std::move(main.grad);
  if (mixed_scores != nullptr) {
    LossValue mix = bce_loss(*mixed_scores, *mixed_labels);
    out.loss.bce_mix = mix.value;
    out.grad_mixed = config.lambda_mix * mix.grad;
  }
  if (config.scorereg_enabled && config.lambda_mmd > 0.0) {
    const MmdValue mmd = mmd_loss(scores, cold_flags);
    out.loss.mmd = mmd.value;
    out.loss.mmd_skipped = mmd.skipped;
    if (!mmd.skipped) {
      out.grad_main += config.lambda_mmd * mmd.grad;
    }
  }
  out.loss.total = out.loss.bce_main + config.lambda_mix * out.loss.bce_mix +
                   config.lambda_mmd * out.loss.mmd;
  return out;
}

}  // namespace coldstart
