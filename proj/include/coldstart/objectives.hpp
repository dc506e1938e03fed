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

#ifndef COLDSTART_OBJECTIVES_HPP_
#define COLDSTART_OBJECTIVES_HPP_

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

#include "coldstart/model.hpp"

namespace coldstart {

using Rng = std::mt19937_64;

class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

struct TrainConfig {
  double lambda_mix = 0.2;
  double lambda_mmd = 0.1;
  double mixup_alpha = 2.0;
  bool mixup_enabled = false;
  bool scorereg_enabled = false;
  double feature_dropout_rate = 0.0;
  double learning_rate = 1e-3;
  int batch_size = 256;
  int epochs = 5;
  // Hard cap on optimizer steps across all epochs; 0 means no cap.
  int max_steps = 2000;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LossValue {
  double value = 0.0;
  Matrix grad;  // d value / d scores
};

struct MmdValue {
  double value = 0.0;
  Matrix grad;
  bool skipped = false;
};

/// Mean binary cross-entropy over batch and tasks. Labels may be fractional
/// (mixed samples). Scores must lie strictly inside (0, 1).
LossValue bce_loss(const Matrix& scores, const Matrix& labels);

/// Squared l2 distance between the warm and cold mean score vectors. Returns
/// a skipped outcome with zero value and gradient when either group is
/// empty.
MmdValue mmd_loss(const Matrix& scores, const std::vector<bool>& cold_flags);

struct MixupDraw {
  Eigen::Index partner = 0;
  double lambda = 1.0;
};

struct MixupBatch {
  Matrix embeddings;
  Matrix labels;
  std::vector<MixupDraw> draws;
};

/// Draws one Beta(alpha, alpha) coefficient.
double sample_beta(double alpha, Rng& rng);

/// For every row i picks a partner j != i uniformly and lambda ~
/// Beta(alpha, alpha); returns lambda * row_i + (1 - lambda) * row_j for the
/// embeddings and the labels. `fixed_lambda` overrides the draw.
MixupBatch mixup_apply(const Matrix& embeddings, const Matrix& labels,
                       double alpha, Rng& rng,
                       std::optional<double> fixed_lambda = std::nullopt);

/// The partner and coefficient draws of mixup_apply, without applying them.
std::vector<MixupDraw> draw_mixup(Eigen::Index n, double alpha, Rng& rng,
                                  std::optional<double> fixed_lambda = std::nullopt);

/// Applies previously drawn partners and coefficients.
MixupBatch mixup_with(const Matrix& embeddings, const Matrix& labels,
                      std::vector<MixupDraw> draws);

/// Routes a gradient on the mixed embeddings back to the original rows.
Matrix mixup_backward(const Matrix& grad_mixed,
                      const std::vector<MixupDraw>& draws);

struct LossBreakdown {
  double bce_main = 0.0;
  double bce_mix = 0.0;
  double mmd = 0.0;
  double total = 0.0;
  bool mmd_skipped = false;
};

struct CombinedLoss {
  LossBreakdown loss;
  Matrix grad_main;   // d total / d original scores
  Matrix grad_mixed;  // d total / d mixed scores (empty without mixup)
  Matrix grad_bce_main;  // d bce_main / d original scores
};

/// total = bce_main + lambda_mix * bce_mix + lambda_mmd * mmd. The MMD term is
/// evaluated on the original scores only, and only when score
/// regularization is on with a positive weight.
CombinedLoss combined_loss(const Matrix& scores, const Matrix* mixed_scores,
                           const Matrix& labels, const Matrix* mixed_labels,
                           const std::vector<bool>& cold_flags,
                           const TrainConfig& config);

}  // namespace coldstart

#endif  // COLDSTART_OBJECTIVES_HPP_
