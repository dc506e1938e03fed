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

#ifndef COLDSTART_TRAINER_HPP_
#define COLDSTART_TRAINER_HPP_

#include <functional>
#include <ostream>
#include <stdexcept>
#include <vector>

#include "coldstart/model.hpp"
#include "coldstart/objectives.hpp"
#include "coldstart/synthdata.hpp"

namespace coldstart {

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(const std::string& what, long step)
      : std::runtime_error(what), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEpsilon = 1e-8;

  ModelParams first_moment;
  ModelParams second_moment;
};

struct TrainState {
  ModelParams params;
  AdamState moments;
  long step = 0;
};

TrainState make_train_state(const ModelConfig& config, std::uint64_t seed);

/// One bias-corrected adaptive-moment update. Throws DivergenceError on a
/// non-finite gradient.
void optimizer_step(TrainState& state, const ModelGrads& grads,
                    double learning_rate);

struct StepDiagnostics {
  long step = 0;
  LossBreakdown loss;
  double grad_norm_hist = 0.0;     // mean per-row l2 of d bce_main / d x_hist
  double grad_norm_nonhist = 0.0;  // mean per-row l2 of d bce_main / d x_nonhist
  bool mmd_skipped = false;

  /// nonhist / hist; NaN when the historical norm is zero.
  double grad_ratio() const;
};

/// Training-time only: with probability `rate` per row, replaces the whole
/// historical block by the cold default (zero) vector.
Matrix feature_dropout(const Matrix& x_hist, double rate, Rng& rng);

/// Randomness consumed by one step, drawn up front so that the step is a
/// pure function of the parameters.
struct StepNoise {
  Matrix x_hist;                  // historical block after feature dropout
  std::vector<MixupDraw> mixup;   // empty when mixup is off for the step
};

struct StepOutput {
  CombinedLoss loss;
  ModelGrads grads;  // d total / d params
  // d bce_main / d inputs on the clean (no dropout, no mixup) forward pass.
  InputGrads clean_inputs;
};

/// Loss and parameter gradients of one training step.
StepOutput training_step(const ModelParams& params, const ModelConfig& model_config,
                         const TrainConfig& train_config, const Batch& batch,
                         const StepNoise& noise);

struct TrainResult {
  ModelParams params;
  std::vector<StepDiagnostics> diagnostics;
};

using DiagnosticsSink = std::function<void(const StepDiagnostics&)>;

TrainResult train(const Dataset& data, const ModelConfig& model_config,
                  const TrainConfig& train_config,
                  const DiagnosticsSink& sink = {});

/// Mean of the finite grad ratios in a diagnostics series.
double mean_grad_ratio(const std::vector<StepDiagnostics>& series);

void write_diagnostics_csv(std::ostream& out,
                           const std::vector<StepDiagnostics>& series);

}  // namespace coldstart

#endif  // COLDSTART_TRAINER_HPP_
