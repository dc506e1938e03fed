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

#include "coldstart/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>

namespace coldstart {

namespace {

// Independent random streams so that switching one technique on or off
// never shifts the draws of another.
enum Stream : std::uint64_t {
  kInitStream = 1,
  kShuffleStream = 2,
  kDropoutStream = 3,
  kMixupStream = 4,
};

Rng make_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return Rng(seq);
}

double mean_row_norm(const Matrix& g) {
  if (g.rows() == 0) return 0.0;
  return g.rowwise().norm().mean();
}

}  // namespace

TrainState make_train_state(const ModelConfig& config, std::uint64_t seed) {
  Rng init = make_rng(seed, kInitStream);
  TrainState s;
  s.params = ModelParams::init(config, init());
  s.moments.first_moment = ModelParams::zeros(config);
  s.moments.second_moment = ModelParams::zeros(config);
  return s;
}

void optimizer_step(TrainState& state, const ModelGrads& grads,
                    double learning_rate) {
  std::vector<const Matrix*> g;
  grads.for_each_tensor(
      [&g](const std::string&, const Matrix& m) { g.push_back(&m); });
  std::vector<Matrix*> m1;
  std::vector<Matrix*> m2;
  state.moments.first_moment.for_each_tensor(
      [&m1](const std::string&, Matrix& m) { m1.push_back(&m); });
  state.moments.second_moment.for_each_tensor(
      [&m2](const std::string&, Matrix& m) { m2.push_back(&m); });
  std::size_t i = 0;
  state.params.for_each_tensor([&](const std::string& name, Matrix&) {
    if (i >= g.size() || g[i]->rows() != m1[i]->rows() ||
        g[i]->cols() != m1[i]->cols()) {
      throw numgrad::ShapeError("optimizer_step: gradient shape mismatch at " +
                                name);
    }
    if (!g[i]->allFinite()) {
      throw DivergenceError("non-finite gradient for " + name + " at step " +
                                std::to_string(state.step + 1),
                            state.step + 1);
    }
    ++i;
  });

  const long t = state.step + 1;
  const double c1 = 1.0 - std::pow(AdamState::kBeta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(AdamState::kBeta2, static_cast<double>(t));
  i = 0;
  state.params.for_each_tensor([&](const std::string&, Matrix& theta) {
    Matrix& m = *m1[i];
    Matrix& v = *m2[i];
    const Matrix& gi = *g[i];
    m = AdamState::kBeta1 * m + (1.0 - AdamState::kBeta1) * gi;
    v = AdamState::kBeta2 * v +
        (1.0 - AdamState::kBeta2) * gi.cwiseProduct(gi);
    if (learning_rate != 0.0) {
      theta.array() -= learning_rate * (m.array() / c1) /
                       ((v.array() / c2).sqrt() + AdamState::kEpsilon);
    }
    ++i;
  });
  state.step = t;
}

double StepDiagnostics::grad_ratio() const {
  if (!(grad_norm_hist > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return grad_norm_nonhist / grad_norm_hist;
}

Matrix feature_dropout(const Matrix& x_hist, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) {
    throw std::invalid_argument("feature_dropout: rate must be in [0, 1]");
  }
  Matrix out = x_hist;
  std::bernoulli_distribution drop(rate);
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    if (drop(rng)) out.row(r).setZero();
  }
  return out;
}

StepOutput training_step(const ModelParams& params, const ModelConfig& mc,
                         const TrainConfig& cfg, const Batch& batch,
                         const StepNoise& noise) {
  StepOutput out;
  out.grads = ModelParams::zeros(mc);
  const bool dropped = cfg.feature_dropout_rate > 0.0 && noise.x_hist.size() > 0;
  const ForwardTrace clean = predict(batch.x_hist, batch.x_nonhist, params, mc);
  const ForwardTrace trace =
      dropped ? predict(noise.x_hist, batch.x_nonhist, params, mc) : clean;

  const bool mix = !noise.mixup.empty();
  MixupBatch mixed;
  HeadTrace mixed_head;
  if (mix) {
    mixed = mixup_with(trace.augmented_embedding(), batch.labels, noise.mixup);
    mixed_head = head_forward(mixed.embeddings, params, mc);
  }
  out.loss = combined_loss(trace.task_scores(),
                           mix ? &mixed_head.scores : nullptr, batch.labels,
                           mix ? &mixed.labels : nullptr, batch.is_cold, cfg);
  if (!std::isfinite(out.loss.loss.total)) return out;

  // The reliance diagnostic needs d bce_main / d inputs on the clean pass.
  // Without augmentation or extra loss terms it falls out of the main
  // backward pass; otherwise it takes a separate one.
  const bool mmd_active = cfg.scorereg_enabled && cfg.lambda_mmd > 0.0 &&
                          !out.loss.loss.mmd_skipped;
  const bool separate = dropped || mix || mmd_active;
  if (separate) {
    ModelGrads scratch = ModelParams::zeros(mc);
    const Matrix g_clean = dropped
                               ? bce_loss(clean.task_scores(), batch.labels).grad
                               : out.loss.grad_bce_main;
    const Matrix d_aug = head_backward(clean.head, g_clean, params, mc, scratch);
    out.clean_inputs = augmented_backward(clean, d_aug, params, mc, scratch);
  }

  Matrix d_aug =
      head_backward(trace.head, out.loss.grad_main, params, mc, out.grads);
  if (mix) {
    const Matrix d_mixed = head_backward(mixed_head, out.loss.grad_mixed,
                                         params, mc, out.grads);
    d_aug += mixup_backward(d_mixed, mixed.draws);
  }
  InputGrads in = augmented_backward(trace, d_aug, params, mc, out.grads);
  if (!separate) out.clean_inputs = std::move(in);
  return out;
}

TrainResult train(const Dataset& data, const ModelConfig& model_config,
                  const TrainConfig& cfg, const DiagnosticsSink& sink) {
  model_config.validate();
  cfg.validate();
  const std::vector<const Instance*> rows = flatten(data);
  if (rows.empty()) {
    throw std::invalid_argument("train: dataset has no instances");
  }
  if (static_cast<int>(rows[0]->labels.size()) != model_config.num_tasks) {
    throw ConfigError("dataset has " + std::to_string(rows[0]->labels.size()) +
                      " tasks, model expects " +
                      std::to_string(model_config.num_tasks));
  }

  TrainState state = make_train_state(model_config, cfg.seed);
  Rng shuffle_rng = make_rng(cfg.seed, kShuffleStream);
  Rng dropout_rng = make_rng(cfg.seed, kDropoutStream);
  Rng mixup_rng = make_rng(cfg.seed, kMixupStream);

  TrainResult result;
  std::vector<std::size_t> order(rows.size());
  const bool dropout = cfg.feature_dropout_rate > 0.0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      if (cfg.max_steps > 0 && state.step >= cfg.max_steps) break;
      const std::size_t end = std::min(
          order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Instance*> batch_rows;
      batch_rows.reserve(end - start);
      for (std::size_t k = start; k < end; ++k) {
        batch_rows.push_back(rows[order[k]]);
      }
      const Batch batch = make_batch(batch_rows);

      StepNoise noise;
      noise.x_hist = dropout ? feature_dropout(batch.x_hist,
                                               cfg.feature_dropout_rate,
                                               dropout_rng)
                             : batch.x_hist;
      if (cfg.mixup_enabled && batch.labels.rows() >= 2) {
        noise.mixup = draw_mixup(batch.labels.rows(), cfg.mixup_alpha, mixup_rng);
      }
      const StepOutput out =
          training_step(state.params, model_config, cfg, batch, noise);

      StepDiagnostics diag;
      diag.step = state.step + 1;
      diag.loss = out.loss.loss;
      diag.mmd_skipped = out.loss.loss.mmd_skipped;
      if (!std::isfinite(diag.loss.total)) {
        throw DivergenceError(
            "training diverged: total loss is not finite at step " +
                std::to_string(diag.step),
            diag.step);
      }
      diag.grad_norm_hist = mean_row_norm(out.clean_inputs.x_hist);
      diag.grad_norm_nonhist = mean_row_norm(out.clean_inputs.x_nonhist);
      optimizer_step(state, out.grads, cfg.learning_rate);
      if (sink) sink(diag);
      result.diagnostics.push_back(diag);
    }
    if (cfg.max_steps > 0 && state.step >= cfg.max_steps) break;
  }
  result.params = std::move(state.params);
  return result;
}

double mean_grad_ratio(const std::vector<StepDiagnostics>& series) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& d : series) {
    const double r = d.grad_ratio();
    if (std::isfinite(r)) {
      sum += r;
      ++n;
    }
  }
  return n == 0 ? std::numeric_limits<double>::quiet_NaN()
                : sum / static_cast<double>(n);
}

void write_diagnostics_csv(std::ostream& out,
                           const std::vector<StepDiagnostics>& series) {
  out << "step,bce_main,bce_mix,mmd,total,grad_norm_hist,grad_norm_nonhist,"
         "mmd_skipped\n";
  const auto old_precision = out.precision();
  out << std::setprecision(17);
  for (const auto& d : series) {
    out << d.step << ',' << d.loss.bce_main << ',' << d.loss.bce_mix << ','
        << d.loss.mmd << ',' << d.loss.total << ',' << d.grad_norm_hist << ','
        << d.grad_norm_nonhist << ',' << (d.mmd_skipped ? 1 : 0) << '\n';
  }
  out.precision(old_precision);
}

}  // namespace coldstart
