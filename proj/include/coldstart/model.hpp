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

#ifndef COLDSTART_MODEL_HPP_
#define COLDSTART_MODEL_HPP_

// Multi-task ranker:
//
//   x_hist, x_nonhist
//     -> per-group summarization (affine + relu), concatenated   = x0
//     -> cross layers  x_{l+1} = x0 * (x_l W_l + b_l) + x_l
//     -> MLP (affine + relu per layer)                           = z
//   z_aug = [z; relu(x_nonhist W_r + b_r)]   (residual enabled)
//         = z                                (residual disabled)
//     -> MMoE: experts relu(z_aug W_e + b_e), per-task softmax gates
//     -> per-task head sigmoid(mixture_t W_t + b_t)              = scores

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "coldstart/numgrad.hpp"

namespace coldstart {

using Matrix = numgrad::Matrix<double>;

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct ModelConfig {
  // Widths of the feature groups inside x_hist and x_nonhist, in column
  // order. Their sums are d_hist and d_nonhist.
  std::vector<int> hist_groups{16, 16, 16};
  std::vector<int> nonhist_groups{16, 16};
  // One summarization width per group (hist groups first).
  std::vector<int> summarization_dims{16, 16, 16, 16, 16};
  int num_cross_layers = 2;
  std::vector<int> mlp_dims{64, 32};
  int num_experts = 4;
  int expert_dim = 16;
  int num_tasks = 3;
  bool residual_enabled = false;
  int residual_proj_dim = 8;

  int d_hist() const;
  int d_nonhist() const;
  int summarization_width() const;
  /// Width of z (last MLP layer, or the summarization width without MLP).
  int interaction_dim() const;
  /// Width of the embedding fed to the prediction module.
  int augmented_dim() const;

  /// Throws ConfigError describing the first violated invariant.
  void validate() const;
};

/// One affine map; bias is stored as a 1 x d_out matrix.
struct Affine {
  Matrix weight;
  Matrix bias;
};

struct ModelParams {
  std::vector<Affine> summarization;  // one per feature group
  std::vector<Affine> cross;          // square, summarization width
  std::vector<Affine> mlp;
  std::vector<Affine> residual;       // empty or one projection
  std::vector<Affine> experts;
  std::vector<Affine> gates;          // per task, z_aug -> num_experts
  std::vector<Affine> heads;          // per task, expert_dim -> 1

  /// Zero tensors with the shapes implied by `config`.
  static ModelParams zeros(const ModelConfig& config);

  /// Glorot-uniform weights, zero biases.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  /// Visits every parameter tensor in a fixed order with a stable name.
  template <typename F>
  void for_each_tensor(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each_tensor(F&& f) const {
    visit(*this, f);
  }

  std::size_t size() const;
  ModelParams& operator+=(const ModelParams& other);
  ModelParams& operator*=(double scale);
  bool operator==(const ModelParams& other) const;

 private:
  template <typename Self, typename F>
  static void visit(Self& self, F& f) {
    auto group = [&f](auto& layers, const char* name) {
      for (std::size_t i = 0; i < layers.size(); ++i) {
        const std::string base = std::string(name) + "." + std::to_string(i);
        f(base + ".weight", layers[i].weight);
        f(base + ".bias", layers[i].bias);
      }
    };
    group(self.summarization, "summarization");
    group(self.cross, "cross");
    group(self.mlp, "mlp");
    group(self.residual, "residual");
    group(self.experts, "experts");
    group(self.gates, "gates");
    group(self.heads, "heads");
  }
};

using ModelGrads = ModelParams;

struct ParamCount {
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_submodule;
};

ParamCount count_params(const ModelConfig& config);

/// Fractional parameter increase of enabling the residual projection.
double residual_overhead(ModelConfig config);

struct AffineReluTrace {
  Matrix input;
  Matrix pre_activation;
  Matrix output;
};

struct CrossTrace {
  Matrix input;   // x_l
  Matrix linear;  // x_l W + b
};

struct InteractionTrace {
  std::vector<AffineReluTrace> summarization;
  Matrix x0;
  std::vector<CrossTrace> cross;
  Matrix cross_out;
  std::vector<AffineReluTrace> mlp;
  Matrix z;
};

/// Prediction-module activations for one embedding batch.
struct HeadTrace {
  Matrix augmented;                        // input z_aug
  std::vector<AffineReluTrace> experts;
  std::vector<Matrix> gates;               // per task, batch x num_experts
  std::vector<Matrix> mixtures;            // per task, batch x expert_dim
  Matrix scores;                           // batch x num_tasks
};

struct ForwardTrace {
  Matrix x_hist;
  Matrix x_nonhist;
  InteractionTrace interaction;
  AffineReluTrace residual;  // empty when residual disabled
  HeadTrace head;

  const Matrix& interaction_out() const { return interaction.z; }
  const Matrix& augmented_embedding() const { return head.augmented; }
  const Matrix& task_scores() const { return head.scores; }
};

struct InputGrads {
  Matrix x_hist;
  Matrix x_nonhist;
};

struct BackwardResult {
  ModelGrads params;
  InputGrads inputs;
};

class StaleTraceError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

Matrix interaction_forward(const Matrix& x_hist, const Matrix& x_nonhist,
                           const ModelParams& params,
                           const ModelConfig& config);

InteractionTrace interaction_forward_trace(const Matrix& x_hist,
                                           const Matrix& x_nonhist,
                                           const ModelParams& params,
                                           const ModelConfig& config);

/// Runs the prediction module on an already-built embedding batch. Used for
/// the mixed branch, which starts at z_aug.
HeadTrace head_forward(const Matrix& augmented, const ModelParams& params,
                       const ModelConfig& config);

ForwardTrace predict(const Matrix& x_hist, const Matrix& x_nonhist,
                     const ModelParams& params, const ModelConfig& config);

/// Accumulates head parameter gradients into `grads`; returns d/d z_aug.
Matrix head_backward(const HeadTrace& trace, const Matrix& upstream,
                     const ModelParams& params, const ModelConfig& config,
                     ModelGrads& grads);

/// Backpropagates a gradient on z_aug through the residual projection and
/// the interaction module. Accumulates into `grads`.
InputGrads augmented_backward(const ForwardTrace& trace,
                              const Matrix& grad_augmented,
                              const ModelParams& params,
                              const ModelConfig& config, ModelGrads& grads);

BackwardResult backward(const ForwardTrace& trace,
                        const Matrix& upstream_task_grads,
                        const ModelParams& params, const ModelConfig& config);

}  // namespace coldstart

#endif  // COLDSTART_MODEL_HPP_
