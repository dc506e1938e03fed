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

#include "coldstart/model.hpp"

#include <cmath>
#include <numeric>

namespace coldstart {

namespace ng = numgrad;

namespace {

int sum_of(const std::vector<int>& v) {
  return std::accumulate(v.begin(), v.end(), 0);
}

Affine zero_affine(int in, int out) {
  return Affine{Matrix::Zero(in, out), Matrix::Zero(1, out)};
}

Affine glorot_affine(int in, int out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  Affine a = zero_affine(in, out);
  for (Eigen::Index i = 0; i < a.weight.size(); ++i) {
    a.weight.data()[i] = dist(rng);
  }
  return a;
}

template <typename Make>
ModelParams build(const ModelConfig& c, Make&& make) {
  c.validate();
  ModelParams p;
  const int n_groups =
      static_cast<int>(c.hist_groups.size() + c.nonhist_groups.size());
  for (int g = 0; g < n_groups; ++g) {
    const int in = g < static_cast<int>(c.hist_groups.size())
                       ? c.hist_groups[g]
                       : c.nonhist_groups[g - c.hist_groups.size()];
    p.summarization.push_back(make(in, c.summarization_dims[g]));
  }
  const int width = c.summarization_width();
  for (int l = 0; l < c.num_cross_layers; ++l) {
    p.cross.push_back(make(width, width));
  }
  int in = width;
  for (int d : c.mlp_dims) {
    p.mlp.push_back(make(in, d));
    in = d;
  }
  if (c.residual_enabled) {
    p.residual.push_back(make(c.d_nonhist(), c.residual_proj_dim));
  }
  const int aug = c.augmented_dim();
  for (int e = 0; e < c.num_experts; ++e) {
    p.experts.push_back(make(aug, c.expert_dim));
  }
  for (int t = 0; t < c.num_tasks; ++t) {
    p.gates.push_back(make(aug, c.num_experts));
  }
  for (int t = 0; t < c.num_tasks; ++t) {
    p.heads.push_back(make(c.expert_dim, 1));
  }
  return p;
}

void check_inputs(const Matrix& x_hist, const Matrix& x_nonhist,
                  const ModelConfig& c) {
  if (x_hist.cols() != c.d_hist()) {
    throw ng::ShapeError("x_hist has " + std::to_string(x_hist.cols()) +
                         " columns, model expects d_hist=" +
                         std::to_string(c.d_hist()));
  }
  if (x_nonhist.cols() != c.d_nonhist()) {
    throw ng::ShapeError("x_nonhist has " + std::to_string(x_nonhist.cols()) +
                         " columns, model expects d_nonhist=" +
                         std::to_string(c.d_nonhist()));
  }
  if (x_hist.rows() != x_nonhist.rows()) {
    throw ng::ShapeError("x_hist and x_nonhist batch sizes differ (" +
                         std::to_string(x_hist.rows()) + " vs " +
                         std::to_string(x_nonhist.rows()) + ")");
  }
}

AffineReluTrace affine_relu(const Matrix& input, const Affine& a) {
  AffineReluTrace t;
  t.input = input;
  t.pre_activation = ng::affine_forward(input, a.weight, a.bias);
  t.output = ng::relu_forward(t.pre_activation);
  return t;
}

// Returns d/d input; accumulates parameter gradients into `g`.
Matrix affine_relu_backward(const AffineReluTrace& t, const Affine& a,
                            const Matrix& upstream, Affine& g) {
  const Matrix d_pre = ng::relu_backward(t.pre_activation, upstream);
  auto ag = ng::affine_backward(t.input, a.weight, d_pre);
  g.weight += ag.weights;
  g.bias += ag.bias;
  return std::move(ag.input);
}

}  // namespace

int ModelConfig::d_hist() const { return sum_of(hist_groups); }
int ModelConfig::d_nonhist() const { return sum_of(nonhist_groups); }
int ModelConfig::summarization_width() const {
  return sum_of(summarization_dims);
}
int ModelConfig::interaction_dim() const {
  return mlp_dims.empty() ? summarization_width() : mlp_dims.back();
}
int ModelConfig::augmented_dim() const {
  return interaction_dim() + (residual_enabled ? residual_proj_dim : 0);
}

void ModelConfig::validate() const {
  auto positive = [](const std::vector<int>& v, const char* name) {
    if (v.empty()) {
      throw ConfigError(std::string(name) + " must not be empty");
    }
    for (int d : v) {
      if (d < 1) {
        throw ConfigError(std::string(name) + " entries must be >= 1");
      }
    }
  };
  positive(hist_groups, "hist_groups");
  positive(nonhist_groups, "nonhist_groups");
  positive(summarization_dims, "summarization_dims");
  if (summarization_dims.size() != hist_groups.size() + nonhist_groups.size()) {
    throw ConfigError(
        "summarization_dims needs one entry per feature group (" +
        std::to_string(hist_groups.size() + nonhist_groups.size()) + ")");
  }
  for (int d : mlp_dims) {
    if (d < 1) throw ConfigError("mlp_dims entries must be >= 1");
  }
  if (num_cross_layers < 0) throw ConfigError("num_cross_layers must be >= 0");
  if (num_experts < 1) throw ConfigError("num_experts must be >= 1");
  if (expert_dim < 1) throw ConfigError("expert_dim must be >= 1");
  if (num_tasks < 1) throw ConfigError("num_tasks must be >= 1");
  if (residual_proj_dim < 1 || residual_proj_dim > d_nonhist()) {
    throw ConfigError("residual_proj_dim must be in [1, d_nonhist]");
  }
}

ModelParams ModelParams::zeros(const ModelConfig& config) {
  return build(config, [](int in, int out) { return zero_affine(in, out); });
}

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build(config,
               [&rng](int in, int out) { return glorot_affine(in, out, rng); });
}

std::size_t ModelParams::size() const {
  std::size_t n = 0;
  for_each_tensor([&n](const std::string&, const Matrix& m) {
    n += static_cast<std::size_t>(m.size());
  });
  return n;
}

ModelParams& ModelParams::operator+=(const ModelParams& other) {
  std::vector<const Matrix*> rhs;
  other.for_each_tensor(
      [&rhs](const std::string&, const Matrix& m) { rhs.push_back(&m); });
  std::size_t i = 0;
  for_each_tensor([&](const std::string& name, Matrix& m) {
    if (i >= rhs.size() || rhs[i]->rows() != m.rows() ||
        rhs[i]->cols() != m.cols()) {
      throw ng::ShapeError("ModelParams::operator+=: mismatch at " + name);
    }
    m += *rhs[i++];
  });
  return *this;
}

ModelParams& ModelParams::operator*=(double scale) {
  for_each_tensor([scale](const std::string&, Matrix& m) { m *= scale; });
  return *this;
}

bool ModelParams::operator==(const ModelParams& other) const {
  std::vector<const Matrix*> rhs;
  other.for_each_tensor(
      [&rhs](const std::string&, const Matrix& m) { rhs.push_back(&m); });
  bool same = true;
  std::size_t i = 0;
  for_each_tensor([&](const std::string&, const Matrix& m) {
    if (!same) return;
    if (i >= rhs.size() || rhs[i]->rows() != m.rows() ||
        rhs[i]->cols() != m.cols() || *rhs[i] != m) {
      same = false;
    }
    ++i;
  });
  return same && i == rhs.size();
}

ParamCount count_params(const ModelConfig& config) {
  const ModelParams shapes = ModelParams::zeros(config);
  ParamCount count;
  shapes.for_each_tensor([&count](const std::string& name, const Matrix& m) {
    const auto n = static_cast<std::size_t>(m.size());
    count.total += n;
    count.by_submodule[name.substr(0, name.find('.'))] += n;
  });
  return count;
}

double residual_overhead(ModelConfig config) {
  config.residual_enabled = false;
  const double off = static_cast<double>(count_params(config).total);
  config.residual_enabled = true;
  const double on = static_cast<double>(count_params(config).total);
  return on / off - 1.0;
}

InteractionTrace interaction_forward_trace(const Matrix& x_hist,
                                           const Matrix& x_nonhist,
                                           const ModelParams& params,
                                           const ModelConfig& config) {
  check_inputs(x_hist, x_nonhist, config);
  InteractionTrace t;
  const Eigen::Index batch = x_hist.rows();
  t.x0.resize(batch, config.summarization_width());
  Eigen::Index col = 0;
  Eigen::Index out_col = 0;
  const std::size_t n_hist = config.hist_groups.size();
  for (std::size_t g = 0; g < params.summarization.size(); ++g) {
    const bool hist = g < n_hist;
    const Matrix& src = hist ? x_hist : x_nonhist;
    if (g == n_hist) col = 0;
    const int width = hist ? config.hist_groups[g]
                           : config.nonhist_groups[g - n_hist];
    const Matrix slice = src.middleCols(col, width);
    col += width;
    t.summarization.push_back(affine_relu(slice, params.summarization[g]));
    const Matrix& out = t.summarization.back().output;
    t.x0.middleCols(out_col, out.cols()) = out;
    out_col += out.cols();
  }
  Matrix x = t.x0;
  for (const Affine& layer : params.cross) {
    CrossTrace ct;
    ct.input = x;
    ct.linear = ng::affine_forward(x, layer.weight, layer.bias);
    x = (t.x0.array() * ct.linear.array()).matrix() + x;
    t.cross.push_back(std::move(ct));
  }
  t.cross_out = x;
  for (const Affine& layer : params.mlp) {
    t.mlp.push_back(affine_relu(x, layer));
    x = t.mlp.back().output;
  }
  t.z = std::move(x);
  return t;
}

Matrix interaction_forward(const Matrix& x_hist, const Matrix& x_nonhist,
                           const ModelParams& params,
                           const ModelConfig& config) {
  return interaction_forward_trace(x_hist, x_nonhist, params, config).z;
}

namespace {
constexpr double kMaxLogit = 30.0;
// Same expression as the forward pass, so clamped entries compare equal.
const double kMinScore = ng::sigmoid_forward<double>(Matrix::Constant(1, 1, -kMaxLogit))(0, 0);
const double kMaxScore = ng::sigmoid_forward<double>(Matrix::Constant(1, 1, kMaxLogit))(0, 0);
}  // namespace

HeadTrace head_forward(const Matrix& augmented, const ModelParams& params,
                       const ModelConfig& config) {
  if (augmented.cols() != config.augmented_dim()) {
    throw ng::ShapeError("prediction module input has " +
                         std::to_string(augmented.cols()) +
                         " columns, expected " +
                         std::to_string(config.augmented_dim()));
  }
  HeadTrace t;
  t.augmented = augmented;
  const Eigen::Index batch = augmented.rows();
  for (const Affine& e : params.experts) {
    t.experts.push_back(affine_relu(augmented, e));
  }
  t.scores.resize(batch, config.num_tasks);
  for (int task = 0; task < config.num_tasks; ++task) {
    const Affine& gate = params.gates[task];
    t.gates.push_back(ng::softmax_forward(
        ng::affine_forward(augmented, gate.weight, gate.bias)));
    const Matrix& g = t.gates.back();
    Matrix mix = Matrix::Zero(batch, config.expert_dim);
    for (int e = 0; e < config.num_experts; ++e) {
      mix += (t.experts[e].output.array().colwise() * g.col(e).array())
                 .matrix();
    }
    const Affine& head = params.heads[task];
    // Clamped so the score stays strictly inside (0, 1) in double precision.
    const Matrix logit = ng::affine_forward(mix, head.weight, head.bias)
                             .cwiseMax(-kMaxLogit)
                             .cwiseMin(kMaxLogit);
    t.scores.col(task) = ng::sigmoid_forward<double>(logit).col(0);
    t.mixtures.push_back(std::move(mix));
  }
  return t;
}

ForwardTrace predict(const Matrix& x_hist, const Matrix& x_nonhist,
                     const ModelParams& params, const ModelConfig& config) {
  ForwardTrace t;
  t.x_hist = x_hist;
  t.x_nonhist = x_nonhist;
  t.interaction = interaction_forward_trace(x_hist, x_nonhist, params, config);
  if (config.residual_enabled) {
    t.residual = affine_relu(x_nonhist, params.residual.at(0));
    t.head = head_forward(ng::concat_forward(t.interaction.z, t.residual.output),
                          params, config);
  } else {
    t.head = head_forward(t.interaction.z, params, config);
  }
  return t;
}

Matrix head_backward(const HeadTrace& t, const Matrix& upstream,
                     const ModelParams& params, const ModelConfig& config,
                     ModelGrads& grads) {
  if (upstream.rows() != t.scores.rows() || upstream.cols() != t.scores.cols()) {
    throw StaleTraceError("upstream task gradient shape does not match trace");
  }
  if (static_cast<int>(t.gates.size()) != config.num_tasks ||
      static_cast<int>(t.experts.size()) != config.num_experts ||
      t.augmented.cols() != config.augmented_dim()) {
    throw StaleTraceError("trace was produced under a different config");
  }
  const Eigen::Index batch = t.augmented.rows();
  Matrix d_aug = Matrix::Zero(batch, t.augmented.cols());
  std::vector<Matrix> d_expert(config.num_experts,
                               Matrix::Zero(batch, config.expert_dim));
  for (int task = 0; task < config.num_tasks; ++task) {
    // sigmoid + head affine
    const Matrix score = t.scores.col(task);
    Matrix d_logit = ng::sigmoid_backward<double>(score, upstream.col(task));
    for (Eigen::Index r = 0; r < batch; ++r) {
      if (score(r, 0) <= kMinScore || score(r, 0) >= kMaxScore) d_logit(r, 0) = 0.0;
    }
    const Affine& head = params.heads[task];
    auto hg = ng::affine_backward(t.mixtures[task], head.weight, d_logit);
    grads.heads[task].weight += hg.weights;
    grads.heads[task].bias += hg.bias;
    const Matrix& d_mix = hg.input;
    // mixture = sum_e g_e * expert_e
    const Matrix& g = t.gates[task];
    Matrix d_gate(batch, config.num_experts);
    for (int e = 0; e < config.num_experts; ++e) {
      d_expert[e] += (d_mix.array().colwise() * g.col(e).array()).matrix();
      d_gate.col(e) =
          (d_mix.array() * t.experts[e].output.array()).rowwise().sum();
    }
    const Matrix d_gate_logit = ng::softmax_backward(g, d_gate);
    const Affine& gate = params.gates[task];
    auto gg = ng::affine_backward(t.augmented, gate.weight, d_gate_logit);
    grads.gates[task].weight += gg.weights;
    grads.gates[task].bias += gg.bias;
    d_aug += gg.input;
  }
  for (int e = 0; e < config.num_experts; ++e) {
    d_aug += affine_relu_backward(t.experts[e], params.experts[e], d_expert[e],
                                  grads.experts[e]);
  }
  return d_aug;
}

InputGrads augmented_backward(const ForwardTrace& t,
                              const Matrix& grad_augmented,
                              const ModelParams& params,
                              const ModelConfig& config, ModelGrads& grads) {
  InputGrads in;
  in.x_hist = Matrix::Zero(t.x_hist.rows(), t.x_hist.cols());
  in.x_nonhist = Matrix::Zero(t.x_nonhist.rows(), t.x_nonhist.cols());
  Matrix d_z;
  if (config.residual_enabled) {
    auto [dz, d_res] =
        ng::concat_backward(grad_augmented, config.interaction_dim());
    in.x_nonhist += affine_relu_backward(t.residual, params.residual.at(0),
                                         d_res, grads.residual.at(0));
    d_z = std::move(dz);
  } else {
    d_z = grad_augmented;
  }
  const InteractionTrace& it = t.interaction;
  if (d_z.rows() != it.z.rows() || d_z.cols() != it.z.cols()) {
    throw StaleTraceError("embedding gradient shape does not match trace");
  }
  Matrix d = d_z;
  for (std::size_t l = params.mlp.size(); l-- > 0;) {
    d = affine_relu_backward(it.mlp[l], params.mlp[l], d, grads.mlp[l]);
  }
  // Cross layers: x_{l+1} = x0 * lin_l + x_l, lin_l = x_l W + b.
  Matrix d_x0 = Matrix::Zero(it.x0.rows(), it.x0.cols());
  for (std::size_t l = params.cross.size(); l-- > 0;) {
    const CrossTrace& ct = it.cross[l];
    d_x0 += (d.array() * ct.linear.array()).matrix();
    const Matrix d_lin = (d.array() * it.x0.array()).matrix();
    auto cg = ng::affine_backward(ct.input, params.cross[l].weight, d_lin);
    grads.cross[l].weight += cg.weights;
    grads.cross[l].bias += cg.bias;
    d = d + cg.input;
  }
  d_x0 += d;
  const std::size_t n_hist = config.hist_groups.size();
  Eigen::Index out_col = 0;
  Eigen::Index col = 0;
  for (std::size_t g = 0; g < params.summarization.size(); ++g) {
    if (g == n_hist) col = 0;
    const int out_w = config.summarization_dims[g];
    const Matrix d_out = d_x0.middleCols(out_col, out_w);
    out_col += out_w;
    const Matrix d_slice =
        affine_relu_backward(it.summarization[g], params.summarization[g],
                             d_out, grads.summarization[g]);
    Matrix& target = g < n_hist ? in.x_hist : in.x_nonhist;
    target.middleCols(col, d_slice.cols()) += d_slice;
    col += d_slice.cols();
  }
  return in;
}

BackwardResult backward(const ForwardTrace& trace,
                        const Matrix& upstream_task_grads,
                        const ModelParams& params, const ModelConfig& config) {
  BackwardResult r;
  r.params = ModelParams::zeros(config);
  const Matrix d_aug =
      head_backward(trace.head, upstream_task_grads, params, config, r.params);
  r.inputs = augmented_backward(trace, d_aug, params, config, r.params);
  return r;
}

}  // namespace coldstart
