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

#include "coldstart/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace coldstart {

void EvalConfig::validate(int num_tasks) const {
  if (static_cast<int>(utility_weights.size()) != num_tasks) {
    throw ConfigError("utility_weights needs one entry per task (" +
                      std::to_string(num_tasks) + ")");
  }
  bool any = false;
  for (double u : utility_weights) {
    if (!std::isfinite(u) || u < 0.0) {
      throw ConfigError("utility_weights must be finite and >= 0");
    }
    any = any || u > 0.0;
  }
  if (!any) throw ConfigError("utility_weights must not be all zero");
  if (k < 1) throw ConfigError("k must be >= 1");
  if (cold_age_threshold < 1) throw ConfigError("cold_age_threshold must be >= 1");
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw ConfigError("variance_target must be in (0, 1]");
  }
}

double final_score(std::span<const double> task_scores,
                   std::span<const double> utility_weights) {
  if (task_scores.size() != utility_weights.size()) {
    throw numgrad::ShapeError("final_score: " +
                              std::to_string(task_scores.size()) +
                              " task scores but " +
                              std::to_string(utility_weights.size()) +
                              " utility weights");
  }
  double s = 0.0;
  for (std::size_t t = 0; t < task_scores.size(); ++t) {
    s += task_scores[t] * utility_weights[t];
  }
  return s;
}

double hits_at_k(std::span<const QueryGroup> groups, const GroupScores& scores,
                 int task, int k, Subset subset, int cold_age_threshold) {
  if (groups.empty()) {
    throw std::invalid_argument("hits_at_k: empty group list");
  }
  if (scores.size() != groups.size()) {
    throw numgrad::ShapeError("hits_at_k: scores do not cover every group");
  }
  if (k < 1) throw std::invalid_argument("hits_at_k: k must be >= 1");
  std::size_t hits = 0;
  std::size_t eligible = 0;
  std::vector<std::size_t> order;
  for (std::size_t g = 0; g < groups.size(); ++g) {
    const auto& inst = groups[g].instances;
    if (scores[g].size() != inst.size()) {
      throw numgrad::ShapeError("hits_at_k: group " + std::to_string(g) +
                                " is not fully scored");
    }
    auto counts = [&](const Instance& x) {
      if (task < 0 || task >= static_cast<int>(x.labels.size())) {
        throw std::out_of_range("hits_at_k: task index out of range");
      }
      if (x.labels[task] != 1) return false;
      return subset == Subset::kAll || x.item_age_days < cold_age_threshold;
    };
    if (subset == Subset::kCold &&
        std::none_of(inst.begin(), inst.end(), counts)) {
      continue;
    }
    ++eligible;
    order.resize(inst.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const std::size_t top = std::min<std::size_t>(k, inst.size());
    std::partial_sort(order.begin(), order.begin() + top, order.end(),
                      [&](std::size_t a, std::size_t b) {
                        if (scores[g][a] != scores[g][b]) {
                          return scores[g][a] > scores[g][b];
                        }
                        return inst[a].item_id < inst[b].item_id;
                      });
    for (std::size_t r = 0; r < top; ++r) {
      if (counts(inst[order[r]])) {
        ++hits;
        break;
      }
    }
  }
  if (eligible == 0) return 0.0;
  return static_cast<double>(hits) / static_cast<double>(eligible);
}

double pr_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw numgrad::ShapeError("pr_auc: scores and labels differ in length");
  }
  const auto positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) {
    throw std::invalid_argument("pr_auc: no positive labels");
  }
  if (positives == labels.size()) {
    throw std::invalid_argument("pr_auc: no negative labels");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b];
  });
  double area = 0.0;
  double prev_recall = 0.0;
  std::size_t tp = 0;
  std::size_t seen = 0;
  std::size_t i = 0;
  while (i < order.size()) {
    const double threshold = scores[order[i]];
    while (i < order.size() && scores[order[i]] == threshold) {
      tp += labels[order[i]] == 1 ? 1 : 0;
      ++seen;
      ++i;
    }
    const double recall = static_cast<double>(tp) / positives;
    const double precision = static_cast<double>(tp) / seen;
    area += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return area;
}

ScoredDataset score_dataset(const Dataset& data, const ModelParams& params,
                            const ModelConfig& config) {
  const Batch b = make_batch(flatten(data));
  ScoredDataset out;
  if (b.x_hist.rows() == 0) {
    out.scores.resize(0, config.num_tasks);
    out.embeddings.resize(0, config.augmented_dim());
    return out;
  }
  const ForwardTrace t = predict(b.x_hist, b.x_nonhist, params, config);
  out.scores = t.task_scores();
  out.embeddings = t.augmented_embedding();
  return out;
}

GroupScores final_scores(const Dataset& data, const Matrix& task_scores,
                         std::span<const double> utility_weights) {
  GroupScores out;
  out.reserve(data.groups.size());
  Eigen::Index row = 0;
  std::vector<double> buf(static_cast<std::size_t>(task_scores.cols()));
  for (const auto& g : data.groups) {
    std::vector<double> s;
    s.reserve(g.instances.size());
    for (std::size_t k = 0; k < g.instances.size(); ++k, ++row) {
      for (Eigen::Index t = 0; t < task_scores.cols(); ++t) {
        buf[t] = task_scores(row, t);
      }
      s.push_back(final_score(buf, utility_weights));
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<FeatureGroup> feature_groups(const ModelConfig& config) {
  std::vector<FeatureGroup> out;
  int offset = 0;
  for (std::size_t g = 0; g < config.hist_groups.size(); ++g) {
    out.push_back({"hist" + std::to_string(g), true, offset,
                   config.hist_groups[g]});
    offset += config.hist_groups[g];
  }
  offset = 0;
  for (std::size_t g = 0; g < config.nonhist_groups.size(); ++g) {
    out.push_back({"nonhist" + std::to_string(g), false, offset,
                   config.nonhist_groups[g]});
    offset += config.nonhist_groups[g];
  }
  return out;
}

FeatureMeans feature_means(const Dataset& train) {
  const Batch b = make_batch(flatten(train));
  if (b.x_hist.rows() == 0) {
    throw std::invalid_argument("feature_means: empty dataset");
  }
  return {b.x_hist.colwise().mean(), b.x_nonhist.colwise().mean()};
}

namespace {

std::vector<double> per_task_pr_auc(const Matrix& scores, const Matrix& labels) {
  std::vector<double> out;
  std::vector<double> s(static_cast<std::size_t>(scores.rows()));
  std::vector<int> y(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index t = 0; t < scores.cols(); ++t) {
    for (Eigen::Index r = 0; r < scores.rows(); ++r) {
      s[r] = scores(r, t);
      y[r] = static_cast<int>(labels(r, t));
    }
    out.push_back(pr_auc(s, y));
  }
  return out;
}

}  // namespace

std::vector<double> ablate_feature_delta(const ModelParams& params,
                                         const ModelConfig& config,
                                         const Dataset& data,
                                         const FeatureMeans& means,
                                         const std::vector<std::string>& groups) {
  const std::vector<FeatureGroup> known = feature_groups(config);
  Batch b = make_batch(flatten(data));
  if (b.x_hist.rows() == 0) {
    throw std::invalid_argument("ablate_feature_delta: empty dataset");
  }
  const Matrix full =
      predict(b.x_hist, b.x_nonhist, params, config).task_scores();
  for (const std::string& name : groups) {
    auto it = std::find_if(known.begin(), known.end(),
                           [&](const FeatureGroup& g) { return g.name == name; });
    if (it == known.end()) {
      throw std::invalid_argument("ablate_feature_delta: unknown feature group '" +
                                  name + "'");
    }
    Matrix& x = it->historical ? b.x_hist : b.x_nonhist;
    const Eigen::RowVectorXd& mu = it->historical ? means.hist : means.nonhist;
    x.middleCols(it->offset, it->width).rowwise() =
        mu.segment(it->offset, it->width);
  }
  const Matrix ablated =
      predict(b.x_hist, b.x_nonhist, params, config).task_scores();
  const std::vector<double> base = per_task_pr_auc(full, b.labels);
  const std::vector<double> abl = per_task_pr_auc(ablated, b.labels);
  std::vector<double> delta(base.size());
  for (std::size_t t = 0; t < base.size(); ++t) delta[t] = abl[t] - base[t];
  return delta;
}

std::vector<GapCell> score_gap_report(const Dataset& data,
                                      const Matrix& task_scores,
                                      int cold_age_threshold) {
  const auto rows = flatten(data);
  if (static_cast<Eigen::Index>(rows.size()) != task_scores.rows()) {
    throw numgrad::ShapeError("score_gap_report: one score row per instance");
  }
  std::vector<GapCell> out;
  for (Eigen::Index t = 0; t < task_scores.cols(); ++t) {
    for (int polarity : {1, 0}) {
      double warm_sum = 0.0;
      double cold_sum = 0.0;
      std::size_t n_warm = 0;
      std::size_t n_cold = 0;
      for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r]->labels[t] != polarity) continue;
        if (rows[r]->item_age_days < cold_age_threshold) {
          cold_sum += task_scores(static_cast<Eigen::Index>(r), t);
          ++n_cold;
        } else {
          warm_sum += task_scores(static_cast<Eigen::Index>(r), t);
          ++n_warm;
        }
      }
      GapCell cell;
      cell.task = static_cast<int>(t);
      cell.polarity = polarity;
      if (n_warm > 0 && n_cold > 0) {
        cell.mean_warm = warm_sum / static_cast<double>(n_warm);
        cell.mean_cold = cold_sum / static_cast<double>(n_cold);
        if (cell.mean_warm != 0.0) {
          cell.gap = (cell.mean_warm - cell.mean_cold) / cell.mean_warm;
        }
      }
      out.push_back(cell);
    }
  }
  return out;
}

PcaResult pca_effective_rank(const Matrix& embeddings, double variance_target) {
  if (embeddings.rows() < 2) {
    throw std::invalid_argument("pca_effective_rank: need at least 2 samples");
  }
  if (!(variance_target > 0.0 && variance_target <= 1.0)) {
    throw std::invalid_argument("pca_effective_rank: variance_target in (0, 1]");
  }
  const Eigen::MatrixXd centered =
      embeddings.rowwise() - embeddings.colwise().mean();
  const Eigen::MatrixXd cov = (centered.transpose() * centered) /
                              static_cast<double>(embeddings.rows() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(
      cov, Eigen::EigenvaluesOnly);
  Eigen::VectorXd eig = solver.eigenvalues().cwiseMax(0.0);
  std::vector<double> values(eig.data(), eig.data() + eig.size());
  std::sort(values.begin(), values.end(), std::greater<>());
  const double trace = std::accumulate(values.begin(), values.end(), 0.0);
  PcaResult out;
  out.spectrum.assign(values.size(), 0.0);
  if (!(trace > 0.0)) {
    out.zero_variance = true;
    return out;
  }
  for (std::size_t i = 0; i < values.size(); ++i) {
    out.spectrum[i] = values[i] / trace;
  }
  double cumulative = 0.0;
  for (std::size_t i = 0; i < out.spectrum.size(); ++i) {
    cumulative += out.spectrum[i];
    // Tolerate rounding when the target is exactly reachable.
    if (cumulative >= variance_target - 1e-12) {
      out.effective_rank = static_cast<int>(i + 1);
      break;
    }
  }
  if (out.effective_rank == 0) {
    out.effective_rank = static_cast<int>(out.spectrum.size());
  }
  return out;
}

MetricsReport evaluate(const Dataset& data, const ModelParams& params,
                       const ModelConfig& model_config,
                       const EvalConfig& eval_config) {
  eval_config.validate(model_config.num_tasks);
  const ScoredDataset scored = score_dataset(data, params, model_config);
  const GroupScores fs =
      final_scores(data, scored.scores, eval_config.utility_weights);
  const auto rows = flatten(data);

  MetricsReport report;
  for (int t = 0; t < model_config.num_tasks; ++t) {
    TaskMetrics tm;
    tm.hits_all = hits_at_k(data.groups, fs, t, eval_config.k, Subset::kAll,
                            eval_config.cold_age_threshold);
    tm.hits_cold = hits_at_k(data.groups, fs, t, eval_config.k, Subset::kCold,
                             eval_config.cold_age_threshold);
    std::vector<double> s_all;
    std::vector<int> y_all;
    std::vector<double> s_cold;
    std::vector<int> y_cold;
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const double s = scored.scores(static_cast<Eigen::Index>(r), t);
      const int y = rows[r]->labels[t];
      s_all.push_back(s);
      y_all.push_back(y);
      if (rows[r]->item_age_days < eval_config.cold_age_threshold) {
        s_cold.push_back(s);
        y_cold.push_back(y);
      }
    }
    auto safe = [](const std::vector<double>& s,
                   const std::vector<int>& y) -> std::optional<double> {
      const auto pos = std::count(y.begin(), y.end(), 1);
      if (pos == 0 || pos == static_cast<long>(y.size())) return std::nullopt;
      return pr_auc(s, y);
    };
    tm.pr_auc_all = safe(s_all, y_all);
    tm.pr_auc_cold = safe(s_cold, y_cold);
    report.tasks.push_back(tm);
  }
  report.score_gaps =
      score_gap_report(data, scored.scores, eval_config.cold_age_threshold);
  if (scored.embeddings.rows() >= 2) {
    report.pca =
        pca_effective_rank(scored.embeddings, eval_config.variance_target);
  }
  return report;
}

}  // namespace coldstart
