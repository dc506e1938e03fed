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

#ifndef COLDSTART_EVALKIT_HPP_
#define COLDSTART_EVALKIT_HPP_

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coldstart/model.hpp"
#include "coldstart/synthdata.hpp"

namespace coldstart {

struct EvalConfig {
  std::vector<double> utility_weights{1.0, 1.0, 1.0};
  int k = 3;
  int cold_age_threshold = 28;
  double variance_target = 0.9;

  void validate(int num_tasks) const;
};

/// s = sum_t scores[t] * u[t]
double final_score(std::span<const double> task_scores,
                   std::span<const double> utility_weights);

enum class Subset { kAll, kCold };

/// Per query group, per instance score. Shape mirrors the group list.
using GroupScores = std::vector<std::vector<double>>;

/// Fraction of groups whose top-k (score desc, item_id asc) holds a
/// positive for `task`. With Subset::kCold only cold positives count and the
/// denominator is the groups holding at least one cold positive; coldness
/// is item_age_days < cold_age_threshold.
double hits_at_k(std::span<const QueryGroup> groups, const GroupScores& scores,
                 int task, int k, Subset subset, int cold_age_threshold = 28);

/// Step-wise area under the precision-recall curve; equal scores form one
/// threshold.
double pr_auc(std::span<const double> scores, std::span<const int> labels);

/// Task scores (n x m) and augmented embeddings for every instance of a
/// dataset, in flatten() order.
struct ScoredDataset {
  Matrix scores;
  Matrix embeddings;
};

ScoredDataset score_dataset(const Dataset& data, const ModelParams& params,
                            const ModelConfig& config);

GroupScores final_scores(const Dataset& data, const Matrix& task_scores,
                         std::span<const double> utility_weights);

/// Feature groups addressable by ablation: "hist0".."histN",
/// "nonhist0".."nonhistM".
struct FeatureGroup {
  std::string name;
  bool historical = false;
  int offset = 0;
  int width = 0;
};

std::vector<FeatureGroup> feature_groups(const ModelConfig& config);

/// Column means of the training features, used as ablation fill values.
struct FeatureMeans {
  Eigen::RowVectorXd hist;
  Eigen::RowVectorXd nonhist;
};

FeatureMeans feature_means(const Dataset& train);

/// PR-AUC per task after replacing the named groups with their training
/// means, minus PR-AUC on intact inputs.
std::vector<double> ablate_feature_delta(const ModelParams& params,
                                         const ModelConfig& config,
                                         const Dataset& data,
                                         const FeatureMeans& means,
                                         const std::vector<std::string>& groups);

struct GapCell {
  int task = 0;
  int polarity = 0;  // label value
  std::optional<double> gap;  // (warm - cold) / warm; empty when undefined
  double mean_warm = 0.0;
  double mean_cold = 0.0;
};

std::vector<GapCell> score_gap_report(const Dataset& data,
                                      const Matrix& task_scores,
                                      int cold_age_threshold = 28);

struct PcaResult {
  std::vector<double> spectrum;  // explained-variance ratios, descending
  int effective_rank = 0;
  bool zero_variance = false;
};

PcaResult pca_effective_rank(const Matrix& embeddings, double variance_target);

struct TaskMetrics {
  double hits_all = 0.0;
  double hits_cold = 0.0;
  std::optional<double> pr_auc_all;
  std::optional<double> pr_auc_cold;
};

struct MetricsReport {
  std::vector<TaskMetrics> tasks;
  std::vector<GapCell> score_gaps;
  double grad_ratio_mean = 0.0;
  PcaResult pca;
};

MetricsReport evaluate(const Dataset& data, const ModelParams& params,
                       const ModelConfig& model_config,
                       const EvalConfig& eval_config);

}  // namespace coldstart

#endif  // COLDSTART_EVALKIT_HPP_
