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

#ifndef COLDSTART_EXPERIMENT_HPP_
#define COLDSTART_EXPERIMENT_HPP_

// Experiment orchestration behind the command-line tool: config parsing,
// running technique subsets over seeds, persisting runs and building the
// comparison report.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "coldstart/evalkit.hpp"
#include "coldstart/model.hpp"
#include "coldstart/objectives.hpp"
#include "coldstart/synthdata.hpp"
#include "coldstart/trainer.hpp"

namespace coldstart {

using json = nlohmann::json;

/// A named combination of {residual, scorereg, mixup, dropout}. Names are
/// "baseline" or technique names joined by '+', e.g. "residual+mixup".
struct TechniqueSubset {
  std::string name;
  bool residual = false;
  bool scorereg = false;
  bool mixup = false;
  bool dropout = false;

  static TechniqueSubset parse(const std::string& name);
  std::vector<std::string> techniques() const;
};

struct ExperimentSpec {
  std::optional<GenSpec> gen;
  std::filesystem::path train_path;  // used when gen is empty
  std::filesystem::path eval_path;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  // Rate applied when the dropout technique is part of a subset.
  double dropout_rate = 0.3;
  std::vector<TechniqueSubset> subsets;
  std::vector<std::uint64_t> seeds;
  std::filesystem::path output_dir = "experiment_out";

  void validate() const;
};

/// Shipped defaults: the nine-subset lattice over five seeds.
ExperimentSpec default_experiment();

// Config (de)serialization. Unknown keys are ConfigErrors.
GenSpec gen_spec_from_json(const json& j);
json gen_spec_to_json(const GenSpec& s);
ModelConfig model_config_from_json(const json& j);
json model_config_to_json(const ModelConfig& c);
/// Keys absent from `j` keep their value from `base`.
TrainConfig train_config_from_json(const json& j, const TrainConfig& base = {});
json train_config_to_json(const TrainConfig& c);
EvalConfig eval_config_from_json(const json& j);
json eval_config_to_json(const EvalConfig& c);
ExperimentSpec experiment_from_json(const json& j);
json experiment_to_json(const ExperimentSpec& s);

json load_json_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

json params_to_json(const ModelParams& p, const ModelConfig& c);
/// Returns the params and the model config stored alongside them.
std::pair<ModelParams, ModelConfig> params_from_json(const json& j);

struct RunConfigs {
  ModelConfig model;
  TrainConfig train;
};

RunConfigs configs_for(const ExperimentSpec& spec, const TechniqueSubset& subset,
                       std::uint64_t seed);

struct ExperimentData {
  Dataset train;
  Dataset eval;
};

/// Generates or loads the datasets named by the spec.
ExperimentData load_experiment_data(const ExperimentSpec& spec);

TrainResult run_one(const ExperimentData& data, const ExperimentSpec& spec,
                    const TechniqueSubset& subset, std::uint64_t seed);

std::filesystem::path run_dir(const ExperimentSpec& spec,
                              const TechniqueSubset& subset,
                              std::uint64_t seed);

/// Parallelism cap from COLDSTART_THREADS (default: hardware concurrency).
int thread_cap();

class RunFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Trains every (subset, seed) pair and writes params.json and
/// diagnostics.csv under output_dir/subset/seed/. Also writes the resolved
/// spec to output_dir/experiment.json and, for generated data, the dataset
/// files under output_dir/data/.
void run_experiment(const ExperimentSpec& spec, int threads);

/// Everything the report needs from one trained run.
struct RunEvaluation {
  std::string subset;
  std::uint64_t seed = 0;
  MetricsReport metrics;
  double grad_ratio_mean = 0.0;
  std::vector<std::string> ablation_groups;
  std::vector<bool> ablation_historical;
  std::vector<std::vector<double>> ablation_deltas;  // per group, per task
  std::vector<double> grad_ratio_series;
  std::size_t param_count = 0;

  double hits_cold_mean() const;  // mean over tasks
  double hits_all_mean() const;
  double pr_auc_mean() const;
  double positive_gap_mean() const;
  double mean_abs_ablation(bool historical) const;
};

RunEvaluation evaluate_run(const ExperimentData& data, const ExperimentSpec& spec,
                           const TechniqueSubset& subset, std::uint64_t seed,
                           const ModelParams& params,
                           const std::vector<StepDiagnostics>& diagnostics);

std::vector<StepDiagnostics> read_diagnostics_csv(
    const std::filesystem::path& path);

/// Loads every run under output_dir and evaluates it. Missing runs are
/// reported in `missing` as "subset/seed".
std::vector<RunEvaluation> evaluate_experiment(const ExperimentSpec& spec,
                                               const ExperimentData& data,
                                               std::vector<std::string>& missing,
                                               int threads);

json metrics_to_json(const MetricsReport& m);

/// Aggregated comparison report; see docs/report_schema.md.
json build_report(const ExperimentSpec& spec,
                  const std::vector<RunEvaluation>& runs,
                  const std::vector<std::string>& missing);

/// Writes report.json and the plot CSVs into output_dir.
void write_report(const ExperimentSpec& spec,
                  const std::vector<RunEvaluation>& runs,
                  const std::vector<std::string>& missing);

/// Writes the four diagnostic CSVs for a single run into `dir`.
void write_run_diagnostics(const std::filesystem::path& dir,
                           const RunEvaluation& run);

}  // namespace coldstart

#endif  // COLDSTART_EXPERIMENT_HPP_
