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

#include "coldstart/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace coldstart;
using coldstart::testing::TempDir;
namespace fs = std::filesystem;

namespace {

ExperimentSpec small_spec(const fs::path& out) {
  ExperimentSpec s = default_experiment();
  s.gen->num_queries = 20;
  s.gen->num_eval_queries = 20;
  s.train.max_steps = 6;
  s.train.batch_size = 64;
  s.subsets = {TechniqueSubset::parse("baseline"),
               TechniqueSubset::parse("residual+scorereg+mixup")};
  s.seeds = {1, 2};
  s.output_dir = out;
  return s;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_cli(const std::string& args) {
  const std::string cmd =
      std::string(COLDSTART_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(TechniqueSubsetTest, ParsesNamesAndRejectsUnknownTechniques) {
  const auto s = TechniqueSubset::parse("residual+mixup");
  EXPECT_TRUE(s.residual);
  EXPECT_TRUE(s.mixup);
  EXPECT_FALSE(s.scorereg);
  EXPECT_EQ(s.techniques(), (std::vector<std::string>{"residual", "mixup"}));
  EXPECT_TRUE(TechniqueSubset::parse("baseline").techniques().empty());
  try {
    TechniqueSubset::parse("residual+attention");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("attention"), std::string::npos);
  }
}

TEST(ConfigJsonTest, RoundTripsAndRejectsUnknownKeys) {
  const ExperimentSpec s = default_experiment();
  const json j = experiment_to_json(s);
  EXPECT_EQ(experiment_to_json(experiment_from_json(j)), j);
  json bad = j;
  bad["train"]["learnin_rate"] = 0.1;
  try {
    experiment_from_json(bad);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("learnin_rate"), std::string::npos);
  }
  EXPECT_THROW(gen_spec_from_json(json{{"num_queries", "many"}}), ConfigError);
}

TEST(ConfigJsonTest, PartialTrainSectionKeepsExperimentDefaults) {
  json j = experiment_to_json(default_experiment());
  j["train"] = json{{"max_steps", 10}};
  const ExperimentSpec s = experiment_from_json(j);
  EXPECT_EQ(s.train.max_steps, 10);
  EXPECT_EQ(s.train.lambda_mmd, default_experiment().train.lambda_mmd);
}

TEST(ConfigsForTest, SubsetTogglesOnlyItsTechniques) {
  const ExperimentSpec s = default_experiment();
  const RunConfigs base = configs_for(s, TechniqueSubset::parse("baseline"), 3);
  EXPECT_FALSE(base.model.residual_enabled);
  EXPECT_FALSE(base.train.scorereg_enabled);
  EXPECT_EQ(base.train.feature_dropout_rate, 0.0);
  EXPECT_EQ(base.train.seed, 3u);
  const RunConfigs d = configs_for(s, TechniqueSubset::parse("dropout"), 3);
  EXPECT_EQ(d.train.feature_dropout_rate, s.dropout_rate);
}

TEST(ParamsJsonTest, RoundTripIsExact) {
  ModelConfig c;
  c.residual_enabled = true;
  const ModelParams p = ModelParams::init(c, 5);
  const auto [q, c2] = params_from_json(json::parse(params_to_json(p, c).dump()));
  EXPECT_EQ(model_config_to_json(c2), model_config_to_json(c));
  std::vector<double> a, b;
  p.for_each_tensor([&a](const std::string&, const Matrix& m) {
    a.insert(a.end(), m.data(), m.data() + m.size());
  });
  q.for_each_tensor([&b](const std::string&, const Matrix& m) {
    b.insert(b.end(), m.data(), m.data() + m.size());
  });
  EXPECT_EQ(a, b);
}

class SmallExperimentTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("experiment");
    spec_ = new ExperimentSpec(small_spec(dir_->path() / "out"));
    run_experiment(*spec_, 1);
  }
  static void TearDownTestSuite() {
    delete spec_;
    delete dir_;
  }
  static json report() {
    const ExperimentData data = load_experiment_data(*spec_);
    std::vector<std::string> missing;
    const auto runs = evaluate_experiment(*spec_, data, missing, 1);
    return build_report(*spec_, runs, missing);
  }

  static TempDir* dir_;
  static ExperimentSpec* spec_;
};

TempDir* SmallExperimentTest::dir_ = nullptr;
ExperimentSpec* SmallExperimentTest::spec_ = nullptr;

TEST_F(SmallExperimentTest, WritesOneDirectoryPerRun) {
  for (const auto& sub : spec_->subsets)
    for (auto seed : spec_->seeds) {
      const fs::path d = run_dir(*spec_, sub, seed);
      EXPECT_TRUE(fs::exists(d / "params.json")) << d;
      EXPECT_TRUE(fs::exists(d / "diagnostics.csv")) << d;
    }
  EXPECT_TRUE(fs::exists(spec_->output_dir / "experiment.json"));
  EXPECT_TRUE(fs::exists(spec_->output_dir / "data" / "train.jsonl"));
}

TEST_F(SmallExperimentTest, ReportSchemaAndBaselineLift) {
  const json r = report();
  for (const char* key : {"version", "baseline", "k", "seeds", "missing_runs", "subsets"})
    EXPECT_TRUE(r.contains(key)) << key;
  EXPECT_TRUE(r["missing_runs"].empty());
  const json& base = r["subsets"]["baseline"];
  EXPECT_EQ(base["lift_hits_at_k_cold_pct"].get<double>(), 0.0);
  EXPECT_EQ(base["lift_hits_at_k_all_pct"].get<double>(), 0.0);
  EXPECT_EQ(base["param_increase_pct"].get<double>(), 0.0);
  for (const char* key :
       {"techniques", "seeds", "param_count", "param_increase_pct", "hits_at_k_cold",
        "hits_at_k_all", "by_task", "pr_auc", "score_gap_positive",
        "score_gap_negative", "grad_ratio_mean", "effective_rank",
        "ablation_hist_abs_mean", "ablation_nonhist_abs_mean",
        "lift_hits_at_k_cold_pct", "lift_hits_at_k_all_pct"})
    EXPECT_TRUE(base.contains(key)) << key;
  EXPECT_EQ(base["hits_at_k_cold"]["per_seed"].size(), 2u);
}

TEST_F(SmallExperimentTest, ResidualParamIncreaseIsTheOverhead) {
  const json r = report();
  EXPECT_NEAR(r["subsets"]["residual+scorereg+mixup"]["param_increase_pct"].get<double>(),
              100.0 * residual_overhead(spec_->model), 1e-9);
}

TEST_F(SmallExperimentTest, ReportIsDeterministic) {
  EXPECT_EQ(report().dump(), report().dump());
}

TEST_F(SmallExperimentTest, MissingRunsAreListed) {
  ExperimentSpec more = *spec_;
  more.seeds.push_back(9);
  const ExperimentData data = load_experiment_data(more);
  std::vector<std::string> missing;
  const auto runs = evaluate_experiment(more, data, missing, 1);
  EXPECT_EQ(runs.size(), 4u);
  EXPECT_EQ(missing.size(), 2u);
}

TEST(ExperimentTest, RetrainingGivesIdenticalParams) {
  TempDir a("rep_a"), b("rep_b");
  ExperimentSpec s = small_spec(a.path());
  s.seeds = {4};
  s.subsets = {TechniqueSubset::parse("residual+mixup+dropout")};
  run_experiment(s, 1);
  s.output_dir = b.path();
  run_experiment(s, 1);
  const fs::path rel = fs::path("residual+mixup+dropout") / "4" / "params.json";
  EXPECT_EQ(slurp(a.path() / rel), slurp(b.path() / rel));
}

TEST(CliTest, EndToEndOnTheSmokeConfig) {
  TempDir dir("cli");
  const std::string out = (dir.path() / "run").string();
  const std::string spec = std::string(COLDSTART_CONFIG_DIR) + "/smoke_experiment.json";
  ASSERT_EQ(run_cli("train --spec " + spec + " --out " + out + " --seeds 1"), 0);
  ASSERT_EQ(run_cli("evaluate --out " + out + " --seeds 1"), 0);
  ASSERT_EQ(run_cli("diagnose --out " + out + " --seeds 1"), 0);
  ASSERT_EQ(run_cli("report --out " + out + " --seeds 1"), 0);
  EXPECT_TRUE(fs::exists(fs::path(out) / "baseline" / "1" / "metrics.json"));
  EXPECT_TRUE(fs::exists(fs::path(out) / "baseline" / "1" / "pca_spectrum.csv"));
  const json r = load_json_file(fs::path(out) / "report.json");
  EXPECT_TRUE(r["subsets"].contains("residual+scorereg+mixup"));
}

TEST(CliTest, GenerateWritesBothSplits) {
  TempDir dir("gen");
  const std::string spec = std::string(COLDSTART_CONFIG_DIR) + "/gen_spec.json";
  ASSERT_EQ(run_cli("generate --spec " + spec + " --out " + dir.path().string()), 0);
  EXPECT_TRUE(fs::exists(dir.path() / "train.jsonl"));
  EXPECT_TRUE(fs::exists(dir.path() / "eval.jsonl"));
}

TEST(CliTest, ConfigErrorsExitWithOne) {
  TempDir dir("bad");
  EXPECT_EQ(run_cli("train --subset residual+attention --out " +
                    dir.path().string()),
            1);
  EXPECT_EQ(run_cli("train --seeds 1,x --out " + dir.path().string()), 1);
  EXPECT_EQ(run_cli("frobnicate"), 1);
  EXPECT_EQ(run_cli("train --spec " + (dir.path() / "none.json").string()), 1);
}
