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

// coldstart: generate data, train technique subsets, evaluate, diagnose and
// report.
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "coldstart/experiment.hpp"

namespace fs = std::filesystem;
using namespace coldstart;

namespace {

constexpr int kExitConfig = 1;
constexpr int kExitRuntime = 2;

struct Options {
  std::string spec;
  std::string out;
  std::string seeds;
  std::vector<std::string> subsets;
};

std::vector<std::uint64_t> parse_seeds(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      const unsigned long long v = std::stoull(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      seeds.push_back(v);
    } catch (const std::exception&) {
      throw ConfigError("--seeds: '" + item + "' is not a seed");
    }
  }
  if (seeds.empty()) throw ConfigError("--seeds: expected a comma list");
  return seeds;
}

void apply_overrides(ExperimentSpec& spec, const Options& o) {
  if (!o.out.empty()) spec.output_dir = o.out;
  if (!o.seeds.empty()) spec.seeds = parse_seeds(o.seeds);
  if (!o.subsets.empty()) {
    spec.subsets.clear();
    for (const auto& name : o.subsets)
      spec.subsets.push_back(TechniqueSubset::parse(name));
  }
  spec.validate();
}

// Spec for `train`: the named file or the shipped default.
ExperimentSpec spec_for_training(const Options& o) {
  ExperimentSpec spec = o.spec.empty()
                            ? default_experiment()
                            : experiment_from_json(load_json_file(o.spec));
  apply_overrides(spec, o);
  return spec;
}

// Spec for post-training commands. The resolved experiment.json written by
// `train` wins, so every step reads the same dataset files.
ExperimentSpec spec_for_outputs(const Options& o) {
  ExperimentSpec spec = spec_for_training(o);
  const fs::path resolved = spec.output_dir / "experiment.json";
  if (fs::exists(resolved)) {
    const fs::path out = spec.output_dir;
    spec = experiment_from_json(load_json_file(resolved));
    spec.output_dir = out;
    Options rest = o;
    rest.out.clear();
    apply_overrides(spec, rest);
  }
  return spec;
}

json run_to_json(const RunEvaluation& r) {
  json ablation = json::array();
  for (std::size_t g = 0; g < r.ablation_groups.size(); ++g) {
    ablation.push_back(json{{"group", r.ablation_groups[g]},
                            {"historical", static_cast<bool>(
                                               r.ablation_historical[g])},
                            {"delta_pr_auc", r.ablation_deltas[g]}});
  }
  json j = metrics_to_json(r.metrics);
  j["subset"] = r.subset;
  j["seed"] = r.seed;
  j["param_count"] = r.param_count;
  j["ablation"] = ablation;
  return j;
}

std::vector<RunEvaluation> evaluate_outputs(const ExperimentSpec& spec) {
  const ExperimentData data = load_experiment_data(spec);
  std::vector<std::string> missing;
  auto runs = evaluate_experiment(spec, data, missing, thread_cap());
  for (const auto& m : missing) {
    std::cerr << "warning: no training output for " << m << "\n";
  }
  return runs;
}

int cmd_generate(const Options& o) {
  GenSpec gen;
  if (!o.spec.empty()) gen = gen_spec_from_json(load_json_file(o.spec));
  gen.validate();
  const fs::path out = o.out.empty() ? fs::path("data") : fs::path(o.out);
  const GeneratedData g = generate(gen);
  write_dataset(out / "train.jsonl", g.train);
  write_dataset(out / "eval.jsonl", g.eval);
  for (const auto& [name, d] : {std::pair<const char*, const Dataset*>{
                                    "train", &g.train},
                                {"eval", &g.eval}}) {
    std::size_t cold = 0;
    for (const auto& grp : d->groups)
      for (const auto& inst : grp.instances) cold += inst.is_cold ? 1 : 0;
    std::printf("%s: %zu queries, %zu instances, %zu cold\n", name,
                d->groups.size(), d->num_instances(), cold);
  }
  std::printf("wrote %s\n", out.string().c_str());
  return 0;
}

int cmd_train(const Options& o) {
  const ExperimentSpec spec = spec_for_training(o);
  run_experiment(spec, thread_cap());
  std::printf("trained %zu runs under %s\n",
              spec.subsets.size() * spec.seeds.size(),
              spec.output_dir.string().c_str());
  return 0;
}

int cmd_evaluate(const Options& o) {
  const ExperimentSpec spec = spec_for_outputs(o);
  for (const auto& r : evaluate_outputs(spec)) {
    const fs::path dir = spec.output_dir / r.subset / std::to_string(r.seed);
    write_text_file(dir / "metrics.json", run_to_json(r).dump(2) + "\n");
    std::printf("%-28s seed %-3llu hits@%d cold %.4f all %.4f pr_auc %.4f\n",
                r.subset.c_str(), static_cast<unsigned long long>(r.seed),
                spec.eval.k, r.hits_cold_mean(), r.hits_all_mean(),
                r.pr_auc_mean());
  }
  return 0;
}

int cmd_diagnose(const Options& o) {
  const ExperimentSpec spec = spec_for_outputs(o);
  for (const auto& r : evaluate_outputs(spec)) {
    const fs::path dir = spec.output_dir / r.subset / std::to_string(r.seed);
    write_run_diagnostics(dir, r);
    std::printf(
        "%-28s seed %-3llu grad ratio %.4f rank %d gap+ %.4f "
        "ablation hist %.4f nonhist %.4f\n",
        r.subset.c_str(), static_cast<unsigned long long>(r.seed),
        r.grad_ratio_mean, r.metrics.pca.effective_rank, r.positive_gap_mean(),
        r.mean_abs_ablation(true), r.mean_abs_ablation(false));
  }
  return 0;
}

int cmd_report(const Options& o) {
  const ExperimentSpec spec = spec_for_outputs(o);
  const ExperimentData data = load_experiment_data(spec);
  std::vector<std::string> missing;
  const auto runs = evaluate_experiment(spec, data, missing, thread_cap());
  write_report(spec, runs, missing);
  const json report = build_report(spec, runs, missing);
  std::printf("%-28s %12s %12s %10s\n", "subset", "cold lift %", "all lift %",
              "params %");
  for (const auto& sub : spec.subsets) {
    const json& s = report["subsets"][sub.name];
    auto cell = [](const json& v) {
      return v.is_number() ? v.get<double>() : std::nan("");
    };
    std::printf("%-28s %12.2f %12.2f %10.2f\n", sub.name.c_str(),
                cell(s["lift_hits_at_k_cold_pct"]),
                cell(s["lift_hits_at_k_all_pct"]),
                cell(s["param_increase_pct"]));
  }
  for (const auto& m : missing) std::printf("missing run: %s\n", m.c_str());
  std::printf("wrote %s\n", (spec.output_dir / "report.json").string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Cold-start multi-task ranking experiments"};
  app.require_subcommand(1);
  Options opt;

  auto* gen = app.add_subcommand("generate", "Write synthetic train/eval data");
  gen->add_option("--spec", opt.spec, "GenSpec JSON file (defaults if absent)");
  gen->add_option("--out", opt.out, "Output directory")->required();

  std::vector<std::pair<CLI::App*, int (*)(const Options&)>> commands;
  commands.emplace_back(gen, cmd_generate);
  for (auto [name, help, fn] :
       {std::tuple{"train", "Train every technique subset over every seed",
                   cmd_train},
        std::tuple{"evaluate", "Write metrics.json for each trained run",
                   cmd_evaluate},
        std::tuple{"diagnose", "Write per-run diagnostic CSVs", cmd_diagnose},
        std::tuple{"report", "Write report.json and the plot CSVs",
                   cmd_report}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--spec", opt.spec, "Experiment JSON file");
    sub->add_option("--out", opt.out, "Experiment output directory");
    sub->add_option("--seeds", opt.seeds, "Comma-separated seeds");
    sub->add_option("--subset", opt.subsets,
                    "Technique subset, e.g. residual+mixup (repeatable)");
    commands.emplace_back(sub, fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    for (auto& [sub, fn] : commands) {
      if (sub->parsed()) return fn(opt);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const GenerationError& e) {
    std::cerr << "generation error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitConfig;
}
