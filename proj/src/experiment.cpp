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

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

namespace coldstart {

namespace fs = std::filesystem;

namespace {

// Reads an object field by field and rejects keys nobody asked for.
class Fields {
 public:
  Fields(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) {
      throw ConfigError(where_ + ": expected an object");
    }
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where_ + "." + key + ": wrong value type");
    }
  }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) {
        throw ConfigError(where_ + ": unknown key '" + it.key() + "'");
      }
    }
  }

 private:
  const json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

struct Stat {
  double mean = std::numeric_limits<double>::quiet_NaN();
  double std = std::numeric_limits<double>::quiet_NaN();
};

Stat stat_of(const std::vector<double>& v) {
  std::vector<double> finite;
  for (double x : v)
    if (std::isfinite(x)) finite.push_back(x);
  Stat s;
  if (finite.empty()) return s;
  double sum = 0.0;
  for (double x : finite) sum += x;
  s.mean = sum / static_cast<double>(finite.size());
  double ss = 0.0;
  for (double x : finite) ss += (x - s.mean) * (x - s.mean);
  s.std = finite.size() > 1
              ? std::sqrt(ss / static_cast<double>(finite.size() - 1))
              : 0.0;
  return s;
}

json num(double x) {
  return std::isfinite(x) ? json(x) : json(nullptr);
}

json stat_json(const std::vector<double>& v) {
  const Stat s = stat_of(v);
  json per_seed = json::array();
  for (double x : v) per_seed.push_back(num(x));
  return json{{"mean", num(s.mean)}, {"std", num(s.std)},
              {"per_seed", per_seed}};
}

std::string fmt(double x) {
  if (!std::isfinite(x)) return "";
  std::ostringstream os;
  os << std::setprecision(17) << x;
  return os.str();
}

}  // namespace

// ---------------------------------------------------------------------------
// Technique subsets

TechniqueSubset TechniqueSubset::parse(const std::string& name) {
  TechniqueSubset s;
  s.name = name;
  if (name == "baseline") return s;
  std::stringstream ss(name);
  std::string part;
  bool any = false;
  while (std::getline(ss, part, '+')) {
    if (part == "residual") {
      s.residual = true;
    } else if (part == "scorereg") {
      s.scorereg = true;
    } else if (part == "mixup") {
      s.mixup = true;
    } else if (part == "dropout") {
      s.dropout = true;
    } else {
      throw ConfigError("unknown technique '" + part + "' in subset '" + name +
                        "' (expected residual, scorereg, mixup or dropout)");
    }
    any = true;
  }
  if (!any) throw ConfigError("empty technique subset name");
  return s;
}

std::vector<std::string> TechniqueSubset::techniques() const {
  std::vector<std::string> out;
  if (residual) out.push_back("residual");
  if (scorereg) out.push_back("scorereg");
  if (mixup) out.push_back("mixup");
  if (dropout) out.push_back("dropout");
  return out;
}

// ---------------------------------------------------------------------------
// Configs

void ExperimentSpec::validate() const {
  if (seeds.empty()) throw ConfigError("seeds: need at least one seed");
  if (subsets.empty()) throw ConfigError("subsets: need at least one subset");
  std::set<std::string> names;
  for (const auto& s : subsets) {
    if (!names.insert(s.name).second) {
      throw ConfigError("subsets: duplicate subset '" + s.name + "'");
    }
  }
  if (!gen && (train_path.empty() || eval_path.empty())) {
    throw ConfigError("data: give either gen_spec or train/eval paths");
  }
  if (gen) {
    gen->validate();
    if (gen->m != model.num_tasks) {
      throw ConfigError("gen_spec.m does not match model.num_tasks");
    }
    if (gen->hist_groups != model.hist_groups ||
        gen->nonhist_groups != model.nonhist_groups) {
      throw ConfigError("gen_spec feature groups do not match the model's");
    }
  }
  model.validate();
  train.validate();
  eval.validate(model.num_tasks);
  if (!(dropout_rate >= 0.0 && dropout_rate <= 1.0)) {
    throw ConfigError("dropout_rate must be in [0, 1]");
  }
}

ExperimentSpec default_experiment() {
  ExperimentSpec s;
  s.gen = GenSpec{};
  for (const char* name :
       {"baseline", "residual", "scorereg", "mixup", "residual+scorereg",
        "residual+mixup", "scorereg+mixup", "residual+scorereg+mixup",
        "dropout"}) {
    s.subsets.push_back(TechniqueSubset::parse(name));
  }
  s.seeds = {1, 2, 3, 4, 5};
  // The batch MMD estimate sees roughly 75 cold rows per step here; at the
  // production weight of 0.1 it barely moves the warm/cold score means.
  s.train.lambda_mmd = 1.0;
  return s;
}

GenSpec gen_spec_from_json(const json& j) {
  GenSpec s;
  Fields f(j, "gen_spec");
  f.get("num_queries", s.num_queries);
  f.get("num_eval_queries", s.num_eval_queries);
  f.get("items_per_query", s.items_per_query);
  f.get("cold_fraction", s.cold_fraction);
  f.get("m", s.m);
  f.get("hist_groups", s.hist_groups);
  f.get("nonhist_groups", s.nonhist_groups);
  f.get("cold_age_threshold", s.cold_age_threshold);
  f.get("engagement_bias", s.engagement_bias);
  f.get("label_base_rates", s.label_base_rates);
  f.get("noise_scale", s.noise_scale);
  f.get("seed", s.seed);
  f.finish();
  return s;
}

json gen_spec_to_json(const GenSpec& s) {
  return json{{"num_queries", s.num_queries},
              {"num_eval_queries", s.num_eval_queries},
              {"items_per_query", s.items_per_query},
              {"cold_fraction", s.cold_fraction},
              {"m", s.m},
              {"hist_groups", s.hist_groups},
              {"nonhist_groups", s.nonhist_groups},
              {"cold_age_threshold", s.cold_age_threshold},
              {"engagement_bias", s.engagement_bias},
              {"label_base_rates", s.label_base_rates},
              {"noise_scale", s.noise_scale},
              {"seed", s.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  Fields f(j, "model");
  f.get("hist_groups", c.hist_groups);
  f.get("nonhist_groups", c.nonhist_groups);
  f.get("summarization_dims", c.summarization_dims);
  f.get("num_cross_layers", c.num_cross_layers);
  f.get("mlp_dims", c.mlp_dims);
  f.get("num_experts", c.num_experts);
  f.get("expert_dim", c.expert_dim);
  f.get("num_tasks", c.num_tasks);
  f.get("residual_enabled", c.residual_enabled);
  f.get("residual_proj_dim", c.residual_proj_dim);
  f.finish();
  return c;
}

json model_config_to_json(const ModelConfig& c) {
  return json{{"hist_groups", c.hist_groups},
              {"nonhist_groups", c.nonhist_groups},
              {"summarization_dims", c.summarization_dims},
              {"num_cross_layers", c.num_cross_layers},
              {"mlp_dims", c.mlp_dims},
              {"num_experts", c.num_experts},
              {"expert_dim", c.expert_dim},
              {"num_tasks", c.num_tasks},
              {"residual_enabled", c.residual_enabled},
              {"residual_proj_dim", c.residual_proj_dim}};
}

TrainConfig train_config_from_json(const json& j, const TrainConfig& base) {
  TrainConfig c = base;
  Fields f(j, "train");
  f.get("lambda_mix", c.lambda_mix);
  f.get("lambda_mmd", c.lambda_mmd);
  f.get("mixup_alpha", c.mixup_alpha);
  f.get("mixup_enabled", c.mixup_enabled);
  f.get("scorereg_enabled", c.scorereg_enabled);
  f.get("feature_dropout_rate", c.feature_dropout_rate);
  f.get("learning_rate", c.learning_rate);
  f.get("batch_size", c.batch_size);
  f.get("epochs", c.epochs);
  f.get("max_steps", c.max_steps);
  f.get("seed", c.seed);
  f.finish();
  return c;
}

json train_config_to_json(const TrainConfig& c) {
  return json{{"lambda_mix", c.lambda_mix},
              {"lambda_mmd", c.lambda_mmd},
              {"mixup_alpha", c.mixup_alpha},
              {"mixup_enabled", c.mixup_enabled},
              {"scorereg_enabled", c.scorereg_enabled},
              {"feature_dropout_rate", c.feature_dropout_rate},
              {"learning_rate", c.learning_rate},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"max_steps", c.max_steps},
              {"seed", c.seed}};
}

EvalConfig eval_config_from_json(const json& j) {
  EvalConfig c;
  Fields f(j, "eval");
  f.get("utility_weights", c.utility_weights);
  f.get("k", c.k);
  f.get("cold_age_threshold", c.cold_age_threshold);
  f.get("variance_target", c.variance_target);
  f.finish();
  return c;
}

json eval_config_to_json(const EvalConfig& c) {
  return json{{"utility_weights", c.utility_weights},
              {"k", c.k},
              {"cold_age_threshold", c.cold_age_threshold},
              {"variance_target", c.variance_target}};
}

ExperimentSpec experiment_from_json(const json& j) {
  ExperimentSpec s = default_experiment();
  Fields f(j, "experiment");
  if (const json* g = f.raw("gen_spec")) {
    s.gen = gen_spec_from_json(*g);
  }
  if (const json* d = f.raw("data")) {
    Fields df(*d, "data");
    std::string train;
    std::string eval;
    df.get("train", train);
    df.get("eval", eval);
    df.finish();
    s.train_path = train;
    s.eval_path = eval;
    if (!f.raw("gen_spec")) s.gen.reset();
  }
  if (const json* m = f.raw("model")) s.model = model_config_from_json(*m);
  if (const json* t = f.raw("train")) s.train = train_config_from_json(*t, s.train);
  if (const json* e = f.raw("eval")) s.eval = eval_config_from_json(*e);
  f.get("dropout_rate", s.dropout_rate);
  if (const json* sub = f.raw("subsets")) {
    if (!sub->is_array()) throw ConfigError("subsets: expected an array");
    s.subsets.clear();
    for (const auto& name : *sub) {
      if (!name.is_string()) throw ConfigError("subsets: expected names");
      s.subsets.push_back(TechniqueSubset::parse(name.get<std::string>()));
    }
  }
  f.get("seeds", s.seeds);
  std::string out = s.output_dir.string();
  f.get("output_dir", out);
  s.output_dir = out;
  f.finish();
  s.validate();
  return s;
}

json experiment_to_json(const ExperimentSpec& s) {
  json j;
  if (s.gen) j["gen_spec"] = gen_spec_to_json(*s.gen);
  if (!s.train_path.empty()) {
    j["data"] = json{{"train", s.train_path.string()},
                     {"eval", s.eval_path.string()}};
  }
  j["model"] = model_config_to_json(s.model);
  j["train"] = train_config_to_json(s.train);
  j["eval"] = eval_config_to_json(s.eval);
  j["dropout_rate"] = s.dropout_rate;
  json subsets = json::array();
  for (const auto& sub : s.subsets) subsets.push_back(sub.name);
  j["subsets"] = subsets;
  j["seeds"] = s.seeds;
  j["output_dir"] = s.output_dir.string();
  return j;
}

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

void write_text_file(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

json params_to_json(const ModelParams& p, const ModelConfig& c) {
  json tensors = json::object();
  p.for_each_tensor([&tensors](const std::string& name, const Matrix& m) {
    tensors[name] = json{{"rows", m.rows()},
                         {"cols", m.cols()},
                         {"data", std::vector<double>(m.data(),
                                                      m.data() + m.size())}};
  });
  return json{{"config", model_config_to_json(c)}, {"tensors", tensors}};
}

std::pair<ModelParams, ModelConfig> params_from_json(const json& j) {
  const ModelConfig c = model_config_from_json(j.at("config"));
  ModelParams p = ModelParams::zeros(c);
  const json& tensors = j.at("tensors");
  p.for_each_tensor([&tensors](const std::string& name, Matrix& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) {
      throw ConfigError("params file: missing tensor '" + name + "'");
    }
    const auto data = it->at("data").get<std::vector<double>>();
    if (it->at("rows").get<Eigen::Index>() != m.rows() ||
        it->at("cols").get<Eigen::Index>() != m.cols() ||
        static_cast<Eigen::Index>(data.size()) != m.size()) {
      throw ConfigError("params file: tensor '" + name + "' has wrong shape");
    }
    std::copy(data.begin(), data.end(), m.data());
  });
  return {std::move(p), c};
}

RunConfigs configs_for(const ExperimentSpec& spec, const TechniqueSubset& subset,
                       std::uint64_t seed) {
  RunConfigs r{spec.model, spec.train};
  r.model.residual_enabled = subset.residual;
  r.train.scorereg_enabled = subset.scorereg;
  r.train.mixup_enabled = subset.mixup;
  r.train.feature_dropout_rate = subset.dropout ? spec.dropout_rate : 0.0;
  r.train.seed = seed;
  return r;
}

ExperimentData load_experiment_data(const ExperimentSpec& spec) {
  if (spec.gen) {
    GeneratedData g = generate(*spec.gen);
    return {std::move(g.train), std::move(g.eval)};
  }
  return {read_dataset(spec.train_path), read_dataset(spec.eval_path)};
}

TrainResult run_one(const ExperimentData& data, const ExperimentSpec& spec,
                    const TechniqueSubset& subset, std::uint64_t seed) {
  const RunConfigs c = configs_for(spec, subset, seed);
  return train(data.train, c.model, c.train);
}

fs::path run_dir(const ExperimentSpec& spec, const TechniqueSubset& subset,
                 std::uint64_t seed) {
  return spec.output_dir / subset.name / std::to_string(seed);
}

int thread_cap() {
  int cap = static_cast<int>(std::thread::hardware_concurrency());
  if (const char* env = std::getenv("COLDSTART_THREADS")) {
    try {
      cap = std::stoi(env);
    } catch (const std::exception&) {
      throw ConfigError("COLDSTART_THREADS must be a positive integer");
    }
    if (cap < 1) throw ConfigError("COLDSTART_THREADS must be >= 1");
  }
  return std::max(cap, 1);
}

namespace {

// Runs job(i) for i in [0, n) on up to `threads` workers. The first failure
// is rethrown after all workers stop.
template <typename Job>
void parallel_for(std::size_t n, int threads, Job&& job) {
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mu;
  auto worker = [&]() {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= n) return;
      {
        std::lock_guard<std::mutex> lock(error_mu);
        if (error) return;
      }
      try {
        job(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!error) error = std::current_exception();
      }
    }
  };
  const int n_workers =
      static_cast<int>(std::min<std::size_t>(n, static_cast<std::size_t>(
                                                    std::max(threads, 1))));
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void run_experiment(const ExperimentSpec& spec, int threads) {
  spec.validate();
  fs::create_directories(spec.output_dir);
  ExperimentSpec resolved = spec;
  const ExperimentData data = load_experiment_data(spec);
  if (spec.gen) {
    // Persist generated data so every later step reads the same files.
    resolved.train_path = fs::absolute(spec.output_dir / "data" / "train.jsonl");
    resolved.eval_path = fs::absolute(spec.output_dir / "data" / "eval.jsonl");
    fs::create_directories(spec.output_dir / "data");
    write_dataset(resolved.train_path, data.train);
    write_dataset(resolved.eval_path, data.eval);
  }
  write_text_file(spec.output_dir / "experiment.json",
                  experiment_to_json(resolved).dump(2) + "\n");

  std::vector<std::pair<const TechniqueSubset*, std::uint64_t>> jobs;
  for (const auto& sub : spec.subsets)
    for (std::uint64_t seed : spec.seeds) jobs.emplace_back(&sub, seed);

  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& [sub, seed] = jobs[i];
    const RunConfigs c = configs_for(spec, *sub, seed);
    TrainResult r;
    try {
      r = train(data.train, c.model, c.train);
    } catch (const DivergenceError& e) {
      throw RunFailure("subset '" + sub->name + "' seed " +
                       std::to_string(seed) + ": " + e.what());
    }
    const fs::path dir = run_dir(spec, *sub, seed);
    fs::create_directories(dir);
    write_text_file(dir / "params.json",
                    params_to_json(r.params, c.model).dump() + "\n");
    std::ostringstream csv;
    write_diagnostics_csv(csv, r.diagnostics);
    write_text_file(dir / "diagnostics.csv", csv.str());
  });
}

// ---------------------------------------------------------------------------
// Evaluation and reporting

double RunEvaluation::hits_cold_mean() const {
  double s = 0.0;
  for (const auto& t : metrics.tasks) s += t.hits_cold;
  return s / static_cast<double>(metrics.tasks.size());
}

double RunEvaluation::hits_all_mean() const {
  double s = 0.0;
  for (const auto& t : metrics.tasks) s += t.hits_all;
  return s / static_cast<double>(metrics.tasks.size());
}

double RunEvaluation::pr_auc_mean() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& t : metrics.tasks) {
    if (t.pr_auc_all) {
      s += *t.pr_auc_all;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n)
           : std::numeric_limits<double>::quiet_NaN();
}

double RunEvaluation::positive_gap_mean() const {
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& c : metrics.score_gaps) {
    if (c.polarity == 1 && c.gap) {
      s += *c.gap;
      ++n;
    }
  }
  return n ? s / static_cast<double>(n)
           : std::numeric_limits<double>::quiet_NaN();
}

double RunEvaluation::mean_abs_ablation(bool historical) const {
  double s = 0.0;
  std::size_t n = 0;
  for (std::size_t g = 0; g < ablation_groups.size(); ++g) {
    if (ablation_historical[g] != historical) continue;
    double d = 0.0;
    for (double x : ablation_deltas[g]) d += x;
    s += std::abs(d / static_cast<double>(ablation_deltas[g].size()));
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

RunEvaluation evaluate_run(const ExperimentData& data, const ExperimentSpec& spec,
                           const TechniqueSubset& subset, std::uint64_t seed,
                           const ModelParams& params,
                           const std::vector<StepDiagnostics>& diagnostics) {
  const RunConfigs c = configs_for(spec, subset, seed);
  RunEvaluation r;
  r.subset = subset.name;
  r.seed = seed;
  r.metrics = evaluate(data.eval, params, c.model, spec.eval);
  r.grad_ratio_mean = mean_grad_ratio(diagnostics);
  r.metrics.grad_ratio_mean = r.grad_ratio_mean;
  for (const auto& d : diagnostics) r.grad_ratio_series.push_back(d.grad_ratio());
  const FeatureMeans means = feature_means(data.train);
  for (const FeatureGroup& g : feature_groups(c.model)) {
    r.ablation_groups.push_back(g.name);
    r.ablation_historical.push_back(g.historical);
    r.ablation_deltas.push_back(
        ablate_feature_delta(params, c.model, data.eval, means, {g.name}));
  }
  r.param_count = count_params(c.model).total;
  return r;
}

std::vector<StepDiagnostics> read_diagnostics_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);  // header
  std::vector<StepDiagnostics> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 8) {
      throw std::runtime_error(path.string() + ": malformed row '" + line + "'");
    }
    StepDiagnostics d;
    d.step = std::stol(cells[0]);
    d.loss.bce_main = std::stod(cells[1]);
    d.loss.bce_mix = std::stod(cells[2]);
    d.loss.mmd = std::stod(cells[3]);
    d.loss.total = std::stod(cells[4]);
    d.grad_norm_hist = std::stod(cells[5]);
    d.grad_norm_nonhist = std::stod(cells[6]);
    d.mmd_skipped = cells[7] == "1";
    d.loss.mmd_skipped = d.mmd_skipped;
    out.push_back(d);
  }
  return out;
}

std::vector<RunEvaluation> evaluate_experiment(const ExperimentSpec& spec,
                                               const ExperimentData& data,
                                               std::vector<std::string>& missing,
                                               int threads) {
  std::vector<std::pair<const TechniqueSubset*, std::uint64_t>> jobs;
  for (const auto& sub : spec.subsets)
    for (std::uint64_t seed : spec.seeds) jobs.emplace_back(&sub, seed);
  std::vector<std::optional<RunEvaluation>> slots(jobs.size());
  parallel_for(jobs.size(), threads, [&](std::size_t i) {
    const auto& [sub, seed] = jobs[i];
    const fs::path dir = run_dir(spec, *sub, seed);
    if (!fs::exists(dir / "params.json") ||
        !fs::exists(dir / "diagnostics.csv")) {
      return;
    }
    auto [params, cfg] = params_from_json(load_json_file(dir / "params.json"));
    const auto diag = read_diagnostics_csv(dir / "diagnostics.csv");
    slots[i] = evaluate_run(data, spec, *sub, seed, params, diag);
  });
  std::vector<RunEvaluation> runs;
  missing.clear();
  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (slots[i]) {
      runs.push_back(std::move(*slots[i]));
    } else {
      missing.push_back(jobs[i].first->name + "/" +
                        std::to_string(jobs[i].second));
    }
  }
  return runs;
}

json metrics_to_json(const MetricsReport& m) {
  json tasks = json::array();
  for (const auto& t : m.tasks) {
    tasks.push_back(json{
        {"hits_at_k_all", t.hits_all},
        {"hits_at_k_cold", t.hits_cold},
        {"pr_auc_all", t.pr_auc_all ? json(*t.pr_auc_all) : json(nullptr)},
        {"pr_auc_cold", t.pr_auc_cold ? json(*t.pr_auc_cold) : json(nullptr)}});
  }
  json gaps = json::array();
  for (const auto& g : m.score_gaps) {
    gaps.push_back(json{{"task", g.task},
                        {"polarity", g.polarity},
                        {"gap", g.gap ? num(*g.gap) : json(nullptr)},
                        {"mean_warm", g.mean_warm},
                        {"mean_cold", g.mean_cold}});
  }
  json spectrum = json::array();
  for (double x : m.pca.spectrum) spectrum.push_back(x);
  return json{{"tasks", tasks},
              {"score_gaps", gaps},
              {"grad_ratio_mean", num(m.grad_ratio_mean)},
              {"pca_spectrum", spectrum},
              {"effective_rank", m.pca.effective_rank},
              {"pca_zero_variance", m.pca.zero_variance}};
}

json build_report(const ExperimentSpec& spec,
                  const std::vector<RunEvaluation>& runs,
                  const std::vector<std::string>& missing) {
  const std::string baseline_name = "baseline";
  auto runs_of = [&runs](const std::string& name) {
    std::vector<const RunEvaluation*> out;
    for (const auto& r : runs)
      if (r.subset == name) out.push_back(&r);
    return out;
  };
  auto collect = [](const std::vector<const RunEvaluation*>& rs, auto&& f) {
    std::vector<double> v;
    for (const auto* r : rs) v.push_back(f(*r));
    return v;
  };
  const auto base_runs = runs_of(baseline_name);
  const double base_params =
      static_cast<double>(count_params(configs_for(spec,
                                                   TechniqueSubset::parse(
                                                       baseline_name),
                                                   0)
                                           .model)
                              .total);
  const double base_cold =
      stat_of(collect(base_runs, [](const RunEvaluation& r) {
        return r.hits_cold_mean();
      })).mean;
  const double base_all =
      stat_of(collect(base_runs, [](const RunEvaluation& r) {
        return r.hits_all_mean();
      })).mean;

  json subsets = json::object();
  for (const auto& sub : spec.subsets) {
    const auto rs = runs_of(sub.name);
    json s;
    s["techniques"] = sub.techniques();
    json seeds = json::array();
    for (const auto* r : rs) seeds.push_back(r->seed);
    s["seeds"] = seeds;
    const std::size_t params =
        count_params(configs_for(spec, sub, 0).model).total;
    s["param_count"] = params;
    s["param_increase_pct"] =
        num((static_cast<double>(params) / base_params - 1.0) * 100.0);
    const auto cold = collect(rs, [](const RunEvaluation& r) {
      return r.hits_cold_mean();
    });
    const auto all = collect(rs, [](const RunEvaluation& r) {
      return r.hits_all_mean();
    });
    s["hits_at_k_cold"] = stat_json(cold);
    s["hits_at_k_all"] = stat_json(all);
    json by_task = json::array();
    for (int t = 0; t < spec.model.num_tasks; ++t) {
      by_task.push_back(json{
          {"task", t},
          {"hits_at_k_cold", stat_json(collect(rs, [t](const RunEvaluation& r) {
             return r.metrics.tasks[t].hits_cold;
           }))},
          {"hits_at_k_all", stat_json(collect(rs, [t](const RunEvaluation& r) {
             return r.metrics.tasks[t].hits_all;
           }))},
          {"pr_auc_all", stat_json(collect(rs, [t](const RunEvaluation& r) {
             const auto& v = r.metrics.tasks[t].pr_auc_all;
             return v ? *v : std::numeric_limits<double>::quiet_NaN();
           }))},
          {"pr_auc_cold", stat_json(collect(rs, [t](const RunEvaluation& r) {
             const auto& v = r.metrics.tasks[t].pr_auc_cold;
             return v ? *v : std::numeric_limits<double>::quiet_NaN();
           }))}});
    }
    s["by_task"] = by_task;
    s["pr_auc"] = stat_json(
        collect(rs, [](const RunEvaluation& r) { return r.pr_auc_mean(); }));
    s["score_gap_positive"] = stat_json(collect(
        rs, [](const RunEvaluation& r) { return r.positive_gap_mean(); }));
    s["score_gap_negative"] =
        stat_json(collect(rs, [](const RunEvaluation& r) {
          double acc = 0.0;
          std::size_t n = 0;
          for (const auto& c : r.metrics.score_gaps) {
            if (c.polarity == 0 && c.gap) {
              acc += *c.gap;
              ++n;
            }
          }
          return n ? acc / static_cast<double>(n)
                   : std::numeric_limits<double>::quiet_NaN();
        }));
    s["grad_ratio_mean"] = stat_json(
        collect(rs, [](const RunEvaluation& r) { return r.grad_ratio_mean; }));
    s["effective_rank"] = stat_json(collect(rs, [](const RunEvaluation& r) {
      return static_cast<double>(r.metrics.pca.effective_rank);
    }));
    s["ablation_hist_abs_mean"] = stat_json(collect(
        rs, [](const RunEvaluation& r) { return r.mean_abs_ablation(true); }));
    s["ablation_nonhist_abs_mean"] = stat_json(collect(
        rs, [](const RunEvaluation& r) { return r.mean_abs_ablation(false); }));
    const double cold_mean = stat_of(cold).mean;
    const double all_mean = stat_of(all).mean;
    s["lift_hits_at_k_cold_pct"] = num((cold_mean / base_cold - 1.0) * 100.0);
    s["lift_hits_at_k_all_pct"] = num((all_mean / base_all - 1.0) * 100.0);
    subsets[sub.name] = s;
  }
  json seeds = json::array();
  for (auto seed : spec.seeds) seeds.push_back(seed);
  return json{{"version", 1},
              {"baseline", baseline_name},
              {"k", spec.eval.k},
              {"seeds", seeds},
              {"missing_runs", missing},
              {"subsets", subsets}};
}

namespace {

void append_pca(std::ostream& out, const RunEvaluation& r) {
  double cumulative = 0.0;
  for (std::size_t i = 0; i < r.metrics.pca.spectrum.size(); ++i) {
    cumulative += r.metrics.pca.spectrum[i];
    out << r.subset << ',' << r.seed << ',' << (i + 1) << ','
        << fmt(r.metrics.pca.spectrum[i]) << ',' << fmt(cumulative) << '\n';
  }
}

void append_gaps(std::ostream& out, const RunEvaluation& r) {
  for (const auto& g : r.metrics.score_gaps) {
    out << r.subset << ',' << r.seed << ',' << g.task << ',' << g.polarity
        << ',' << (g.gap ? fmt(*g.gap) : "") << ',' << fmt(g.mean_warm) << ','
        << fmt(g.mean_cold) << '\n';
  }
}

void append_ablation(std::ostream& out, const RunEvaluation& r) {
  for (std::size_t g = 0; g < r.ablation_groups.size(); ++g) {
    for (std::size_t t = 0; t < r.ablation_deltas[g].size(); ++t) {
      out << r.subset << ',' << r.seed << ',' << r.ablation_groups[g] << ','
          << (r.ablation_historical[g] ? "historical" : "non_historical")
          << ',' << t << ',' << fmt(r.ablation_deltas[g][t]) << '\n';
    }
  }
}

void append_grad_ratio(std::ostream& out, const RunEvaluation& r) {
  for (std::size_t i = 0; i < r.grad_ratio_series.size(); ++i) {
    out << r.subset << ',' << r.seed << ',' << (i + 1) << ','
        << fmt(r.grad_ratio_series[i]) << '\n';
  }
}

constexpr const char* kPcaHeader =
    "subset,seed,component,explained_variance_ratio,cumulative\n";
constexpr const char* kGapHeader =
    "subset,seed,task,polarity,gap_ratio,mean_warm,mean_cold\n";
constexpr const char* kAblationHeader =
    "subset,seed,group,kind,task,delta_pr_auc\n";
constexpr const char* kGradHeader = "subset,seed,step,grad_ratio\n";

}  // namespace

void write_report(const ExperimentSpec& spec,
                  const std::vector<RunEvaluation>& runs,
                  const std::vector<std::string>& missing) {
  write_text_file(spec.output_dir / "report.json",
                  build_report(spec, runs, missing).dump(2) + "\n");
  std::ostringstream pca, gaps, abl, grad;
  pca << kPcaHeader;
  gaps << kGapHeader;
  abl << kAblationHeader;
  grad << kGradHeader;
  for (const auto& r : runs) {
    append_pca(pca, r);
    append_gaps(gaps, r);
    append_ablation(abl, r);
    append_grad_ratio(grad, r);
  }
  write_text_file(spec.output_dir / "pca_spectrum.csv", pca.str());
  write_text_file(spec.output_dir / "score_gaps.csv", gaps.str());
  write_text_file(spec.output_dir / "ablation_deltas.csv", abl.str());
  write_text_file(spec.output_dir / "grad_ratio.csv", grad.str());
}

void write_run_diagnostics(const fs::path& dir, const RunEvaluation& r) {
  std::ostringstream pca, gaps, abl, grad;
  pca << kPcaHeader;
  gaps << kGapHeader;
  abl << kAblationHeader;
  grad << kGradHeader;
  append_pca(pca, r);
  append_gaps(gaps, r);
  append_ablation(abl, r);
  append_grad_ratio(grad, r);
  write_text_file(dir / "pca_spectrum.csv", pca.str());
  write_text_file(dir / "score_gaps.csv", gaps.str());
  write_text_file(dir / "ablation_deltas.csv", abl.str());
  write_text_file(dir / "grad_ratio.csv", grad.str());
}

}  // namespace coldstart
