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

#include "coldstart/synthdata.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>

#include <json.hpp>

namespace coldstart {

namespace {

using json = nlohmann::json;
using Rng64 = std::mt19937_64;

constexpr int kLatentDim = 8;
constexpr int kWarmAgeSpan = 365;
// Weights of the additive (item-only) and interaction (query x item) terms
// of the relevance logit.
constexpr double kItemGain = 2.2;
constexpr double kInteractionGain = 1.2;
// Noise on the engagement history relative to the true logit.
constexpr double kHistoryNoise = 0.6;

Rng64 stream(std::uint64_t seed, std::uint64_t id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id), 0x5eedu};
  return Rng64(seq);
}

Eigen::MatrixXd gaussian(int rows, int cols, double scale, Rng64& rng) {
  std::normal_distribution<double> n(0.0, scale);
  Eigen::MatrixXd m(rows, cols);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = n(rng);
  return m;
}

Eigen::VectorXd gaussian_vec(int n, Rng64& rng) {
  return gaussian(n, 1, 1.0, rng).col(0);
}

double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                : std::exp(x) / (1.0 + std::exp(x));
}

// Fixed random structure shared by the train and eval splits.
struct World {
  int m = 0;
  std::vector<Eigen::VectorXd> item_dir;  // per task, additive term
  std::vector<Eigen::MatrixXd> bilinear;  // per task
  std::vector<double> offset;             // per task, calibrates base rate
  std::vector<Eigen::MatrixXd> item_proj;   // nonhist content groups
  std::vector<Eigen::MatrixXd> query_proj;  // nonhist user-sequence group
  std::vector<Eigen::MatrixXd> hist_proj;   // one per hist group

  std::vector<double> logits(const Eigen::VectorXd& q,
                             const Eigen::VectorXd& v) const {
    std::vector<double> out(m);
    for (int t = 0; t < m; ++t) {
      out[t] = offset[t] + kItemGain * item_dir[t].dot(v) +
               kInteractionGain * q.dot(bilinear[t] * v);
    }
    return out;
  }
};

World make_world(const GenSpec& spec, Rng64& rng) {
  World w;
  w.m = spec.m;
  const Eigen::VectorXd common_dir = gaussian_vec(kLatentDim, rng).normalized();
  const Eigen::MatrixXd common_bi =
      gaussian(kLatentDim, kLatentDim, 1.0 / kLatentDim, rng);
  for (int t = 0; t < spec.m; ++t) {
    w.item_dir.push_back(
        (common_dir + 0.4 * gaussian_vec(kLatentDim, rng).normalized())
            .normalized());
    w.bilinear.push_back(
        common_bi + 0.5 * gaussian(kLatentDim, kLatentDim, 1.0 / kLatentDim, rng));
  }
  // Non-historical layout: the last group is the user-sequence embedding,
  // every other group describes item content.
  const std::size_t n_nh = spec.nonhist_groups.size();
  for (std::size_t g = 0; g < n_nh; ++g) {
    const int width = spec.nonhist_groups[g];
    Eigen::MatrixXd p =
        gaussian(width, kLatentDim, 1.0 / std::sqrt(double(kLatentDim)), rng);
    if (g + 1 == n_nh && n_nh > 1) {
      w.query_proj.push_back(std::move(p));
    } else {
      w.item_proj.push_back(std::move(p));
    }
  }
  if (w.query_proj.empty()) {
    // Single non-historical group: it carries both latents.
    w.query_proj.push_back(
        gaussian(spec.nonhist_groups[0], kLatentDim,
                 1.0 / std::sqrt(double(kLatentDim)), rng));
  }
  // Historical groups read out, in turn: item-level engagement rates per
  // task, query-item affinity per task, and volume counters.
  for (std::size_t g = 0; g < spec.hist_groups.size(); ++g) {
    const int src = g % 3 == 2 ? 2 : spec.m;
    w.hist_proj.push_back(
        gaussian(spec.hist_groups[g], src, 1.0 / std::sqrt(double(src)), rng));
  }
  // Calibrate offsets so the mean true relevance hits the base rate.
  std::vector<Eigen::VectorXd> qs;
  std::vector<Eigen::VectorXd> vs;
  for (int i = 0; i < 4000; ++i) {
    qs.push_back(gaussian_vec(kLatentDim, rng));
    vs.push_back(gaussian_vec(kLatentDim, rng));
  }
  w.offset.assign(spec.m, 0.0);
  for (int t = 0; t < spec.m; ++t) {
    std::vector<double> raw(qs.size());
    for (std::size_t i = 0; i < qs.size(); ++i) {
      raw[i] = kItemGain * w.item_dir[t].dot(vs[i]) +
               kInteractionGain * qs[i].dot(w.bilinear[t] * vs[i]);
    }
    double lo = -20.0;
    double hi = 20.0;
    for (int it = 0; it < 100; ++it) {
      const double mid = 0.5 * (lo + hi);
      double mean = 0.0;
      for (double r : raw) mean += sigmoid(mid + r);
      mean /= static_cast<double>(raw.size());
      (mean < spec.label_base_rates[t] ? lo : hi) = mid;
    }
    w.offset[t] = 0.5 * (lo + hi);
  }
  return w;
}

Dataset generate_split(const GenSpec& spec, const World& world, int n_queries,
                       bool biased_labels, std::int64_t first_query,
                       std::int64_t& next_item, Rng64& rng) {
  Dataset d;
  d.meta.m = spec.m;
  d.meta.d_hist = spec.d_hist();
  d.meta.d_nonhist = spec.d_nonhist();
  d.meta.cold_age_threshold = spec.cold_age_threshold;
  d.meta.seed = spec.seed;
  d.meta.hist_groups = spec.hist_groups;
  d.meta.nonhist_groups = spec.nonhist_groups;

  std::normal_distribution<double> noise(0.0, spec.noise_scale);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  std::uniform_real_distribution<double> tiny(-0.5 * kColdHistEpsilon,
                                              0.5 * kColdHistEpsilon);
  std::uniform_int_distribution<int> cold_age(0, spec.cold_age_threshold - 1);
  std::uniform_int_distribution<int> warm_age(
      spec.cold_age_threshold, spec.cold_age_threshold + kWarmAgeSpan);

  std::size_t n_cold = 0;
  std::size_t n_total = 0;
  for (int qi = 0; qi < n_queries; ++qi) {
    QueryGroup group;
    group.query_id = first_query + qi;
    const Eigen::VectorXd q = gaussian_vec(kLatentDim, rng);
    Eigen::VectorXd q_feat = world.query_proj[0] * q;
    for (int k = 0; k < spec.items_per_query; ++k) {
      Instance inst;
      inst.query_id = group.query_id;
      inst.item_id = next_item++;
      const Eigen::VectorXd v = gaussian_vec(kLatentDim, rng);
      inst.is_cold = uni(rng) < spec.cold_fraction;
      inst.item_age_days = inst.is_cold ? cold_age(rng) : warm_age(rng);

      const std::vector<double> logit = world.logits(q, v);
      inst.p_star.resize(spec.m);
      for (int t = 0; t < spec.m; ++t) inst.p_star[t] = sigmoid(logit[t]);

      // Non-historical features.
      inst.x_nonhist.reserve(spec.d_nonhist());
      const bool shared = world.item_proj.empty();
      for (std::size_t g = 0; g < spec.nonhist_groups.size(); ++g) {
        Eigen::VectorXd f;
        if (shared) {
          f = world.query_proj[0] * (q + v);
        } else if (g < world.item_proj.size()) {
          f = world.item_proj[g] * v;
        } else {
          f = q_feat;
        }
        for (Eigen::Index i = 0; i < f.size(); ++i) {
          inst.x_nonhist.push_back(f(i) + noise(rng));
        }
      }

      // Historical features.
      inst.x_hist.reserve(spec.d_hist());
      if (inst.is_cold) {
        for (int i = 0; i < spec.d_hist(); ++i) inst.x_hist.push_back(tiny(rng));
      } else {
        Eigen::VectorXd item_rate(spec.m);
        Eigen::VectorXd affinity(spec.m);
        for (int t = 0; t < spec.m; ++t) {
          const double item_part =
              world.offset[t] + kItemGain * world.item_dir[t].dot(v);
          item_rate(t) = 0.5 * (item_part + kHistoryNoise * unit(rng));
          affinity(t) = 0.5 * (logit[t] + kHistoryNoise * unit(rng));
        }
        Eigen::VectorXd volume(2);
        volume(0) = std::log1p(static_cast<double>(inst.item_age_days)) / 3.0 -
                    1.5 + 0.3 * unit(rng);
        volume(1) = 0.5 * item_rate(0) + 0.5 * unit(rng);
        for (std::size_t g = 0; g < spec.hist_groups.size(); ++g) {
          const Eigen::VectorXd& src =
              g % 3 == 0 ? item_rate : (g % 3 == 1 ? affinity : volume);
          const Eigen::VectorXd f = world.hist_proj[g] * src;
          for (Eigen::Index i = 0; i < f.size(); ++i) {
            inst.x_hist.push_back(f(i) + noise(rng));
          }
        }
      }

      // Labels: logged feedback suppresses cold positives in training.
      inst.labels.resize(spec.m);
      const double keep =
          biased_labels && inst.is_cold ? 1.0 - spec.engagement_bias : 1.0;
      for (int t = 0; t < spec.m; ++t) {
        inst.labels[t] = uni(rng) < inst.p_star[t] * keep ? 1 : 0;
      }
      n_cold += inst.is_cold ? 1 : 0;
      ++n_total;
      group.instances.push_back(std::move(inst));
    }
    d.groups.push_back(std::move(group));
  }
  if (n_cold == 0 || n_cold == n_total) {
    throw GenerationError(
        std::string("cold_fraction ") + std::to_string(spec.cold_fraction) +
        " produced a split with " + (n_cold == 0 ? "no cold" : "no warm") +
        " items");
  }
  return d;
}

std::vector<double> to_vec(const json& j, const char* field, std::size_t n,
                           std::size_t line) {
  if (!j.is_array()) {
    throw DatasetFormatError("line " + std::to_string(line) + ": field '" +
                             field + "' must be an array");
  }
  if (j.size() != n) {
    throw DatasetFormatError("line " + std::to_string(line) + ": field '" +
                             field + "' has " + std::to_string(j.size()) +
                             " entries, expected " + std::to_string(n));
  }
  return j.get<std::vector<double>>();
}

const json& field(const json& obj, const char* name, std::size_t line) {
  auto it = obj.find(name);
  if (it == obj.end()) {
    throw DatasetFormatError("line " + std::to_string(line) +
                             ": missing field '" + name + "'");
  }
  return *it;
}

json meta_to_json(const DatasetMeta& m) {
  json j;
  j["version"] = m.version;
  j["m"] = m.m;
  j["d_hist"] = m.d_hist;
  j["d_nonhist"] = m.d_nonhist;
  j["cold_age_threshold"] = m.cold_age_threshold;
  j["seed"] = m.seed;
  j["hist_groups"] = m.hist_groups;
  j["nonhist_groups"] = m.nonhist_groups;
  return j;
}

int sum_of(const std::vector<int>& v) {
  return std::accumulate(v.begin(), v.end(), 0);
}

}  // namespace

int GenSpec::d_hist() const { return sum_of(hist_groups); }
int GenSpec::d_nonhist() const { return sum_of(nonhist_groups); }

void GenSpec::validate() const {
  if (num_queries < 1) throw ConfigError("num_queries must be >= 1");
  if (num_eval_queries < 1) throw ConfigError("num_eval_queries must be >= 1");
  if (items_per_query < 1) throw ConfigError("items_per_query must be >= 1");
  if (!(cold_fraction >= 0.0 && cold_fraction <= 1.0)) {
    throw ConfigError("cold_fraction must be in [0, 1]");
  }
  if (m < 1) throw ConfigError("m must be >= 1");
  if (hist_groups.empty() || nonhist_groups.empty()) {
    throw ConfigError("hist_groups and nonhist_groups must be non-empty");
  }
  for (int g : hist_groups)
    if (g < 1) throw ConfigError("hist_groups entries must be >= 1");
  for (int g : nonhist_groups)
    if (g < 1) throw ConfigError("nonhist_groups entries must be >= 1");
  if (cold_age_threshold < 1) {
    throw ConfigError("cold_age_threshold must be >= 1");
  }
  if (!(engagement_bias >= 0.0 && engagement_bias < 1.0)) {
    throw ConfigError("engagement_bias must be in [0, 1)");
  }
  if (static_cast<int>(label_base_rates.size()) != m) {
    throw ConfigError("label_base_rates needs one entry per task");
  }
  for (double r : label_base_rates) {
    if (!(r > 0.0 && r < 1.0)) {
      throw ConfigError("label_base_rates entries must be in (0, 1)");
    }
  }
  if (!(noise_scale >= 0.0)) throw ConfigError("noise_scale must be >= 0");
}

std::size_t Dataset::num_instances() const {
  std::size_t n = 0;
  for (const auto& g : groups) n += g.instances.size();
  return n;
}

GeneratedData generate(const GenSpec& spec) {
  spec.validate();
  Rng64 world_rng = stream(spec.seed, 1);
  const World world = make_world(spec, world_rng);
  Rng64 train_rng = stream(spec.seed, 2);
  Rng64 eval_rng = stream(spec.seed, 3);
  std::int64_t next_item = 0;
  GeneratedData out;
  out.train = generate_split(spec, world, spec.num_queries, true, 0, next_item,
                             train_rng);
  out.eval = generate_split(spec, world, spec.num_eval_queries, false,
                            spec.num_queries, next_item, eval_rng);
  return out;
}

std::string dataset_to_string(const Dataset& data) {
  std::string out = meta_to_json(data.meta).dump();
  out += '\n';
  for (const auto& g : data.groups) {
    for (const auto& inst : g.instances) {
      json j;
      j["query_id"] = inst.query_id;
      j["item_id"] = inst.item_id;
      j["x_hist"] = inst.x_hist;
      j["x_nonhist"] = inst.x_nonhist;
      j["labels"] = inst.labels;
      j["item_age_days"] = inst.item_age_days;
      j["is_cold"] = inst.is_cold;
      if (!inst.p_star.empty()) j["p_star"] = inst.p_star;
      out += j.dump();
      out += '\n';
    }
  }
  return out;
}

Dataset dataset_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Dataset d;
  bool have_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DatasetFormatError("line " + std::to_string(line_no) +
                               ": malformed JSON (" + e.what() + ")");
    }
    if (!j.is_object()) {
      throw DatasetFormatError("line " + std::to_string(line_no) +
                               ": expected a JSON object");
    }
    try {
      if (!have_meta) {
        d.meta.version = field(j, "version", line_no).get<int>();
        d.meta.m = field(j, "m", line_no).get<int>();
        d.meta.d_hist = field(j, "d_hist", line_no).get<int>();
        d.meta.d_nonhist = field(j, "d_nonhist", line_no).get<int>();
        d.meta.cold_age_threshold =
            field(j, "cold_age_threshold", line_no).get<int>();
        d.meta.seed = field(j, "seed", line_no).get<std::uint64_t>();
        d.meta.hist_groups = j.contains("hist_groups")
                                 ? j["hist_groups"].get<std::vector<int>>()
                                 : std::vector<int>{d.meta.d_hist};
        d.meta.nonhist_groups =
            j.contains("nonhist_groups")
                ? j["nonhist_groups"].get<std::vector<int>>()
                : std::vector<int>{d.meta.d_nonhist};
        if (sum_of(d.meta.hist_groups) != d.meta.d_hist ||
            sum_of(d.meta.nonhist_groups) != d.meta.d_nonhist) {
          throw DatasetFormatError("line " + std::to_string(line_no) +
                                   ": feature groups do not sum to the "
                                   "declared dimensions");
        }
        have_meta = true;
        continue;
      }
      Instance inst;
      inst.query_id = field(j, "query_id", line_no).get<std::int64_t>();
      inst.item_id = field(j, "item_id", line_no).get<std::int64_t>();
      inst.x_hist = to_vec(field(j, "x_hist", line_no), "x_hist",
                           static_cast<std::size_t>(d.meta.d_hist), line_no);
      inst.x_nonhist =
          to_vec(field(j, "x_nonhist", line_no), "x_nonhist",
                 static_cast<std::size_t>(d.meta.d_nonhist), line_no);
      const json& labels = field(j, "labels", line_no);
      if (!labels.is_array() ||
          labels.size() != static_cast<std::size_t>(d.meta.m)) {
        throw DatasetFormatError("line " + std::to_string(line_no) +
                                 ": field 'labels' must have " +
                                 std::to_string(d.meta.m) + " entries");
      }
      inst.labels = labels.get<std::vector<int>>();
      for (int y : inst.labels) {
        if (y != 0 && y != 1) {
          throw DatasetFormatError("line " + std::to_string(line_no) +
                                   ": field 'labels' entries must be 0 or 1");
        }
      }
      inst.item_age_days = field(j, "item_age_days", line_no).get<int>();
      inst.is_cold = field(j, "is_cold", line_no).get<bool>();
      if (j.contains("p_star")) {
        inst.p_star = to_vec(j["p_star"], "p_star",
                             static_cast<std::size_t>(d.meta.m), line_no);
      }
      if (d.groups.empty() || d.groups.back().query_id != inst.query_id) {
        d.groups.push_back(QueryGroup{inst.query_id, {}});
      }
      d.groups.back().instances.push_back(std::move(inst));
    } catch (const json::type_error& e) {
      throw DatasetFormatError("line " + std::to_string(line_no) +
                               ": wrong value type (" + e.what() + ")");
    }
  }
  if (!have_meta) {
    throw DatasetFormatError("line 1: missing metadata line");
  }
  return d;
}

void write_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path.string() + " for writing");
  }
  out << dataset_to_string(data);
  if (!out) {
    throw std::runtime_error("failed writing " + path.string());
  }
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string() + " for reading");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return dataset_from_string(buf.str());
}

std::vector<const Instance*> flatten(const Dataset& data) {
  std::vector<const Instance*> rows;
  rows.reserve(data.num_instances());
  for (const auto& g : data.groups) {
    for (const auto& inst : g.instances) rows.push_back(&inst);
  }
  return rows;
}

Batch make_batch(const std::vector<const Instance*>& rows) {
  Batch b;
  if (rows.empty()) return b;
  const auto n = static_cast<Eigen::Index>(rows.size());
  const auto dh = static_cast<Eigen::Index>(rows[0]->x_hist.size());
  const auto dn = static_cast<Eigen::Index>(rows[0]->x_nonhist.size());
  const auto m = static_cast<Eigen::Index>(rows[0]->labels.size());
  b.x_hist.resize(n, dh);
  b.x_nonhist.resize(n, dn);
  b.labels.resize(n, m);
  b.is_cold.resize(rows.size());
  for (Eigen::Index r = 0; r < n; ++r) {
    const Instance& inst = *rows[r];
    b.x_hist.row(r) = Eigen::Map<const Eigen::RowVectorXd>(inst.x_hist.data(), dh);
    b.x_nonhist.row(r) =
        Eigen::Map<const Eigen::RowVectorXd>(inst.x_nonhist.data(), dn);
    for (Eigen::Index t = 0; t < m; ++t) b.labels(r, t) = inst.labels[t];
    b.is_cold[r] = inst.is_cold;
  }
  return b;
}

std::vector<double> LinearProbe::predict(const Matrix& features) const {
  Matrix x = features;
  x.rowwise() -= mean;
  x.array().rowwise() /= scale.array();
  const Matrix p = numgrad::sigmoid_forward<double>(
      numgrad::affine_forward<double>(x, weight, bias));
  return std::vector<double>(p.data(), p.data() + p.size());
}

LinearProbe fit_probe(const Matrix& features, const std::vector<int>& labels,
                      int iterations, double learning_rate) {
  if (static_cast<Eigen::Index>(labels.size()) != features.rows() ||
      features.rows() == 0) {
    throw numgrad::ShapeError("fit_probe: need one label per feature row");
  }
  LinearProbe probe;
  probe.mean = features.colwise().mean();
  const Matrix centered = features.rowwise() - probe.mean;
  probe.scale =
      (centered.array().square().colwise().mean().sqrt() + 1e-12).matrix();
  Matrix x = centered;
  x.array().rowwise() /= probe.scale.array();
  probe.weight = Matrix::Zero(features.cols(), 1);
  probe.bias = Matrix::Zero(1, 1);
  Matrix y(features.rows(), 1);
  for (Eigen::Index r = 0; r < y.rows(); ++r) y(r, 0) = labels[r];
  const double n = static_cast<double>(features.rows());
  for (int it = 0; it < iterations; ++it) {
    const Matrix p = numgrad::sigmoid_forward<double>(
        numgrad::affine_forward<double>(x, probe.weight, probe.bias));
    const Matrix d_logit = (p - y) / n;
    const auto g = numgrad::affine_backward<double>(x, probe.weight, d_logit);
    probe.weight -= learning_rate * g.weights;
    probe.bias -= learning_rate * g.bias;
  }
  return probe;
}

}  // namespace coldstart
