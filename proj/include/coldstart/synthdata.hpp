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

#ifndef COLDSTART_SYNTHDATA_HPP_
#define COLDSTART_SYNTHDATA_HPP_

// Synthetic cold-start ranking data.
//
// True relevance is a function of a query latent and an item latent only,
// and both latents are visible through the non-historical features. Warm
// items additionally carry historical engagement features that are noisy
// readouts of their relevance; cold items carry (near) zero history and,
// in the training split, have their positive labels suppressed.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "coldstart/model.hpp"

namespace coldstart {

struct Instance {
  std::int64_t query_id = 0;
  std::int64_t item_id = 0;
  std::vector<double> x_hist;
  std::vector<double> x_nonhist;
  std::vector<int> labels;
  int item_age_days = 0;
  bool is_cold = false;
  std::vector<double> p_star;  // generator-only; empty when unknown

  bool operator==(const Instance&) const = default;
};

struct QueryGroup {
  std::int64_t query_id = 0;
  std::vector<Instance> instances;

  bool operator==(const QueryGroup&) const = default;
};

/// Dataset-level metadata stored on the first line of a dataset file.
struct DatasetMeta {
  int version = 1;
  int m = 3;
  int d_hist = 48;
  int d_nonhist = 32;
  int cold_age_threshold = 28;
  std::uint64_t seed = 0;
  std::vector<int> hist_groups{16, 16, 16};
  std::vector<int> nonhist_groups{16, 16};

  bool operator==(const DatasetMeta&) const = default;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<QueryGroup> groups;

  bool operator==(const Dataset&) const = default;
  std::size_t num_instances() const;
};

struct GenSpec {
  int num_queries = 5000;       // training queries
  int num_eval_queries = 1000;
  int items_per_query = 20;
  double cold_fraction = 0.3;
  int m = 3;
  std::vector<int> hist_groups{16, 16, 16};
  std::vector<int> nonhist_groups{16, 16};
  int cold_age_threshold = 28;
  double engagement_bias = 0.5;
  std::vector<double> label_base_rates{0.6, 0.5, 0.4};
  double noise_scale = 0.3;
  std::uint64_t seed = 7;

  int d_hist() const;
  int d_nonhist() const;
  void validate() const;
};

struct GeneratedData {
  Dataset train;
  Dataset eval;
};

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DatasetFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Upper bound on the magnitude of a cold item's historical features.
inline constexpr double kColdHistEpsilon = 1e-3;

GeneratedData generate(const GenSpec& spec);

void write_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset(const std::filesystem::path& path);

std::string dataset_to_string(const Dataset& data);
Dataset dataset_from_string(const std::string& text);

/// Flat row-major views of a set of instances.
struct Batch {
  Matrix x_hist;
  Matrix x_nonhist;
  Matrix labels;
  std::vector<bool> is_cold;
};

Batch make_batch(const std::vector<const Instance*>& rows);
std::vector<const Instance*> flatten(const Dataset& data);

/// Logistic regression (one affine + sigmoid layer) trained by full-batch
/// gradient descent; used to probe how informative a feature block is.
struct LinearProbe {
  Eigen::RowVectorXd mean;   // feature standardization
  Eigen::RowVectorXd scale;
  Matrix weight;  // d x 1
  Matrix bias;    // 1 x 1

  std::vector<double> predict(const Matrix& features) const;
};

LinearProbe fit_probe(const Matrix& features, const std::vector<int>& labels,
                      int iterations = 300, double learning_rate = 0.5);

}  // namespace coldstart

#endif  // COLDSTART_SYNTHDATA_HPP_
