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

#include <algorithm>
#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace coldstart;
using coldstart::testing::TempDir;

namespace {

GenSpec small_spec(int queries = 50) {
  GenSpec s;
  s.num_queries = queries;
  s.num_eval_queries = queries / 2;
  return s;
}

// Rank-based ROC AUC with midranks for ties.
double roc_auc(const std::vector<double>& s, const std::vector<int>& y) {
  std::vector<std::size_t> idx(s.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](auto a, auto b) { return s[a] < s[b]; });
  double rank_sum = 0.0;
  double pos = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j < idx.size() && s[idx[j]] == s[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j + 1);
    for (std::size_t k = i; k < j; ++k) {
      if (y[idx[k]]) {
        rank_sum += mid;
        pos += 1;
      }
    }
    i = j;
  }
  const double neg = static_cast<double>(s.size()) - pos;
  return (rank_sum - pos * (pos + 1) / 2.0) / (pos * neg);
}

// Observed cold positives against their expectation under p_star * keep,
// summed over tasks; returns {observed, expected, variance}.
std::array<double, 3> cold_positive_tally(const Dataset& d, double keep) {
  std::array<double, 3> t{0, 0, 0};
  for (const auto& g : d.groups)
    for (const auto& inst : g.instances) {
      if (!inst.is_cold) continue;
      for (std::size_t k = 0; k < inst.labels.size(); ++k) {
        const double p = inst.p_star[k] * keep;
        t[0] += inst.labels[k];
        t[1] += p;
        t[2] += p * (1 - p);
      }
    }
  return t;
}

}  // namespace

TEST(GenerateTest, SameSeedIsByteIdentical) {
  const GenSpec s = small_spec();
  EXPECT_EQ(dataset_to_string(generate(s).train),
            dataset_to_string(generate(s).train));
  GenSpec other = s;
  other.seed = s.seed + 1;
  EXPECT_NE(dataset_to_string(generate(s).train),
            dataset_to_string(generate(other).train));
}

TEST(GenerateTest, ShapesFollowTheSpec) {
  const GenSpec s = small_spec(10);
  const GeneratedData g = generate(s);
  EXPECT_EQ(g.train.groups.size(), 10u);
  EXPECT_EQ(g.eval.groups.size(), 5u);
  EXPECT_EQ(g.train.num_instances(), 200u);
  for (const auto& grp : g.train.groups)
    for (const auto& inst : grp.instances) {
      EXPECT_EQ(inst.query_id, grp.query_id);
      EXPECT_EQ(inst.x_hist.size(), 48u);
      EXPECT_EQ(inst.x_nonhist.size(), 32u);
      EXPECT_EQ(inst.labels.size(), 3u);
    }
  // Item ids are unique across both splits.
  std::vector<std::int64_t> ids;
  for (const Dataset* d : {&g.train, &g.eval})
    for (const auto& grp : d->groups)
      for (const auto& inst : grp.instances) ids.push_back(inst.item_id);
  std::sort(ids.begin(), ids.end());
  EXPECT_EQ(std::adjacent_find(ids.begin(), ids.end()), ids.end());
}

TEST(GenerateTest, ColdItemsCarryNoHistoryAndAreYoung) {
  const GeneratedData g = generate(small_spec());
  std::size_t cold = 0;
  for (const auto& grp : g.train.groups)
    for (const auto& inst : grp.instances) {
      if (inst.is_cold) {
        ++cold;
        EXPECT_LT(inst.item_age_days, 28);
        for (double x : inst.x_hist) EXPECT_LE(std::abs(x), kColdHistEpsilon);
      } else {
        EXPECT_GE(inst.item_age_days, 28);
      }
    }
  EXPECT_GT(cold, 0u);
}

TEST(GenerateTest, UnbiasedLabelsMatchTruePropensities) {
  GenSpec s = small_spec(500);  // 10k training instances
  s.engagement_bias = 0.0;
  const auto [obs, expect, var] = cold_positive_tally(generate(s).train, 1.0);
  // One-degree-of-freedom chi-square; 6.635 is the 0.01 critical value.
  const double chi2 = (obs - expect) * (obs - expect) / var;
  EXPECT_LT(chi2, 6.635) << obs << " vs " << expect;
}

TEST(GenerateTest, BiasSuppressesColdPositivesInTrainingOnly) {
  GenSpec s = small_spec(500);
  s.engagement_bias = 0.5;
  const GeneratedData g = generate(s);
  const auto train = cold_positive_tally(g.train, 1.0);
  EXPECT_NEAR(train[0] / train[1], 0.5, 0.05 * 0.5);
  const auto eval = cold_positive_tally(g.eval, 1.0);
  EXPECT_NEAR(eval[0] / eval[1], 1.0, 0.05);
}

TEST(GenerateTest, NoColdItemsIsAnError) {
  GenSpec s = small_spec(5);
  s.cold_fraction = 0.0;
  EXPECT_THROW(generate(s), GenerationError);
  s.cold_fraction = 1.0;
  EXPECT_THROW(generate(s), GenerationError);
}

TEST(GenerateTest, InvalidSpecIsAConfigError) {
  GenSpec s = small_spec(5);
  s.label_base_rates = {0.5};
  EXPECT_THROW(generate(s), ConfigError);
  s = small_spec(5);
  s.engagement_bias = 1.0;
  EXPECT_THROW(generate(s), ConfigError);
}

TEST(GenerateTest, FeatureBlocksCarrySignal) {
  // History is the stronger signal on warm items; the non-historical block
  // alone still ranks eval items well.
  const GeneratedData g = generate(small_spec(400));
  std::vector<const Instance*> warm;
  for (const Instance* r : flatten(g.train))
    if (!r->is_cold) warm.push_back(r);
  const Batch wb = make_batch(warm);
  std::vector<int> wy;
  for (const Instance* r : warm) wy.push_back(r->labels[0]);
  const double hist_auc =
      roc_auc(fit_probe(wb.x_hist, wy).predict(wb.x_hist), wy);
  const double nonhist_auc =
      roc_auc(fit_probe(wb.x_nonhist, wy).predict(wb.x_nonhist), wy);
  EXPECT_GT(hist_auc, nonhist_auc);

  const Batch eb = make_batch(flatten(g.eval));
  std::vector<int> ey;
  for (const Instance* r : flatten(g.eval)) ey.push_back(r->labels[0]);
  const LinearProbe probe = fit_probe(make_batch(flatten(g.train)).x_nonhist, [&] {
    std::vector<int> y;
    for (const Instance* r : flatten(g.train)) y.push_back(r->labels[0]);
    return y;
  }());
  EXPECT_GT(roc_auc(probe.predict(eb.x_nonhist), ey), 0.6);
}

TEST(DatasetIoTest, FileRoundTrip) {
  TempDir dir("io");
  const Dataset d = generate(small_spec(8)).train;
  write_dataset(dir.path() / "d.jsonl", d);
  EXPECT_EQ(read_dataset(dir.path() / "d.jsonl"), d);
}

TEST(DatasetIoTest, EmptyDatasetIsHeaderOnly) {
  Dataset d;
  const std::string text = dataset_to_string(d);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 1);
  EXPECT_EQ(dataset_from_string(text), d);
}

TEST(DatasetIoTest, SingleInstanceBytesRoundTrip) {
  Dataset d;
  d.meta.d_hist = 2;
  d.meta.d_nonhist = 1;
  d.meta.m = 1;
  d.meta.hist_groups = {2};
  d.meta.nonhist_groups = {1};
  Instance inst;
  inst.query_id = 4;
  inst.item_id = 9;
  inst.x_hist = {0.1, -1e-300};
  inst.x_nonhist = {1.0 / 3.0};
  inst.labels = {1};
  inst.item_age_days = 3;
  inst.is_cold = true;
  d.groups.push_back({4, {inst}});
  const std::string text = dataset_to_string(d);
  EXPECT_EQ(dataset_to_string(dataset_from_string(text)), text);
  EXPECT_EQ(dataset_from_string(text), d);
}

TEST(DatasetIoTest, ErrorsNameTheLineAndField) {
  Dataset d = generate(small_spec(2)).train;
  std::string text = dataset_to_string(d);
  // Corrupt the labels of the second instance (third line).
  std::size_t pos = 0;
  for (int i = 0; i < 2; ++i) pos = text.find('\n', pos) + 1;
  const std::size_t lab = text.find("\"labels\":[", pos);
  text.replace(lab, 10, "\"labels\":[7,");
  try {
    dataset_from_string(text);
    FAIL() << "expected a format error";
  } catch (const DatasetFormatError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("labels"), std::string::npos) << msg;
  }
  EXPECT_THROW(dataset_from_string("{\"version\":1}\n"), DatasetFormatError);
  EXPECT_THROW(dataset_from_string("not json\n"), DatasetFormatError);
  EXPECT_THROW(dataset_from_string(""), DatasetFormatError);
}

TEST(BatchTest, MakeBatchCopiesRowsInOrder) {
  const Dataset d = generate(small_spec(2)).train;
  const auto rows = flatten(d);
  const Batch b = make_batch(rows);
  ASSERT_EQ(b.x_hist.rows(), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    EXPECT_EQ(b.x_hist(r, 5), rows[r]->x_hist[5]);
    EXPECT_EQ(b.x_nonhist(r, 31), rows[r]->x_nonhist[31]);
    EXPECT_EQ(b.labels(r, 2), rows[r]->labels[2]);
    EXPECT_EQ(b.is_cold[r], rows[r]->is_cold);
  }
}
