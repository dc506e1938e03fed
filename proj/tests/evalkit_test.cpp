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
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "test_util.hpp"

using namespace coldstart;
using coldstart::testing::Mat;
using coldstart::testing::random_matrix;

namespace {

// 20 queries of 10 items with coarse scores, so ties are common.
struct Fixture {
  std::vector<QueryGroup> groups;
  GroupScores scores;
};

Fixture make_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coarse(0, 9);
  std::uniform_int_distribution<int> age(0, 60);
  std::bernoulli_distribution pos(0.2);
  Fixture f;
  std::int64_t item = 1000;
  for (int q = 0; q < 20; ++q) {
    QueryGroup g{q, {}};
    std::vector<double> s;
    for (int k = 0; k < 10; ++k) {
      Instance inst;
      inst.query_id = q;
      // Descending ids inside a group make the tie-break observable.
      inst.item_id = item - k;
      inst.labels = {pos(rng) ? 1 : 0, pos(rng) ? 1 : 0};
      inst.item_age_days = age(rng);
      g.instances.push_back(inst);
      s.push_back(coarse(rng) / 10.0);
    }
    item += 10;
    f.groups.push_back(std::move(g));
    f.scores.push_back(std::move(s));
  }
  return f;
}

// Full sort per group, then a scan of the first k.
double hits_oracle(const Fixture& f, int task, int k, bool cold_only) {
  int hits = 0, eligible = 0;
  for (std::size_t g = 0; g < f.groups.size(); ++g) {
    std::vector<std::tuple<double, std::int64_t, bool>> rows;
    bool any = false;
    for (std::size_t i = 0; i < f.groups[g].instances.size(); ++i) {
      const Instance& x = f.groups[g].instances[i];
      const bool counts =
          x.labels[task] == 1 && (!cold_only || x.item_age_days < 28);
      any = any || counts;
      rows.emplace_back(-f.scores[g][i], x.item_id, counts);
    }
    if (cold_only && !any) continue;
    ++eligible;
    std::sort(rows.begin(), rows.end());
    for (int r = 0; r < k && r < static_cast<int>(rows.size()); ++r) {
      if (std::get<2>(rows[r])) {
        ++hits;
        break;
      }
    }
  }
  return eligible == 0 ? 0.0 : static_cast<double>(hits) / eligible;
}

// Every distinct score is a threshold; precision and recall of {s >= t} by
// a full scan.
double pr_auc_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  const std::set<double, std::greater<>> thresholds(s.begin(), s.end());
  const double positives = std::count(y.begin(), y.end(), 1);
  double area = 0.0, prev_recall = 0.0;
  for (double t : thresholds) {
    double tp = 0, n = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] >= t) {
        ++n;
        tp += y[i];
      }
    }
    area += (tp / positives - prev_recall) * (tp / n);
    prev_recall = tp / positives;
  }
  return area;
}

GenSpec tiny_gen() {
  GenSpec s;
  s.num_queries = 40;
  s.num_eval_queries = 40;
  s.items_per_query = 10;
  s.m = 2;
  s.label_base_rates = {0.5, 0.4};
  s.hist_groups = {3, 2};
  s.nonhist_groups = {3, 2};
  return s;
}

ModelConfig tiny_model() {
  ModelConfig c;
  c.hist_groups = {3, 2};
  c.nonhist_groups = {3, 2};
  c.summarization_dims = {3, 2, 3, 2};
  c.num_cross_layers = 1;
  c.mlp_dims = {6, 4};
  c.num_experts = 2;
  c.expert_dim = 3;
  c.num_tasks = 2;
  c.residual_proj_dim = 2;
  return c;
}

}  // namespace

TEST(FinalScoreTest, InnerProductWithUtilities) {
  const std::vector<double> s{0.2, 0.5, 0.9}, u{1.0, 2.0, 0.5};
  EXPECT_DOUBLE_EQ(final_score(s, u), 0.2 + 1.0 + 0.45);
  EXPECT_THROW(final_score(s, std::vector<double>{1.0}), numgrad::ShapeError);
}

TEST(HitsTest, MatchesBruteForceOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Fixture f = make_fixture(seed);
    for (int task : {0, 1})
      for (int k : {1, 3, 10})
        for (bool cold : {false, true}) {
          EXPECT_EQ(hits_at_k(f.groups, f.scores, task, k,
                              cold ? Subset::kCold : Subset::kAll),
                    hits_oracle(f, task, k, cold))
              << seed << " " << task << " " << k << " " << cold;
        }
  }
}

TEST(HitsTest, TiesBreakOnAscendingItemId) {
  QueryGroup g{0, {}};
  for (int k = 0; k < 3; ++k) {
    Instance x;
    x.item_id = 10 - k;  // 10, 9, 8
    x.labels = {k == 2 ? 1 : 0};
    x.item_age_days = 40;
    g.instances.push_back(x);
  }
  const std::vector<QueryGroup> groups{g};
  // All scores equal: item 8, the positive, ranks first.
  EXPECT_EQ(hits_at_k(groups, {{0.5, 0.5, 0.5}}, 0, 1, Subset::kAll), 1.0);
  EXPECT_EQ(hits_at_k(groups, {{0.5, 0.5, 0.4}}, 0, 1, Subset::kAll), 0.0);
}

TEST(HitsTest, ColdSubsetCountsOnlyColdPositives) {
  QueryGroup g{0, {}};
  for (int k = 0; k < 2; ++k) {
    Instance x;
    x.item_id = k;
    x.labels = {1};
    x.item_age_days = k == 0 ? 50 : 3;  // warm, then cold
    g.instances.push_back(x);
  }
  const std::vector<QueryGroup> groups{g};
  EXPECT_EQ(hits_at_k(groups, {{0.9, 0.1}}, 0, 1, Subset::kAll), 1.0);
  EXPECT_EQ(hits_at_k(groups, {{0.9, 0.1}}, 0, 1, Subset::kCold), 0.0);
  EXPECT_EQ(hits_at_k(groups, {{0.9, 0.1}}, 0, 2, Subset::kCold), 1.0);
}

TEST(HitsTest, InvariantToPositiveUtilityScaling) {
  const Fixture f = make_fixture(4);
  GroupScores scaled = f.scores;
  for (auto& g : scaled)
    for (double& s : g) s *= 3.5;
  for (int k : {1, 3})
    EXPECT_EQ(hits_at_k(f.groups, f.scores, 0, k, Subset::kAll),
              hits_at_k(f.groups, scaled, 0, k, Subset::kAll));
}

TEST(HitsTest, RejectsBadInput) {
  const Fixture f = make_fixture(5);
  EXPECT_THROW(hits_at_k({}, {}, 0, 1, Subset::kAll), std::invalid_argument);
  EXPECT_THROW(hits_at_k(f.groups, f.scores, 0, 0, Subset::kAll),
               std::invalid_argument);
  GroupScores short_scores = f.scores;
  short_scores.pop_back();
  EXPECT_THROW(hits_at_k(f.groups, short_scores, 0, 1, Subset::kAll),
               numgrad::ShapeError);
}

TEST(PrAucTest, MatchesEnumerationOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    const Fixture f = make_fixture(seed);
    std::vector<double> s;
    std::vector<int> y;
    for (std::size_t g = 0; g < f.groups.size(); ++g)
      for (std::size_t i = 0; i < f.scores[g].size(); ++i) {
        s.push_back(f.scores[g][i]);
        y.push_back(f.groups[g].instances[i].labels[0]);
      }
    EXPECT_NEAR(pr_auc(s, y), pr_auc_oracle(s, y), 1e-12);
  }
}

TEST(PrAucTest, KnownValues) {
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>{0.9, 0.8, 0.1},
                          std::vector<int>{1, 1, 0}),
                   1.0);
  // Ranking: neg, pos, neg, pos -> 0.5 * 0.5 + 0.5 * 0.5.
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>{0.9, 0.8, 0.7, 0.6},
                          std::vector<int>{0, 1, 0, 1}),
                   0.5);
  // One threshold: precision equals prevalence.
  EXPECT_DOUBLE_EQ(pr_auc(std::vector<double>{0.3, 0.3, 0.3, 0.3},
                          std::vector<int>{0, 1, 0, 0}),
                   0.25);
}

TEST(PrAucTest, InvariantToMonotoneTransforms) {
  const Mat raw = random_matrix(300, 1, 9, -3.0, 3.0);
  std::vector<double> s(raw.data(), raw.data() + raw.size());
  std::vector<int> y;
  std::mt19937_64 rng(10);
  for (double v : s) y.push_back(std::bernoulli_distribution(1 / (1 + std::exp(-v)))(rng));
  std::vector<double> t;
  for (double v : s) t.push_back(std::exp(2 * v) + 1.0);
  EXPECT_NEAR(pr_auc(s, y), pr_auc(t, y), 1e-15);
}

TEST(PrAucTest, DegenerateLabelsThrow) {
  EXPECT_THROW(pr_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 0}),
               std::invalid_argument);
  EXPECT_THROW(pr_auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}),
               std::invalid_argument);
}

TEST(PcaTest, PointsOnALineHaveRankOne) {
  Mat x(50, 4);
  const Eigen::RowVector4d dir(1, -2, 0.5, 3);
  for (int r = 0; r < 50; ++r) x.row(r) = (r - 20.0) * dir + Eigen::RowVector4d(1, 1, 1, 1);
  const PcaResult p = pca_effective_rank(x, 0.9);
  EXPECT_EQ(p.effective_rank, 1);
  EXPECT_NEAR(p.spectrum[0], 1.0, 1e-12);
}

TEST(PcaTest, IsotropicCloudHasFlatSpectrum) {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> n(0, 1);
  // Sample eigenvalues spread as roughly sqrt(d / n); 1e5 rows keep the
  // extremes well inside 5%.
  Mat x(100000, 8);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = n(rng);
  const PcaResult p = pca_effective_rank(x, 0.9);
  EXPECT_EQ(p.effective_rank, 8);
  for (double v : p.spectrum) EXPECT_NEAR(v, 1.0 / 8, 0.05 / 8);
  EXPECT_NEAR(std::accumulate(p.spectrum.begin(), p.spectrum.end(), 0.0), 1.0, 1e-9);
}

TEST(PcaTest, InvariantToRowOrderAndShift) {
  const Mat x = random_matrix(200, 6, 13) * random_matrix(6, 6, 14);
  Mat y = x.colwise().reverse();
  y.rowwise() += Eigen::RowVectorXd::Constant(6, 42.0);
  const PcaResult a = pca_effective_rank(x, 0.9);
  const PcaResult b = pca_effective_rank(y, 0.9);
  EXPECT_EQ(a.effective_rank, b.effective_rank);
  for (std::size_t i = 0; i < a.spectrum.size(); ++i)
    EXPECT_NEAR(a.spectrum[i], b.spectrum[i], 1e-9);
}

TEST(PcaTest, ConstantEmbeddingsAreFlagged) {
  const PcaResult p = pca_effective_rank(Mat::Constant(10, 3, 2.0), 0.9);
  EXPECT_TRUE(p.zero_variance);
  EXPECT_EQ(p.effective_rank, 0);
  EXPECT_THROW(pca_effective_rank(Mat::Zero(1, 3), 0.9), std::invalid_argument);
}

TEST(ScoreGapTest, ConstantPredictorHasNoGap) {
  const Dataset d = generate(tiny_gen()).eval;
  const Mat scores = Mat::Constant(static_cast<Eigen::Index>(d.num_instances()), 2, 0.4);
  for (const GapCell& c : score_gap_report(d, scores)) {
    ASSERT_TRUE(c.gap.has_value());
    EXPECT_NEAR(*c.gap, 0.0, 1e-12);
  }
}

TEST(ScoreGapTest, HandExample) {
  Dataset d;
  QueryGroup g{0, {}};
  const int ages[] = {40, 40, 5, 5};
  for (int i = 0; i < 4; ++i) {
    Instance x;
    x.item_id = i;
    x.labels = {1};
    x.item_age_days = ages[i];
    g.instances.push_back(x);
  }
  d.groups.push_back(g);
  const auto cells = score_gap_report(d, coldstart::testing::mat({{0.8}, {0.6}, {0.3}, {0.4}}));
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_EQ(cells[0].polarity, 1);
  EXPECT_NEAR(*cells[0].gap, (0.7 - 0.35) / 0.7, 1e-15);
  EXPECT_FALSE(cells[1].gap.has_value());  // no negatives
}

TEST(AblationTest, AblatingEverythingLeavesPrevalence) {
  const GeneratedData g = generate(tiny_gen());
  const ModelConfig c = tiny_model();
  const ModelParams p = ModelParams::init(c, 3);
  std::vector<std::string> all;
  for (const auto& fg : feature_groups(c)) all.push_back(fg.name);
  const auto delta = ablate_feature_delta(p, c, g.eval, feature_means(g.train), all);
  const MetricsReport m = evaluate(g.eval, p, c, EvalConfig{{1.0, 1.0}});
  const Batch b = make_batch(flatten(g.eval));
  for (int t = 0; t < 2; ++t) {
    const double prevalence = b.labels.col(t).mean();
    EXPECT_NEAR(*m.tasks[t].pr_auc_all + delta[t], prevalence, 1e-12);
  }
}

TEST(AblationTest, EmptyListIsZeroAndUnknownGroupThrows) {
  const GeneratedData g = generate(tiny_gen());
  const ModelConfig c = tiny_model();
  const ModelParams p = ModelParams::init(c, 3);
  for (double d : ablate_feature_delta(p, c, g.eval, feature_means(g.train), {}))
    EXPECT_EQ(d, 0.0);
  try {
    ablate_feature_delta(p, c, g.eval, feature_means(g.train), {"hist9"});
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("hist9"), std::string::npos);
  }
}

TEST(FeatureGroupsTest, OffsetsFollowGroupWidths) {
  const auto gs = feature_groups(tiny_model());
  ASSERT_EQ(gs.size(), 4u);
  EXPECT_EQ(gs[1].name, "hist1");
  EXPECT_EQ(gs[1].offset, 3);
  EXPECT_EQ(gs[3].name, "nonhist1");
  EXPECT_TRUE(gs[0].historical);
  EXPECT_FALSE(gs[2].historical);
}

TEST(EvaluateTest, ReportCoversEveryTask) {
  const GeneratedData g = generate(tiny_gen());
  const ModelConfig c = tiny_model();
  const MetricsReport m =
      evaluate(g.eval, ModelParams::init(c, 1), c, EvalConfig{{1.0, 1.0}});
  ASSERT_EQ(m.tasks.size(), 2u);
  EXPECT_EQ(m.score_gaps.size(), 4u);
  EXPECT_EQ(m.pca.spectrum.size(), static_cast<std::size_t>(c.augmented_dim()));
  for (const auto& t : m.tasks) {
    EXPECT_GE(t.hits_all, 0.0);
    EXPECT_LE(t.hits_all, 1.0);
  }
  EXPECT_THROW(evaluate(g.eval, ModelParams::init(c, 1), c, EvalConfig{}),
               ConfigError);
}
