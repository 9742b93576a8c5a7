// Copyright 2026 The DAVI Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <algorithm>

#include <gtest/gtest.h>

#include "davi/evaluation.hpp"
#include "davi/synthetic.hpp"
#include "test_support.hpp"

namespace davi {
namespace {

bool has_flag(const MetricsReport& r, const std::string& f) {
  return std::find(r.degenerate_flags.begin(), r.degenerate_flags.end(), f) != r.degenerate_flags.end();
}

TEST(Confusion, IdenticalNonzeroMaps) {
  const auto m = testing::bits({{1, 0}, {1, 1}});
  const auto c = confusion(m, m);
  EXPECT_EQ(c.fp, 0u);
  EXPECT_EQ(c.fn, 0u);
  EXPECT_EQ(c.tp, 3u);
  EXPECT_EQ(c.tn, 1u);
}

TEST(Confusion, AllOnesAgainstAllZeros) {
  BinaryMap ones(4, 4, 1);
  const auto c = confusion(ones, BinaryMap(4, 4));
  EXPECT_EQ(c, (ConfusionCounts{0, 16, 0, 0}));
}

TEST(Confusion, MatchesPixelLoopOnRandomMaps) {
  Rng rng(3);
  for (int k = 0; k < 10; ++k) {
    const auto p = testing::random_bits(16, 16, 0.4, rng);
    const auto g = testing::random_bits(16, 16, 0.3, rng);
    std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t y = 0; y < 16; ++y) {
      for (std::size_t x = 0; x < 16; ++x) {
        const int a = p(y, x), b = g(y, x);
        if (a && b) ++tp;
        else if (a) ++fp;
        else if (b) ++fn;
        else ++tn;
      }
    }
    EXPECT_EQ(confusion(p, g), (ConfusionCounts{tp, fp, fn, tn}));
  }
}

TEST(Confusion, ShapeMismatchThrows) {
  EXPECT_THROW(confusion(BinaryMap(2, 2), BinaryMap(2, 3)), ShapeMismatch);
}

TEST(Metrics, ArithmeticFixture) {
  const ConfusionCounts c{2, 1, 1, 96};
  const auto r = metrics(c, MetricScope::kPositiveClass);
  EXPECT_DOUBLE_EQ(r.precision, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.recall, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.f1, 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(r.accuracy, 0.98);
  EXPECT_TRUE(r.degenerate_flags.empty());
}

TEST(Metrics, MacroAveragesBothClasses) {
  const ConfusionCounts c{2, 1, 1, 96};
  const auto r = metrics(c, MetricScope::kMacro);
  const double p0 = 96.0 / 97.0, r0 = 96.0 / 97.0;
  const double f0 = 2 * p0 * r0 / (p0 + r0);
  EXPECT_DOUBLE_EQ(r.precision, 0.5 * (2.0 / 3.0 + p0));
  EXPECT_DOUBLE_EQ(r.recall, 0.5 * (2.0 / 3.0 + r0));
  EXPECT_DOUBLE_EQ(r.f1, 0.5 * (2.0 / 3.0 + f0));
  EXPECT_DOUBLE_EQ(r.accuracy, 0.98);
}

TEST(Metrics, AllNegativeIsDegenerateButAccurate) {
  const auto r = metrics(ConfusionCounts{0, 0, 0, 50}, MetricScope::kPositiveClass);
  EXPECT_EQ(r.precision, 0.0);
  EXPECT_EQ(r.recall, 0.0);
  EXPECT_EQ(r.f1, 0.0);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_TRUE(has_flag(r, "precision"));
  EXPECT_TRUE(has_flag(r, "recall"));
  const auto m = metrics(ConfusionCounts{0, 0, 0, 50}, MetricScope::kMacro);
  EXPECT_TRUE(has_flag(m, "precision/class1"));
  EXPECT_FALSE(has_flag(m, "precision/class0"));
}

TEST(Metrics, PerfectPrediction) {
  for (auto scope : {MetricScope::kPositiveClass, MetricScope::kMacro}) {
    const auto r = metrics(ConfusionCounts{7, 0, 0, 9}, scope);
    EXPECT_EQ(r.precision, 1.0);
    EXPECT_EQ(r.recall, 1.0);
    EXPECT_EQ(r.f1, 1.0);
    EXPECT_EQ(r.accuracy, 1.0);
  }
}

TEST(Metrics, SelfAgreementWithAnyPositiveGivesF1One) {
  Rng rng(11);
  for (int k = 0; k < 10; ++k) {
    auto m = testing::random_bits(6, 6, 0.2, rng);
    m[0] = 1;
    EXPECT_EQ(metrics(confusion(m, m), MetricScope::kPositiveClass).f1, 1.0);
  }
}

TEST(Metrics, F1IsHarmonicMean) {
  Rng rng(12);
  for (int k = 0; k < 20; ++k) {
    const ConfusionCounts c{static_cast<std::uint64_t>(rng.uniform_int(1, 50)),
                            static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                            static_cast<std::uint64_t>(rng.uniform_int(0, 50)),
                            static_cast<std::uint64_t>(rng.uniform_int(0, 500))};
    const auto r = metrics(c, MetricScope::kPositiveClass);
    EXPECT_NEAR(r.f1, 2 * r.precision * r.recall / (r.precision + r.recall), 1e-12);
  }
}

TEST(Metrics, EmptyCountsThrow) {
  EXPECT_THROW(metrics(ConfusionCounts{}, MetricScope::kPositiveClass), ValidationError);
}

TEST(Metrics, ReportJsonKeys) {
  const auto j = metrics(ConfusionCounts{0, 0, 0, 4}, MetricScope::kMacro, MetricLevel::kPerPair).to_json();
  for (const char* k : {"precision", "recall", "f1", "accuracy", "scope", "level", "degenerate_flags"}) {
    EXPECT_TRUE(j.contains(k)) << k;
  }
  EXPECT_EQ(j["scope"], "macro");
  EXPECT_EQ(j["level"], "per-pair");
}

TEST(Summarize, PooledCountsAreSumOfPairsAndOrderFree) {
  Rng rng(4);
  std::vector<std::pair<std::string, ConfusionCounts>> per;
  ConfusionCounts sum;
  for (int k = 0; k < 7; ++k) {
    const auto c = confusion(testing::random_bits(8, 8, 0.3, rng), testing::random_bits(8, 8, 0.3, rng));
    per.emplace_back("p" + std::to_string(k), c);
    sum.tp += c.tp;
    sum.fp += c.fp;
    sum.fn += c.fn;
    sum.tn += c.tn;
  }
  const auto a = summarize(per);
  EXPECT_EQ(a.pooled_positive.counts, sum);
  std::reverse(per.begin(), per.end());
  EXPECT_EQ(summarize(per).pooled_positive.to_json(), a.pooled_positive.to_json());
  EXPECT_THROW(summarize({}), ValidationError);
}

// --- evaluate_run ---------------------------------------------------------------------------

class RunFixture : public ::testing::Test {
 protected:
  void SetUp() override {
    ds = generate_synthetic_dataset(SceneConfig::target_preset(3), 6, DatasetRole::kTarget, dir / "data");
    for (const auto& rec : ds.manifest.pairs) gts.push_back(load_ground_truth(rec));
  }
  void write_predictions(std::size_t count) {
    for (std::size_t i = 0; i < count; ++i) {
      write_binary_map(gts[i], dir / "pred" / (ds.manifest.pairs[i].id + ".png"));
    }
  }
  testing::TempDir dir;
  SyntheticDataset ds;
  std::vector<BinaryMap> gts;
};

TEST_F(RunFixture, PredictionsEqualToGroundTruthGivePooledF1One) {
  write_predictions(6);
  const auto rep = evaluate_run(dir / "pred", ds.manifest);
  EXPECT_EQ(rep.pooled_positive.f1, 1.0);
  EXPECT_EQ(rep.pairs.size(), 6u);
  EXPECT_TRUE(rep.missing_predictions.empty());
}

TEST_F(RunFixture, PooledCountsEqualSumOfPairCounts) {
  Rng rng(2);
  for (const auto& rec : ds.manifest.pairs) {
    write_binary_map(testing::random_bits(32, 32, 0.1, rng), dir / "pred" / (rec.id + ".png"));
  }
  const auto rep = evaluate_run(dir / "pred", ds.manifest);
  ConfusionCounts sum;
  for (const auto& p : rep.pairs) sum += p.positive.counts;
  EXPECT_EQ(rep.pooled_positive.counts, sum);
  EXPECT_EQ(rep.pooled_macro.counts, sum);
}

TEST_F(RunFixture, MissingPredictionsStrictAndLenient) {
  write_predictions(3);
  try {
    evaluate_run(dir / "pred", ds.manifest);
    FAIL() << "expected UpstreamMissing";
  } catch (const UpstreamMissing& e) {
    for (std::size_t i = 3; i < 6; ++i) {
      EXPECT_NE(std::string(e.what()).find(ds.manifest.pairs[i].id), std::string::npos) << e.what();
    }
  }
  const auto rep = evaluate_run(dir / "pred", ds.manifest, false);
  EXPECT_EQ(rep.pairs.size(), 3u);
  EXPECT_EQ(rep.missing_predictions.size(), 3u);
}

TEST_F(RunFixture, NoGroundTruthAnywhereIsAnError) {
  write_predictions(6);
  auto m = ds.manifest;
  for (auto& rec : m.pairs) rec.gt.reset();
  try {
    evaluate_run(dir / "pred", m);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("no ground truth"), std::string::npos);
  }
}

TEST_F(RunFixture, MissingPredictionDirectory) {
  EXPECT_THROW(evaluate_run(dir / "nowhere", ds.manifest), UpstreamMissing);
}

}  // namespace
}  // namespace davi
