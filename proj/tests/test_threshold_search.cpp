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
#include <vector>

#include <gtest/gtest.h>

#include "davi/threshold_search.hpp"
#include "test_support.hpp"

namespace davi {
namespace {

std::vector<double> tenths() {
  std::vector<double> g;
  for (int k = 1; k <= 9; ++k) g.push_back(k / 10.0);
  return g;
}

// Plain-loop reimplementation: raw counts, argmax with strict improvement.
std::pair<double, double> brute_force(const std::vector<DiffMap>& d, const std::vector<BinaryMap>& m0,
                                      const std::vector<double>& grid) {
  double best_t = grid.front(), best_f1 = -1.0;
  for (double t : grid) {
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t k = 0; k < d.size(); ++k) {
      for (std::size_t i = 0; i < d[k].size(); ++i) {
        const bool pred = d[k][i] >= static_cast<float>(t);
        const bool ref = m0[k][i] != 0;
        tp += pred && ref;
        fp += pred && !ref;
        fn += !pred && ref;
      }
    }
    const double f1 = (2 * tp + fp + fn) == 0 ? 0.0 : 2.0 * tp / double(2 * tp + fp + fn);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_t = t;
    }
  }
  return {best_t, best_f1};
}

struct RandomSet {
  std::vector<DiffMap> diffs;
  std::vector<BinaryMap> refs;
};

// Reference maps correlated with the diffs so F1 varies across the grid.
RandomSet random_set(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  RandomSet s;
  for (std::size_t k = 0; k < n; ++k) {
    auto d = testing::random_unit<DiffMap>(6, 7, rng);
    BinaryMap r(6, 7);
    for (std::size_t i = 0; i < d.size(); ++i) r[i] = (d[i] + 0.4 * (rng.uniform() - 0.5)) > 0.55 ? 1 : 0;
    s.diffs.push_back(std::move(d));
    s.refs.push_back(std::move(r));
  }
  return s;
}

TEST(DefaultGrid, NineteenStepsOfFiveHundredths) {
  const auto g = default_tau_grid();
  ASSERT_EQ(g.size(), 19u);
  EXPECT_DOUBLE_EQ(g.front(), 0.05);
  EXPECT_DOUBLE_EQ(g.back(), 0.95);
  for (std::size_t i = 1; i < g.size(); ++i) EXPECT_NEAR(g[i] - g[i - 1], 0.05, 1e-12);
}

TEST(SearchTau, PerfectAgreementTiesResolveToSmallest) {
  const std::vector<DiffMap> d{testing::grid_of<DiffMap>({{0.0, 0.8}, {0.8, 0.0}})};
  const std::vector<BinaryMap> m0{testing::bits({{0, 1}, {1, 0}})};
  const auto grid = tenths();
  const auto r = search_tau(d, m0, grid);
  EXPECT_DOUBLE_EQ(r.tau_v, 0.1);
  EXPECT_DOUBLE_EQ(r.best_f1, 1.0);
  ASSERT_EQ(r.grid.size(), 9u);
  for (const auto& c : r.grid) EXPECT_DOUBLE_EQ(c.f1, c.threshold <= 0.8 + 1e-9 ? 1.0 : 0.0);
}

TEST(SearchTau, SingleCandidateIsReturned) {
  const auto s = random_set(3, 1);
  const std::vector<double> grid{0.37};
  const auto r = search_tau(s.diffs, s.refs, grid);
  EXPECT_DOUBLE_EQ(r.tau_v, 0.37);
  EXPECT_EQ(r.grid.size(), 1u);
}

TEST(SearchTau, AgreesWithBruteForceOnRandomSets) {
  for (std::uint64_t seed = 1; seed <= 25; ++seed) {
    const auto s = random_set(1 + seed % 5, seed);
    const auto grid = default_tau_grid();
    const auto r = search_tau(s.diffs, s.refs, grid);
    const auto [t, f1] = brute_force(s.diffs, s.refs, grid);
    EXPECT_DOUBLE_EQ(r.tau_v, t) << "seed " << seed;
    EXPECT_DOUBLE_EQ(r.best_f1, f1) << "seed " << seed;
  }
}

TEST(SearchTau, ReportedF1MatchesRecomputationAndMaximum) {
  const auto s = random_set(4, 77);
  const auto r = search_tau(s.diffs, s.refs);
  const std::vector<double> only{r.tau_v};
  EXPECT_DOUBLE_EQ(brute_force(s.diffs, s.refs, only).second, r.best_f1);
  double mx = 0.0;
  bool member = false;
  for (const auto& c : r.grid) {
    mx = std::max(mx, c.f1);
    member = member || c.threshold == r.tau_v;
  }
  EXPECT_DOUBLE_EQ(mx, r.best_f1);
  EXPECT_TRUE(member);
}

TEST(SearchTau, InvariantToPairOrder) {
  auto s = random_set(6, 5);
  const auto a = search_tau(s.diffs, s.refs);
  std::reverse(s.diffs.begin(), s.diffs.end());
  std::reverse(s.refs.begin(), s.refs.end());
  const auto b = search_tau(s.diffs, s.refs);
  EXPECT_EQ(a.tau_v, b.tau_v);
  EXPECT_EQ(a.best_f1, b.best_f1);
}

TEST(SearchTau, SupersetGridNeverLowersBestF1) {
  for (std::uint64_t seed = 30; seed < 40; ++seed) {
    const auto s = random_set(3, seed);
    const auto coarse = tenths();
    const auto fine = default_tau_grid();
    EXPECT_GE(search_tau(s.diffs, s.refs, fine).best_f1, search_tau(s.diffs, s.refs, coarse).best_f1);
  }
}

TEST(SearchTau, AllZeroReferenceIsDegenerate) {
  Rng rng(3);
  const std::vector<DiffMap> d{testing::random_unit<DiffMap>(3, 3, rng), testing::random_unit<DiffMap>(3, 3, rng)};
  const std::vector<BinaryMap> m0{BinaryMap(3, 3), BinaryMap(3, 3)};
  try {
    search_tau(d, m0);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("degenerate"), std::string::npos);
  }
}

TEST(SearchTau, InputErrors) {
  const auto s = random_set(2, 9);
  const std::vector<DiffMap> none;
  const std::vector<BinaryMap> no_refs;
  EXPECT_THROW(search_tau(none, no_refs), ValidationError);
  const std::vector<BinaryMap> one_ref{s.refs[0]};
  EXPECT_THROW(search_tau(s.diffs, one_ref), ValidationError);
  const std::vector<double> empty_grid;
  EXPECT_THROW(search_tau(s.diffs, s.refs, empty_grid), ValidationError);
  const std::vector<double> unsorted{0.5, 0.3};
  EXPECT_THROW(search_tau(s.diffs, s.refs, unsorted), ValidationError);
  const std::vector<double> repeated{0.3, 0.3};
  EXPECT_THROW(search_tau(s.diffs, s.refs, repeated), ValidationError);
  const std::vector<double> out_of_range{0.5, 1.2};
  EXPECT_THROW(search_tau(s.diffs, s.refs, out_of_range), ValidationError);
  const std::vector<BinaryMap> wrong_shape{BinaryMap(2, 2), BinaryMap(2, 2)};
  EXPECT_THROW(search_tau(s.diffs, wrong_shape), ShapeMismatch);
}

TEST(SearchTau, ReportJsonListsEveryCandidate) {
  const auto s = random_set(2, 4);
  const auto j = search_tau(s.diffs, s.refs).to_json();
  EXPECT_EQ(j["grid"].size(), 19u);
  EXPECT_TRUE(j.contains("tau_v"));
  EXPECT_TRUE(j["grid"][0].contains("candidate"));
  EXPECT_TRUE(j["grid"][0].contains("f1"));
}

}  // namespace
}  // namespace davi
