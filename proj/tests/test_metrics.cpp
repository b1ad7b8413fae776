// Copyright 2026 The PGF Authors. All Rights Reserved.
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


#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "oracles.hpp"
#include "pgf/metrics.hpp"
#include "pgf/rng.hpp"

namespace {

using namespace pgf;

Box7 at(double x, double y, std::int32_t cls = 1, double score = 1.0) {
  Box7 b;
  b.cx = x;
  b.cy = y;
  b.class_id = cls;
  b.score = score;
  return b;
}

TEST(MatchAndAp, EqualsExhaustiveOracleOnRandomCases) {
  std::size_t nontrivial = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const oracle::SmallCase c = oracle::small_case(seed);
    for (int cls : {1, 2})
      for (double thr : kDistanceThresholds) {
        const double got = match_and_ap(c.dets, c.gts, cls, thr).ap;
        const double want = oracle::average_precision(c.dets, c.gts, cls, thr);
        EXPECT_NEAR(got, want, 1e-12) << "seed " << seed << " class " << cls << " thr " << thr;
        if (want > 0.0 && want < 1.0) ++nontrivial;
      }
  }
  EXPECT_GT(nontrivial, 100u);
}

TEST(MatchAndAp, HandComputedCurve) {
  // A false positive ranked above the only true positive: p = r / 2 on [0, 1].
  const std::vector<Box7> gts{at(0, 0)};
  const std::vector<Box7> dets{at(9, 9, 1, 0.9), at(0.1, 0, 1, 0.8)};
  const ApResult r = match_and_ap(dets, gts, 1, 1.0);
  EXPECT_NEAR(r.ap, 0.2, 1e-12);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_EQ(r.fn, 0u);
}

TEST(MatchAndAp, PerfectPredictionsGiveOne) {
  const std::vector<Box7> gts{at(0, 0), at(5, 5), at(-3, 8)};
  EXPECT_EQ(match_and_ap(gts, gts, 1, 0.5).ap, 1.0);
}

TEST(MatchAndAp, ThreeMetreOffsetIsMissAtTwoAndHitAtFour) {
  const std::vector<Box7> gts{at(0, 0)};
  const std::vector<Box7> dets{at(3, 0)};
  const ApResult two = match_and_ap(dets, gts, 1, 2.0);
  EXPECT_EQ(two.tp, 0u);
  EXPECT_EQ(two.fp, 1u);
  EXPECT_EQ(two.ap, 0.0);
  const ApResult four = match_and_ap(dets, gts, 1, 4.0);
  EXPECT_EQ(four.tp, 1u);
  EXPECT_NEAR(four.ap, 1.0, 1e-12);
}

TEST(MatchAndAp, ThresholdIsStrict) {
  const std::vector<Box7> gts{at(0, 0)};
  const std::vector<Box7> dets{at(2, 0)};
  EXPECT_EQ(match_and_ap(dets, gts, 1, 2.0).tp, 0u);
  EXPECT_EQ(match_and_ap(dets, gts, 1, 4.0).tp, 1u);
}

TEST(MatchAndAp, DuplicatesLowerAp) {
  const std::vector<Box7> gts{at(0, 0)};
  const std::vector<Box7> dets{at(0, 0, 1, 0.9), at(0.1, 0, 1, 0.8)};
  const ApResult r = match_and_ap(dets, gts, 1, 1.0);
  EXPECT_EQ(r.tp, 1u);
  EXPECT_EQ(r.fp, 1u);
  EXPECT_LT(r.ap, 1.0);
}

TEST(MatchAndAp, OtherClassesAreIgnored) {
  const std::vector<Box7> gts{at(0, 0, 1), at(5, 0, 2)};
  const std::vector<Box7> dets{at(0, 0, 1), at(0, 0, 2), at(5, 0, 1)};
  EXPECT_EQ(match_and_ap(dets, gts, 1, 1.0).tp, 1u);
  EXPECT_EQ(match_and_ap(dets, gts, 1, 1.0).fp, 1u);
  EXPECT_EQ(match_and_ap(dets, gts, 2, 1.0).tp, 0u);
}

TEST(MatchAndAp, NoGroundTruthIsFlagged) {
  const std::vector<Box7> dets{at(0, 0)};
  const ApResult r = match_and_ap(dets, std::vector<Box7>{}, 1, 1.0);
  EXPECT_TRUE(r.no_ground_truth);
  EXPECT_EQ(r.ap, 0.0);
  EXPECT_FALSE(match_and_ap(std::vector<Box7>{}, dets, 1, 1.0).no_ground_truth);
}

TEST(MatchAndAp, TiedScoresDoNotDependOnInputOrder) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    oracle::SmallCase c = oracle::small_case(seed);
    const double ref = match_and_ap(c.dets, c.gts, 1, 2.0).ap;
    Rng rng(seed);
    std::shuffle(c.dets.begin(), c.dets.end(), rng);
    EXPECT_EQ(match_and_ap(c.dets, c.gts, 1, 2.0).ap, ref);
  }
}

TEST(Evaluate, PerfectPredictionsGiveMapOne) {
  std::vector<std::vector<Box7>> gts{{at(0, 0, 1), at(4, 4, 2)}, {at(-5, 2, 3)}, {}};
  const EvalResult r = evaluate(gts, gts, 3);
  EXPECT_EQ(r.map, 1.0);
  for (std::uint8_t f : r.no_ground_truth) EXPECT_EQ(f, 0);
}

TEST(Evaluate, ClassWithoutGroundTruthCountsAsZero) {
  std::vector<std::vector<Box7>> gts{{at(0, 0, 1)}};
  const EvalResult r = evaluate(gts, gts, 2);
  EXPECT_EQ(r.no_ground_truth[1], 1);
  EXPECT_NEAR(r.class_map[0], 1.0, 1e-12);
  EXPECT_EQ(r.class_map[1], 0.0);
  EXPECT_NEAR(r.map, 0.5, 1e-12);
}

TEST(Evaluate, DetectionsOnlyMatchWithinTheirScene) {
  std::vector<std::vector<Box7>> gts{{at(0, 0)}, {}};
  std::vector<std::vector<Box7>> dets{{}, {at(0, 0)}};
  const EvalResult r = evaluate(dets, gts, 1);
  EXPECT_EQ(r.map, 0.0);
  EXPECT_EQ(r.counts[3].fp, 1u);
  EXPECT_EQ(r.counts[3].fn, 1u);
}

TEST(Evaluate, SceneOrderInvariance) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    std::vector<std::vector<Box7>> dets, gts;
    for (std::uint64_t s = 0; s < 6; ++s) {
      const oracle::SmallCase c = oracle::small_case(seed * 100 + s);
      dets.push_back(c.dets);
      gts.push_back(c.gts);
    }
    const double ref = evaluate(dets, gts, 2).map;
    std::vector<std::size_t> perm{5, 2, 0, 4, 1, 3};
    std::vector<std::vector<Box7>> d2, g2;
    for (std::size_t i : perm) {
      d2.push_back(dets[i]);
      g2.push_back(gts[i]);
    }
    EXPECT_EQ(evaluate(d2, g2, 2).map, ref) << "seed " << seed;
  }
}

TEST(Evaluate, RejectsMismatchedInputs) {
  std::vector<std::vector<Box7>> one(1), two(2);
  EXPECT_THROW(evaluate(one, two, 1), std::invalid_argument);
  EXPECT_THROW(evaluate(one, one, 0), std::invalid_argument);
}

}  // namespace
