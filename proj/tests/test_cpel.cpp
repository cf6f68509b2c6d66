#include "hcrf/cpel.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "hcrf/synth.hpp"
#include "oracles.hpp"

namespace hcrf {
namespace {

PatchProbs random_patches(Rng& rng, std::size_t t, double floor = 1e-3) {
  PatchProbs out;
  for (std::size_t i = 0; i < t; ++i) {
    const double a = floor + (1.0 - 2 * floor) * rng.uniform();
    out.push_back({1.0 - a, a});
  }
  return out;
}

TEST(Cpel, TwoPatchExample) {
  const auto d = cpel_classify({{0.1, 0.9}, {0.2, 0.8}});
  EXPECT_NEAR(d.log_scores[kAbnormal], std::log(0.72), 1e-12);
  EXPECT_NEAR(d.log_scores[kNormal], std::log(0.02), 1e-12);
  EXPECT_EQ(d.predicted_class, kAbnormal);
  EXPECT_EQ(d.patch_count, 2u);
}

TEST(Cpel, SingleUniformPatchTiesToNormal) {
  const auto d = cpel_classify({{0.5, 0.5}});
  EXPECT_EQ(d.predicted_class, kNormal);
}

TEST(Cpel, SixtyFourIdenticalPatches) {
  const PatchProbs probs(64, std::vector<double>{0.4, 0.6});
  const auto d = cpel_classify(probs);
  EXPECT_EQ(d.predicted_class, kAbnormal);
  EXPECT_EQ(d.patch_count, 64u);
  EXPECT_NEAR(d.log_scores[kAbnormal], 64 * std::log(0.6), 1e-9);
}

TEST(Cpel, EmptySequenceIsAnError) {
  EXPECT_THROW(cpel_classify({}), DimensionError);
}

TEST(Cpel, RejectsMalformedPatches) {
  EXPECT_THROW(cpel_classify({{0.5, 0.5}, {1.0}}), DimensionError);
  EXPECT_THROW(cpel_classify({{0.7, 0.7}}), RangeError);
  EXPECT_THROW(cpel_classify({{1.5, -0.5}}), RangeError);
}

TEST(Cpel, ZeroProbabilityIsClamped) {
  const auto d = cpel_classify({{1.0, 0.0}}, 1e-12);
  EXPECT_NEAR(d.log_scores[kAbnormal], std::log(1e-12), 1e-9);
  EXPECT_EQ(d.predicted_class, kNormal);
}

TEST(Cpel, TileProbsReadsRowMajor) {
  ProbMap m(2, 2, 2, {0.1f, 0.9f, 0.2f, 0.8f, 0.3f, 0.7f, 0.4f, 0.6f});
  const auto t = tile_probs(m);
  ASSERT_EQ(t.size(), 4u);
  EXPECT_NEAR(t[2][0], 0.3, 1e-7);
}

TEST(CpelProperties, LogSumMatchesProduct) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    const auto probs = random_patches(rng, 1 + rng.below(20));
    const auto d = cpel_classify(probs);
    const auto prod = d.product_scores();
    for (std::size_t j = 0; j < 2; ++j) {
      const double expected = oracle::product_of(probs, j);
      EXPECT_NEAR(prod[j] / expected, 1.0, 1e-9);
    }
  }
}

TEST(CpelProperties, PermutationInvariant) {
  Rng rng(32);
  for (int trial = 0; trial < 50; ++trial) {
    auto probs = random_patches(rng, 2 + rng.below(30));
    const auto d = cpel_classify(probs);
    for (std::size_t i = probs.size(); i > 1; --i)
      std::swap(probs[i - 1], probs[rng.below(i)]);
    const auto e = cpel_classify(probs);
    EXPECT_EQ(d.predicted_class, e.predicted_class);
    for (std::size_t j = 0; j < 2; ++j)
      EXPECT_NEAR(d.log_scores[j], e.log_scores[j], 1e-9);
  }
}

TEST(CpelProperties, DuplicationKeepsDecision) {
  Rng rng(33);
  for (int trial = 0; trial < 50; ++trial) {
    const auto probs = random_patches(rng, 1 + rng.below(30));
    auto doubled = probs;
    doubled.insert(doubled.end(), probs.begin(), probs.end());
    const auto d = cpel_classify(probs);
    const auto e = cpel_classify(doubled);
    EXPECT_EQ(d.predicted_class, e.predicted_class);
    EXPECT_NEAR(e.log_scores[0], 2 * d.log_scores[0], 1e-9);
  }
}

}  // namespace
}  // namespace hcrf
