#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "nenn/error.hpp"
#include "nenn/selection.hpp"

namespace nenn {
namespace {

Mask bits(std::initializer_list<int> v) {
  Mask m;
  for (int b : v) m.bits.push_back(static_cast<std::uint8_t>(b));
  return m;
}

// Independent oracle: full sort by (score desc, index asc), keep the first k.
Mask sort_oracle(const std::vector<double>& scores, std::size_t k) {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  Mask m{std::vector<std::uint8_t>(scores.size(), 0)};
  for (std::size_t i = 0; i < k; ++i) m.bits[idx[i]] = 1;
  return m;
}

// Scores drawn from a small integer set so ties are frequent.
std::vector<double> tied_scores(std::size_t n, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> v(-3, 3);
  std::vector<double> s(n);
  for (double& x : s) x = v(rng);
  return s;
}

TEST(TopK, Examples) {
  EXPECT_EQ(topk_mask(Tensor::vector({3, 1, 2}), 1), bits({1, 0, 0}));
  EXPECT_EQ(topk_mask(Tensor::vector({2, 2, 1}), 1), bits({1, 0, 0}));
  EXPECT_EQ(topk_mask(Tensor::vector({3, 1, 2}), 3), bits({1, 1, 1}));
  EXPECT_EQ(topk_mask(Tensor::vector({3, 1, 2}), 0), bits({0, 0, 0}));
  EXPECT_THROW(topk_mask(Tensor::vector({1, 2}), 3), ConfigError);
}

TEST(TopK, MagnitudeRanking) {
  EXPECT_EQ(topk_mask(Tensor::vector({1, -5, 2}), 1, RankBy::magnitude), bits({0, 1, 0}));
  EXPECT_EQ(topk_mask(Tensor::vector({1, -5, 2}), 1, RankBy::value), bits({0, 0, 1}));
}

TEST(NM, Examples) {
  EXPECT_EQ(nm_mask(Tensor::vector({5, 1, 4, 2, 0, 9, 3, 8}), 1, 4), bits({1, 0, 0, 0, 0, 1, 0, 0}));
  EXPECT_EQ(nm_mask(Tensor::vector({5, 1, 4, 2}), 4, 4), bits({1, 1, 1, 1}));
  EXPECT_THROW(nm_mask(Tensor::vector({1, 2}), 3, 2), ConfigError);
  EXPECT_THROW(nm_mask(Tensor::vector({1, 2}), 0, 2), ConfigError);
}

TEST(NM, SevenOfEightOverSixtyFour) {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> d;
  std::vector<double> s(64);
  for (double& x : s) x = d(rng);
  const auto m = nm_mask(s, 7, 8);
  EXPECT_EQ(m.popcount(), 56u);
  for (std::size_t g = 0; g < 8; ++g) {
    EXPECT_EQ(std::count(m.bits.begin() + g * 8, m.bits.begin() + g * 8 + 8, 1), 7);
  }
}

TEST(NM, TrailingGroupKeepsCeiling) {
  // 10 = 4 + 4 + 2; the trailing pair keeps ceil(3 * 2 / 4) = 2.
  const auto m = nm_mask(std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, 3, 4);
  EXPECT_EQ(m, bits({0, 1, 1, 1, 0, 1, 1, 1, 1, 1}));
  // Trailing single keeps ceil(1 * 1 / 4) = 1.
  EXPECT_EQ(nm_mask(std::vector<double>{1, 2, 3, 4, 0}, 1, 4).popcount(), 2u);
}

TEST(Mix, Identities) {
  const auto z = Tensor::vector({1, 2});
  const auto zt = Tensor::vector({10, 20});
  EXPECT_EQ(mix(z, zt, bits({1, 1})), z);
  EXPECT_EQ(mix(z, zt, bits({0, 0})), zt);
  EXPECT_EQ(mix(z, zt, bits({1, 0})), Tensor::vector({1, 20}));
  EXPECT_THROW(mix(z, Tensor::vector({1, 2, 3}), bits({1, 0})), ShapeError);
  EXPECT_THROW(mix(z, zt, bits({1})), ShapeError);
}

TEST(KeepCount, RoundsToNearest) {
  EXPECT_EQ(keep_count(0.9, 100), 10u);
  EXPECT_EQ(keep_count(0.0, 7), 7u);
  EXPECT_EQ(keep_count(1.0, 7), 0u);
  EXPECT_EQ(keep_count(0.5, 5), 3u);  // 2.5 rounds away from zero
  EXPECT_THROW(keep_count(1.5, 4), ConfigError);
}

TEST(InjectionConfig, Validation) {
  InjectionConfig c;
  c.mode = RatioMode{-0.1};
  EXPECT_THROW(c.validate(), ConfigError);
  c.mode = StructuredMode{0, 8};
  EXPECT_THROW(c.validate(), ConfigError);
  c.mode = StructuredMode{9, 8};
  EXPECT_THROW(c.validate(), ConfigError);
  c.mode = StructuredMode{1, 8};
  EXPECT_NO_THROW(c.validate());
  EXPECT_DOUBLE_EQ(c.nominal_ratio(), 0.875);
}

TEST(LayerMask, StructuredGroupsRunAlongChannels) {
  // 2 positions x 4 channels, keep 1 of every 2 channels.
  InjectionConfig c;
  c.mode = StructuredMode{1, 2};
  const std::vector<double> z{1, 2, 4, 3, 8, 7, 5, 6};
  EXPECT_EQ(layer_mask(z, 2, 4, c), bits({0, 1, 1, 0, 1, 0, 0, 1}));
  c.invert = true;
  EXPECT_EQ(layer_mask(z, 2, 4, c), bits({1, 0, 0, 1, 0, 1, 1, 0}));
}

TEST(LayerMask, RatioRanksAcrossAllPositions) {
  InjectionConfig c;
  c.mode = RatioMode{0.75};
  const std::vector<double> z{1, 9, 2, 3, 8, 0, 4, 5};
  EXPECT_EQ(layer_mask(z, 2, 4, c), bits({0, 1, 0, 0, 1, 0, 0, 0}));
}

TEST(LayerMask, InvertInjectsTopRankedAtSameFraction) {
  InjectionConfig c;
  c.mode = RatioMode{0.25};
  c.invert = true;
  const std::vector<double> z{1, 9, 2, 3, 8, 0, 4, 5};
  EXPECT_EQ(layer_mask(z, 1, 8, c), bits({1, 0, 1, 1, 0, 1, 1, 1}));
  // At r = 0.5 the inverted mask is the complement of the plain one.
  c.mode = RatioMode{0.5};
  auto plain = c;
  plain.invert = false;
  EXPECT_EQ(layer_mask(z, 1, 8, c), layer_mask(z, 1, 8, plain).complement());
}

TEST(SelectionProperty, RandomizedInvariants) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  std::uniform_real_distribution<double> ratio(0.0, 1.0);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = len(rng);
    const auto s = tied_scores(n, rng);

    // Top-K matches the sort oracle, ties included.
    const std::size_t k = std::uniform_int_distribution<std::size_t>(0, n)(rng);
    const auto m = topk_mask(s, k);
    ASSERT_EQ(m, sort_oracle(s, k)) << "trial " << trial;
    ASSERT_EQ(m.popcount(), k);

    // Strictly increasing transforms leave the selection unchanged.
    std::vector<double> t(n);
    for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.7 * s[i]) + 3.0;
    ASSERT_EQ(topk_mask(t, k), m);

    // N:M popcount per group, trailing group ceil(N g / M).
    const std::size_t group = std::uniform_int_distribution<std::size_t>(1, 9)(rng);
    const std::size_t keep = std::uniform_int_distribution<std::size_t>(1, group)(rng);
    const auto nm = nm_mask(s, keep, group);
    ASSERT_EQ(nm_mask(t, keep, group), nm);
    for (std::size_t start = 0; start < n; start += group) {
      const std::size_t g = std::min(group, n - start);
      const auto count = static_cast<std::size_t>(
          std::count(nm.bits.begin() + start, nm.bits.begin() + start + g, 1));
      ASSERT_EQ(count, (keep * g + group - 1) / group);
    }

    // Ratio-mode realized injection within 1/n of the configured ratio.
    InjectionConfig c;
    const double r = ratio(rng);
    c.mode = RatioMode{r};
    const auto lm = layer_mask(s, 1, n, c);
    const double realized = 1.0 - static_cast<double>(lm.popcount()) / n;
    ASSERT_LE(std::abs(realized - r), 1.0 / n + 1e-12);
    c.invert = true;
    ASSERT_EQ(layer_mask(s, 1, n, c).popcount(), lm.popcount());

    // Mixing only ever selects z or z~ position-wise.
    std::vector<double> z(n), zt(n), out(n);
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = s[i] + 0.5;
      zt[i] = -s[i] - 0.25;
    }
    mix_into(z, zt, lm, out);
    for (std::size_t i = 0; i < n; ++i) ASSERT_EQ(out[i], lm.bits[i] ? z[i] : zt[i]);
  }
}

}  // namespace
}  // namespace nenn
