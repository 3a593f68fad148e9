// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>

#include "mgru/context.hpp"
#include "test_util.hpp"

using namespace mgru;
using mgru::testing::random_tensor;

TEST(ParseContext, SettingsFromTheLayerTable) {
  EXPECT_EQ(parse_context_setting("{0; 1×3}"), (ContextSpec{0, 1, 1, 3}));
  EXPECT_EQ(parse_context_setting("{1×6; 2×3}"), (ContextSpec{1, 6, 2, 3}));
  EXPECT_EQ(parse_context_setting("{2×6; 1×1}"), (ContextSpec{2, 6, 1, 1}));
}

TEST(ParseContext, AsciiSpellingsAndSpacing) {
  const ContextSpec want{1, 6, 2, 3};
  EXPECT_EQ(parse_context_setting("{1x6;2x3}"), want);
  EXPECT_EQ(parse_context_setting("  { 1X6 ; 2*3 }  "), want);
  EXPECT_EQ(parse_context_setting("{0;0}"), ContextSpec{});
}

TEST(ParseContext, RoundTripsThroughToString) {
  for (const ContextSpec& s : {ContextSpec{0, 1, 1, 3}, ContextSpec{1, 6, 2, 3}, ContextSpec{}, ContextSpec{3, 2, 0, 1}}) {
    EXPECT_EQ(parse_context_setting(s.to_string()), s);
  }
  EXPECT_EQ(ContextSpec({0, 1, 1, 3}).to_string(), "{0; 1x3}");
}

TEST(ParseContext, MalformedTextNamesTheToken) {
  auto message = [](const char* text) {
    try {
      parse_context_setting(text);
    } catch (const ParseError& e) {
      return std::string(e.what());
    }
    return std::string("<no error>");
  };
  EXPECT_NE(message("{1x6; 2y3}").find("'y'"), std::string::npos) << message("{1x6; 2y3}");
  EXPECT_NE(message("{1x0; 0}").find("0"), std::string::npos);
  for (const char* bad : {"", "{", "{1x6}", "{1x6; 2x3", "1x6; 2x3}", "{0x2; 0}", "{1x6; 2x3} junk", "{-1x2; 0}",
                          "{1x; 0}", "{x2; 0}"}) {
    EXPECT_THROW(parse_context_setting(bad), ParseError) << bad;
  }
}

TEST(ParseContext, PlansAreListsStartingAtLayerTwo) {
  const LayerContextPlan a = parse_context_plan("{0;1x1} {0;1x3}, {0;1x3} {0;1x3}");
  ASSERT_EQ(a.layers.size(), 4u);
  EXPECT_EQ(a.for_layer(1), ContextSpec{});
  EXPECT_EQ(a.for_layer(2), (ContextSpec{0, 1, 1, 1}));
  EXPECT_EQ(a.for_layer(5), (ContextSpec{0, 1, 1, 3}));
  EXPECT_EQ(a.for_layer(6), ContextSpec{});
  EXPECT_TRUE(parse_context_plan("").empty());
  EXPECT_TRUE(parse_context_plan("{0;0} {0;0}").empty());
  EXPECT_EQ(parse_context_plan(a.to_string()), a);
  EXPECT_THROW(parse_context_plan("{0;1x1},"), ParseError);
}

TEST(SpliceIndices, WorkedExamples) {
  EXPECT_EQ(splice_indices(10, 100, {1, 6, 2, 3}), (std::vector<std::size_t>{4, 13, 16}));
  EXPECT_EQ(splice_indices(0, 100, {1, 6, 1, 3}), (std::vector<std::size_t>{0, 3}));
  EXPECT_EQ(splice_indices(98, 100, {0, 1, 2, 3}), (std::vector<std::size_t>{99, 99}));
  EXPECT_TRUE(splice_indices(5, 10, {}).empty());
}

TEST(SpliceIndices, FrameOutsideSequenceThrows) {
  EXPECT_THROW(splice_indices(10, 10, {0, 1, 1, 1}), std::out_of_range);
}

TEST(SpliceIndices, InteriorFramesAreIncreasingAndSkipCurrent) {
  for (std::size_t k1 = 0; k1 <= 3; ++k1) {
    for (std::size_t s1 = 1; s1 <= 4; ++s1) {
      for (std::size_t k2 = 0; k2 <= 3; ++k2) {
        for (std::size_t s2 = 1; s2 <= 4; ++s2) {
          const ContextSpec spec{k1, s1, k2, s2};
          const std::size_t T = 60, t = 20;
          auto idx = splice_indices(t, T, spec);
          ASSERT_EQ(idx.size(), k1 + k2);
          EXPECT_EQ(std::count(idx.begin(), idx.end(), t), 0);
          // History is listed nearest first, so reverse it to get time order.
          std::reverse(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k1));
          EXPECT_TRUE(std::is_sorted(idx.begin(), idx.end()));
          EXPECT_EQ(std::adjacent_find(idx.begin(), idx.end()), idx.end());
        }
      }
    }
  }
}

namespace {

/// Brute-force gather straight from the concatenation rule.
Tensor gather_oracle(const Tensor& below, const Tensor& x, const ContextSpec& s) {
  const long T = static_cast<long>(x.dim(0));
  const std::size_t B = x.dim(1), dx = x.dim(2), dh = below.dim(2);
  Tensor out({x.dim(0), B, dx + dh * (s.k1 + s.k2)});
  auto clamp = [&](long i) { return static_cast<std::size_t>(std::clamp(i, 0L, T - 1)); };
  for (long t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < B; ++b) {
      std::vector<Real> row;
      for (std::size_t d = 0; d < dx; ++d) row.push_back(x.at(t, b, d));
      for (std::size_t i = 1; i <= s.k1; ++i)
        for (std::size_t d = 0; d < dh; ++d) row.push_back(below.at(clamp(t - long(s.s1 * i)), b, d));
      for (std::size_t j = 1; j <= s.k2; ++j)
        for (std::size_t d = 0; d < dh; ++d) row.push_back(below.at(clamp(t + long(s.s2 * j)), b, d));
      for (std::size_t c = 0; c < row.size(); ++c) out.at(t, b, c) = row[c];
    }
  }
  return out;
}

}  // namespace

TEST(Splice, MatchesGatherOracleBitwise) {
  Rng rng(3);
  const Tensor below = random_tensor({12, 2, 3}, rng);
  const Tensor x = random_tensor({12, 2, 3}, rng);
  const ContextSpec spec{2, 2, 1, 4};
  EXPECT_EQ(splice(below, x, spec), gather_oracle(below, x, spec));
  for (std::size_t k1 = 0; k1 <= 2; ++k1)
    for (std::size_t k2 = 0; k2 <= 2; ++k2) {
      const ContextSpec s{k1, 3, k2, 2};
      EXPECT_EQ(splice(below, x, s), gather_oracle(below, x, s)) << s.to_string();
    }
}

TEST(Splice, EmptySettingReturnsInput) {
  Rng rng(4);
  const Tensor x = random_tensor({7, 3, 4}, rng);
  EXPECT_EQ(splice(x, x, {}), x);
}

TEST(Splice, SingleFutureFrame) {
  Rng rng(5);
  const Tensor x = random_tensor({5, 2, 2}, rng);
  const Tensor out = splice(x, x, {0, 1, 1, 1});
  for (std::size_t t = 0; t < 5; ++t)
    for (std::size_t b = 0; b < 2; ++b)
      for (std::size_t d = 0; d < 2; ++d) {
        EXPECT_EQ(out.at(t, b, d), x.at(t, b, d));
        EXPECT_EQ(out.at(t, b, 2 + d), x.at(std::min<std::size_t>(t + 1, 4), b, d));
      }
}

TEST(Splice, FutureOnlyPathsAgreeBitwise) {
  Rng rng(6);
  const Tensor below = random_tensor({15, 3, 4}, rng);
  for (std::size_t k = 0; k <= 3; ++k)
    for (std::size_t s = 1; s <= 6; ++s) {
      EXPECT_EQ(splice(below, below, {0, 1, k, s}), splice_future(below, below, k, s));
    }
}

TEST(Splice, WidthLaw) {
  Rng rng(7);
  const Tensor below = random_tensor({6, 2, 5}, rng);
  for (std::size_t k1 = 0; k1 <= 3; ++k1)
    for (std::size_t k2 = 0; k2 <= 3; ++k2) {
      const ContextSpec s{k1, 2, k2, 1};
      EXPECT_EQ(splice(below, below, s).dim(2), 5 * (1 + k1 + k2));
      EXPECT_EQ(spliced_width(5, 5, s), 5 * (1 + k1 + k2));
    }
}

TEST(Splice, BatchPermutationCommutes) {
  Rng rng(8);
  const Tensor x = random_tensor({9, 4, 3}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  auto permute = [&](const Tensor& t) {
    Tensor out(t.shape());
    for (std::size_t i = 0; i < t.dim(0); ++i)
      for (std::size_t b = 0; b < t.dim(1); ++b)
        for (std::size_t d = 0; d < t.dim(2); ++d) out.at(i, b, d) = t.at(i, perm[b], d);
    return out;
  };
  const ContextSpec spec{1, 2, 2, 3};
  EXPECT_EQ(splice(permute(x), permute(x), spec), permute(splice(x, x, spec)));
}

TEST(Splice, ShapeMismatchThrows) {
  EXPECT_THROW(splice(Tensor({5, 2, 3}), Tensor({4, 2, 3}), {0, 1, 1, 1}), DimensionError);
  EXPECT_THROW(splice(Tensor({5, 2, 3}), Tensor({5, 3, 3}), {0, 1, 1, 1}), DimensionError);
  EXPECT_THROW(splice(Tensor({5, 3}), Tensor({5, 3}), {}), DimensionError);
}

TEST(SpliceBackward, IsTheAdjointOfSplice) {
  // <splice(h, x), g> == <h, gh> + <x, gx> for the scattered gradients.
  Rng rng(9);
  const ContextSpec spec{2, 3, 2, 2};
  const Tensor h = random_tensor({10, 2, 3}, rng);
  const Tensor x = random_tensor({10, 2, 4}, rng);
  const Tensor g = random_tensor({10, 2, spliced_width(4, 3, spec)}, rng);
  Tensor gh = Tensor::zeros_like(h), gx = Tensor::zeros_like(x);
  splice_backward(g, spec, gh, gx);
  EXPECT_NEAR(sum(mul(splice(h, x, spec), g)), sum(mul(h, gh)) + sum(mul(x, gx)), 1e-10);
  Tensor wrong({10, 2, 5});
  EXPECT_THROW(splice_backward(wrong, spec, gh, gx), DimensionError);
}
