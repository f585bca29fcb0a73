#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "alphagen/evaluator.hpp"
#include "oracles.hpp"

using namespace alphagen;
using namespace alphagen::oracle;

namespace {

void expect_matches_reference(const std::string& text, const PanelData& p) {
  const auto gap = compare_with_reference(text, p);
  EXPECT_EQ(gap.presence_mismatches, 0u) << gap.where;
  EXPECT_LE(gap.max_error, 1e-10) << gap.where;
  const bool single_day_corr = text.rfind("Corr(", 0) == 0 && text.ends_with(",1)");
  if (!single_day_corr) {
    EXPECT_GT(gap.present, 0u) << text;
  }
}

}  // namespace

TEST(Evaluate, WindowMeanExample) {
  PanelData p;
  p.dates = {"a", "b", "c"};
  p.symbols = {"x"};
  for (auto& g : p.features) g = Grid(3, 1, 1.0);
  auto& close = p.feature(Feature::Close);
  close(0, 0) = 1;
  close(1, 0) = 2;
  close(2, 0) = 3;
  const auto m = evaluate(parse_infix("Mean($close,2)", Grammar::lenient()), p).values;
  EXPECT_TRUE(is_missing(m(0, 0)));
  EXPECT_EQ(m(1, 0), 1.5);
  EXPECT_EQ(m(2, 0), 2.5);
}

TEST(Evaluate, DeltaOfConstantIsZero) {
  auto p = random_panel(60, 4, 1, 0.0);
  p.feature(Feature::High) = Grid(60, 4, 3.25);
  const auto m = evaluate(parse_infix("Delta($high,20)"), p).values;
  for (std::size_t d = 0; d < 60; ++d) {
    for (std::size_t s = 0; s < 4; ++s) {
      if (d < 20) EXPECT_TRUE(is_missing(m(d, s)));
      else EXPECT_EQ(m(d, s), 0.0);
    }
  }
}

TEST(Evaluate, DivisionByZeroIsMissing) {
  const auto p = random_panel(10, 3, 2, 0.0);
  const auto m = evaluate(parse_infix("Div($close,Mul(0,$volume))", Grammar::lenient()), p);
  EXPECT_EQ(m.valid_day_count, 0u);
}

TEST(Evaluate, EveryOperatorMatchesNaiveReference) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 6; ++trial) {
    const std::size_t stocks = 2 + rng() % 9;
    const std::size_t days = 60 + rng() % 61;
    const auto p = random_panel(days, stocks, 100 + trial);
    for (int t : {1, 2, 3, 10, 17}) {
      for (const auto& text : operator_cases(t)) expect_matches_reference(text, p);
    }
  }
}

TEST(Evaluate, NestedExpressionsMatchReference) {
  const auto p = random_panel(120, 10, 9);
  for (const char* text : {"Corr(Mean($close,5),Delta($volume,3),10)", "Div(Mean($close,10),$close)",
                           "EMA(Std(Ref($vwap,2),4),6)", "Greater(WMA($low,7),Med($high,4))",
                           "Log(Abs(Cov(Sub($open,$close),$volume,9)))"}) {
    expect_matches_reference(text, p);
  }
}

TEST(Evaluate, NoLookahead) {
  const auto p = random_panel(120, 6, 11);
  for (const auto& text : operator_cases(10)) {
    const auto e = parse_infix(text, Grammar::lenient());
    const auto full = evaluate(e, p).values;
    for (std::size_t cut : {15u, 40u, 77u}) {
      const auto part = evaluate(e, p.truncated(cut)).values;
      EXPECT_EQ(part, full.slice({0, cut})) << text << " cut " << cut;
      const auto ranged = evaluate(e, p, {cut / 2, cut}).values;
      EXPECT_EQ(ranged.slice({cut / 2, cut}), full.slice({cut / 2, cut})) << text;
      EXPECT_EQ(ranged.slice({0, cut / 2 - 1}), Grid(cut / 2, 6)) << text;
    }
  }
}

TEST(Evaluate, StockPermutationCommutes) {
  const auto p = random_panel(80, 7, 13);
  const std::vector<std::size_t> perm{3, 0, 6, 1, 5, 2, 4};
  PanelData q = p;
  for (std::size_t f = 0; f < kFeatureCount; ++f) {
    for (std::size_t d = 0; d < p.days(); ++d)
      for (std::size_t s = 0; s < 7; ++s) q.features[f](d, s) = p.features[f](d, perm[s]);
  }
  for (const auto& text : operator_cases(5)) {
    const auto e = parse_infix(text, Grammar::lenient());
    const auto a = evaluate(e, p).values, b = evaluate(e, q).values;
    for (std::size_t d = 0; d < p.days(); ++d) {
      for (std::size_t s = 0; s < 7; ++s) {
        const double x = a(d, perm[s]), y = b(d, s);
        ASSERT_TRUE((is_missing(x) && is_missing(y)) || x == y) << text;
      }
    }
  }
}

TEST(Validity, Examples) {
  const auto p = random_panel(500, 5, 17, 0.0);
  EXPECT_FALSE(semantic_validity(evaluate(parse_infix("Log(Sub($close,$close))"), p), p.all_days()));
  const auto short_panel = p.truncated(299);
  EXPECT_TRUE(semantic_validity(evaluate(parse_infix("Ref($low,50)"), short_panel, {60, 299}), {60, 299}));
  // 49 warm-up days missing out of 500 leaves a valid fraction of 451/500.
  const auto warm = evaluate(parse_infix("Mean($close,50)"), p);
  EXPECT_EQ(warm.valid_day_count, 451u);
  EXPECT_TRUE(semantic_validity(warm, p.all_days(), 0.8));
  EXPECT_FALSE(semantic_validity(warm, p.all_days(), 0.95));
}

TEST(Validity, ConstantDayIsInvalid) {
  auto p = random_panel(40, 5, 19, 0.0);
  for (std::size_t s = 0; s < 5; ++s) p.feature(Feature::Open)(30, s) = 1.0;
  EXPECT_FALSE(semantic_validity(evaluate(parse_infix("Abs($open)"), p), p.all_days(), 0.5));
}

TEST(Cache, HitsReturnSameMatrix) {
  const auto p = random_panel(50, 4, 23);
  EvaluationCache cache(2);
  const auto a = parse_infix("Mean($close,10)"), b = parse_infix("Abs($open)"), c = parse_infix("Log($high)");
  auto first = cache.get_or_evaluate(a, p);
  EXPECT_EQ(cache.get_or_evaluate(a, p), first);
  EXPECT_EQ(cache.hits(), 1u);
  cache.get_or_evaluate(b, p);
  cache.get_or_evaluate(c, p);  // evicts a
  EXPECT_NE(cache.get_or_evaluate(a, p), first);
  EXPECT_EQ(cache.get_or_evaluate(a, p)->values, first->values);
}
