#include <gtest/gtest.h>

#include <cmath>

#include "nextpoi/evalkit.hpp"
#include "oracles.hpp"

using namespace nextpoi;

namespace {

std::vector<InstanceRank> ranks(std::initializer_list<std::optional<std::size_t>> rs) {
  std::vector<InstanceRank> out;
  UserId u = 0;
  for (auto r : rs) out.push_back({u++, 1, r});
  return out;
}

}  // namespace

TEST(Metrics, Perfect) {
  const auto m = evaluate_ranks(ranks({1, 1, 1}));
  for (const auto& [name, v] : m.metrics) EXPECT_EQ(v, 1.0) << name;
}

TEST(Metrics, RankThree) {
  const auto m = evaluate_ranks(ranks({3}));
  EXPECT_DOUBLE_EQ(m.at("NDCG@10"), 0.5);
  EXPECT_DOUBLE_EQ(m.at("NDCG@5"), 0.5);
  EXPECT_EQ(m.at("HR@5"), 1.0);
  EXPECT_DOUBLE_EQ(m.at("MRR"), 1.0 / 3.0);
}

TEST(Metrics, CutoffStraddle) {
  const auto m = evaluate_ranks(ranks({7}));
  EXPECT_EQ(m.at("HR@5"), 0.0);
  EXPECT_EQ(m.at("HR@10"), 1.0);
  const auto miss = evaluate_ranks(ranks({std::nullopt, 11}));
  EXPECT_EQ(miss.at("HR@10"), 0.0);
  EXPECT_EQ(miss.at("MRR"), 0.0);
  EXPECT_THROW(evaluate_ranks({}), DomainError);
  EXPECT_THROW(m.at("HR@3"), ConfigError);
}

TEST(Metrics, MatchBruteForceOracle) {
  fixture::Rng rng(1000);
  std::vector<PredictionResult> results;
  std::vector<std::vector<PoiId>> ranked;
  std::vector<PoiId> labels;
  for (UserId u = 0; u < 1000; ++u) {
    PredictionResult r;
    r.user = u;
    r.label = static_cast<PoiId>(rng.below(40));
    const std::size_t len = rng.below(16);
    for (std::size_t i = 0; i < len; ++i) {
      const auto id = static_cast<PoiId>(rng.below(40));
      if (std::find(r.ranked.begin(), r.ranked.end(), id) == r.ranked.end()) r.ranked.push_back(id);
    }
    ranked.push_back(r.ranked);
    labels.push_back(r.label);
    results.push_back(std::move(r));
  }
  const std::vector<std::size_t> ks = {1, 5, 10, 20};
  const auto m = evaluate(results, ks, 10);
  const auto expected = oracle::brute_force_metrics(ranked, labels, ks, 10);
  ASSERT_EQ(m.metrics.size(), expected.size());
  for (const auto& [name, v] : m.metrics) EXPECT_NEAR(v, expected.at(name), 1e-12) << name;
  // Ordering invariants.
  EXPECT_LE(m.at("HR@5"), m.at("HR@10"));
  EXPECT_LE(m.at("MRR"), m.at("HR@20"));
  for (std::size_t k : ks) EXPECT_LE(m.at("NDCG@" + std::to_string(k)), m.at("HR@" + std::to_string(k)));
}

TEST(Compare, Improvements) {
  EXPECT_DOUBLE_EQ(*relative_improvement(50.0, 55.0), 10.0);
  EXPECT_EQ(std::round(*relative_improvement(53.24, 59.01) * 100.0) / 100.0, 10.84);
  EXPECT_FALSE(relative_improvement(0.0, 1.0).has_value());
}

TEST(Compare, IdenticalReportsZeroDelta) {
  const auto a = evaluate_ranks(ranks({1, 4, std::nullopt}));
  for (const auto& d : compare_runs(a, a)) {
    ASSERT_TRUE(d.relative_pct.has_value() || d.a == 0.0);
    if (d.relative_pct) EXPECT_EQ(*d.relative_pct, 0.0);
  }
  const auto b = evaluate_ranks(ranks({1, 4}));
  EXPECT_THROW(compare_runs(a, b), DataError);
  const auto deltas = compare_runs(a, a);
  EXPECT_NE(render_comparison(deltas).find("+0.00%"), std::string::npos);
}
