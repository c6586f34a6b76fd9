#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "nextpoi/agents.hpp"
#include "test_helpers.hpp"

using namespace nextpoi;

namespace {

class FixedBackend : public ChatBackend {
 public:
  explicit FixedBackend(std::string text) : text_(std::move(text)) {}
  std::string id() const override { return "fixed"; }
  std::string complete(const PromptRecord&, const DecodingParams&) override { return text_; }

 private:
  std::string text_;
};

class DownBackend : public ChatBackend {
 public:
  std::string id() const override { return "down"; }
  std::string complete(const PromptRecord&, const DecodingParams&) override { throw BackendError("down"); }
};

Gateway mock_gateway() { return Gateway(std::make_shared<MockBackend>()); }

bool contains(const std::vector<PoiId>& v, PoiId x) { return std::find(v.begin(), v.end(), x) != v.end(); }

std::vector<PredictionResult> run_fixture(RunConfig cfg) {
  const auto& f = test_support::fixture();
  Gateway g(make_backend(cfg));
  return run_pipeline(f.dataset, f.split.pairs, f.index, g, cfg).results;
}

}  // namespace

TEST(Merge, InterleavesAndDeduplicates) {
  const std::vector<PoiId> h = {1, 2, 3, 4};
  const std::vector<PoiId> c = {2, 5, 1};
  EXPECT_EQ(merge_candidates(h, c), (std::vector<PoiId>{1, 2, 5, 3, 4}));
  EXPECT_EQ(merge_candidates({}, c), c);
  EXPECT_TRUE(merge_candidates({}, {}).empty());
}

TEST(Profile, GymDominatedHistory) {
  Dataset ds;
  ds.pois = {{1, 40.7, -74.0, "Gym / Fitness Center"}, {2, 40.8, -74.0, "Bar"}};
  std::vector<CheckIn> t;
  for (int i = 0; i < 10; ++i) t.push_back({5, i < 8 ? 1 : 2, 1333443600 + i * 3600, 0, i});
  const auto sums = run_tools(t, ds, {5, TrajectoryScope::kHistorical, 15});
  auto g = mock_gateway();
  const auto out = profile_user(g, TemplateSet::builtin(), ds, 5, sums, t);
  EXPECT_NE(out.text.find("Gym"), std::string::npos);
  EXPECT_FALSE(out.flags.fallback);
  EXPECT_EQ(profile_user(g, TemplateSet::builtin(), ds, 5, sums, t).text, out.text);
}

TEST(Profile, EmptyHistoryFallsBack) {
  auto g = mock_gateway();
  const Dataset ds;
  const auto sums = run_tools({}, ds, {5, TrajectoryScope::kHistorical, 15});
  const auto out = profile_user(g, TemplateSet::builtin(), ds, 5, sums, {});
  EXPECT_EQ(out.text, "insufficient history");
  EXPECT_TRUE(out.flags.fallback);
  EXPECT_EQ(g.stats().calls, 0u);
}

TEST(Pattern, PeakHourAndSingleCheckin) {
  Dataset ds;
  ds.pois = {{1, 40.7, -74.0, "Office"}};
  std::vector<CheckIn> t;
  for (int i = 0; i < 5; ++i) t.push_back({5, 1, 1333443600 + i * 86400, 0, i});
  auto g = mock_gateway();
  const auto sums = run_tools(t, ds, {5, TrajectoryScope::kCurrent, 15});
  EXPECT_NE(mobility_pattern(g, TemplateSet::builtin(), ds, 5, sums, t).text.find("peak hour 9"), std::string::npos);
  const std::vector<CheckIn> one = {t[0]};
  const auto s1 = run_tools(one, ds, {5, TrajectoryScope::kCurrent, 15});
  const auto out = mobility_pattern(g, TemplateSet::builtin(), ds, 5, s1, one);
  EXPECT_FALSE(out.flags.fallback);
  EXPECT_NE(out.text.find("Office"), std::string::npos);
}

TEST(Profile, BackendFailureFallsBackToSummaries) {
  Gateway g(std::make_shared<DownBackend>());
  const auto& f = test_support::fixture();
  const auto& pair = f.split.pairs.front();
  const auto sums = run_tools(pair.historical, f.dataset, {pair.user, TrajectoryScope::kHistorical, 15});
  const auto out = profile_user(g, TemplateSet::builtin(), f.dataset, pair.user, sums, pair.historical);
  EXPECT_TRUE(out.flags.backend_error);
  EXPECT_TRUE(out.flags.fallback);
  EXPECT_EQ(out.text, render_summaries(sums));
}

TEST(Refine, SizeAndMembership) {
  const auto& f = test_support::fixture();
  auto g = mock_gateway();
  const auto& pair = f.split.pairs[1];
  const auto initial = initial_candidates(f.index, pair.current, 32, 250);
  ASSERT_GT(initial.size(), 25u);
  const auto out = refine_candidates(g, TemplateSet::builtin(), f.dataset, Role::kForecasterProfile, pair.user, "ctx",
                                     pair.historical, initial, 25);
  EXPECT_EQ(out.ids.size(), 25u);
  for (auto id : out.ids) EXPECT_TRUE(contains(initial, id));
  EXPECT_EQ(std::set<PoiId>(out.ids.begin(), out.ids.end()).size(), 25u);

  // K >= |initial| yields a permutation of initial.
  const std::vector<PoiId> few(initial.begin(), initial.begin() + 7);
  auto perm = refine_candidates(g, TemplateSet::builtin(), f.dataset, Role::kForecasterPattern, pair.user, "ctx",
                                pair.current, few, 25)
                  .ids;
  auto sorted_few = few;
  std::sort(perm.begin(), perm.end());
  std::sort(sorted_few.begin(), sorted_few.end());
  EXPECT_EQ(perm, sorted_few);
}

TEST(Refine, MatchesMockRankingOracle) {
  Dataset ds;
  for (PoiId id = 1; id <= 6; ++id) ds.pois.push_back({id, 40.7, -74.0, "X"});
  const std::vector<PoiId> initial = {6, 5, 4, 3, 2, 1};
  std::vector<CheckIn> traj;
  const std::pair<PoiId, int> freq[] = {{2, 4}, {5, 2}, {6, 2}, {1, 1}};
  for (auto [p, n] : freq)
    for (int i = 0; i < n; ++i) traj.push_back({1, p, 1333443600 + static_cast<std::int64_t>(traj.size()) * 60, 0, 0});
  auto g = mock_gateway();
  const auto out =
      refine_candidates(g, TemplateSet::builtin(), ds, Role::kForecasterPattern, 1, "ctx", traj, initial, 4);
  EXPECT_EQ(out.ids, (std::vector<PoiId>{2, 5, 6, 1}));
  EXPECT_EQ(out.flags.model_ids, 4u);
}

TEST(Refine, EmptyInitialIsFlagged) {
  const auto& f = test_support::fixture();
  auto g = mock_gateway();
  const auto out = refine_candidates(g, TemplateSet::builtin(), f.dataset, Role::kForecasterPattern, 1, "", {}, {}, 25);
  EXPECT_TRUE(out.ids.empty());
  EXPECT_TRUE(out.flags.fallback);
}

TEST(Predict, MockRanksMergedFirst) {
  Dataset ds;
  for (PoiId id : {2, 5, 9}) ds.pois.push_back({id, 40.7, -74.0, "X"});
  const std::vector<CheckIn> current = {{1, 2, 1333443600, 0, 0}, {1, 2, 1333447200, 0, 1}, {1, 9, 1333450800, 0, 2}};
  CandidateBundle b;
  b.merged = {2, 5, 9};
  auto g = mock_gateway();
  const auto r = predict(g, TemplateSet::builtin(), ds, 1, {}, b, current, 3);
  EXPECT_EQ(r.ranked.front(), 2);
  EXPECT_TRUE(r.in_candidate);
}

TEST(Predict, OutOfCandidateAccepted) {
  Dataset ds;
  for (PoiId id : {2, 5, 9, 11}) ds.pois.push_back({id, 40.7, -74.0, "X"});
  CandidateBundle b;
  b.merged = {2, 5};
  Gateway g(std::make_shared<FixedBackend>("PREDICTIONS: 11, 2, 404"));
  const std::vector<CheckIn> current = {{1, 9, 1333443600, 0, 0}};
  const auto r = predict(g, TemplateSet::builtin(), ds, 1, {}, b, current, 3);
  EXPECT_EQ(r.ranked, (std::vector<PoiId>{11, 2, 5}));
  EXPECT_TRUE(r.out_of_candidate);
  EXPECT_FALSE(r.in_candidate);
}

TEST(Predict, BackendFailureUsesMergedPrefix) {
  Dataset ds;
  for (PoiId id : {2, 5, 9, 11}) ds.pois.push_back({id, 40.7, -74.0, "X"});
  CandidateBundle b;
  b.merged = {9, 2, 5};
  Gateway g(std::make_shared<DownBackend>());
  const std::vector<CheckIn> current = {{1, 11, 1333443600, 0, 0}};
  const auto r = predict(g, TemplateSet::builtin(), ds, 1, {}, b, current, 2);
  EXPECT_EQ(r.ranked, (std::vector<PoiId>{9, 2}));
  EXPECT_TRUE(stage(r.provenance, Role::kPredictor).backend_error);
  EXPECT_TRUE(stage(r.provenance, Role::kPredictor).fallback);
}

TEST(Pipeline, UnionTheoremOnFixture) {
  const auto results = run_fixture(RunConfig{});
  ASSERT_FALSE(results.empty());
  std::size_t hp = 0, hc = 0, hm = 0;
  for (const auto& r : results) {
    ASSERT_FALSE(r.failed()) << r.instance_error;
    const bool in_h = contains(r.candidates.profile_refined, r.label);
    const bool in_c = contains(r.candidates.pattern_refined, r.label);
    const bool in_m = contains(r.candidates.merged, r.label);
    EXPECT_EQ(in_m, in_h || in_c) << "user " << r.user;
    hp += in_h;
    hc += in_c;
    hm += in_m;
  }
  EXPECT_GE(hm, std::max(hp, hc));
}

TEST(Pipeline, DeterministicAcrossRunsAndThreads) {
  RunConfig cfg;
  cfg.seed = 11;
  const auto a = results_to_jsonl(run_fixture(cfg));
  const auto b = results_to_jsonl(run_fixture(cfg));
  cfg.threads = 4;
  const auto c = results_to_jsonl(run_fixture(cfg));
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Pipeline, ThreeUserSubset) {
  const auto& f = test_support::fixture();
  const std::vector<TrajectoryPair> three(f.split.pairs.begin(), f.split.pairs.begin() + 3);
  auto g = mock_gateway();
  const auto run = run_pipeline(f.dataset, three, f.index, g, RunConfig{});
  EXPECT_EQ(run.results.size(), 3u);
  EXPECT_EQ(run.manifest.at("instances"), 3);
  EXPECT_EQ(run.manifest.at("instance_failures"), 0);
}

TEST(Pipeline, NoForecasterUsesGlobalUniverse) {
  RunConfig cfg;
  cfg.no_forecaster = true;
  for (const auto& r : run_fixture(cfg)) {
    EXPECT_TRUE(r.candidates.initial.empty());
    EXPECT_TRUE(r.candidates.merged.empty());
    EXPECT_FALSE(r.in_candidate);
    EXPECT_FALSE(r.out_of_candidate);
    EXPECT_FALSE(stage(r.provenance, Role::kForecasterProfile).attempted);
    for (auto id : r.ranked) EXPECT_NE(test_support::fixture().dataset.find_poi(id), nullptr);
  }
}

TEST(Pipeline, AblationSwitches) {
  RunConfig cfg;
  cfg.no_profiler = true;
  for (const auto& r : run_fixture(cfg)) {
    EXPECT_FALSE(stage(r.provenance, Role::kProfilerLong).attempted);
    EXPECT_FALSE(r.candidates.merged.empty());
  }
  cfg = RunConfig{};
  cfg.no_refine = true;
  for (const auto& r : run_fixture(cfg)) {
    EXPECT_EQ(r.candidates.merged, r.candidates.initial);
    EXPECT_FALSE(stage(r.provenance, Role::kForecasterPattern).attempted);
  }
  cfg = RunConfig{};
  cfg.refine_k = 0;
  for (const auto& r : run_fixture(cfg)) EXPECT_TRUE(r.candidates.merged.empty());
}

TEST(Pipeline, BackendDownIsolatedPerInstance) {
  const auto& f = test_support::fixture();
  Gateway g(std::make_shared<DownBackend>());
  const auto run = run_pipeline(f.dataset, f.split.pairs, f.index, g, RunConfig{});
  EXPECT_EQ(run.results.size(), f.split.pairs.size());
  for (const auto& r : run.results) {
    EXPECT_FALSE(r.failed());
    EXPECT_EQ(r.ranked.size(), 10u);
    EXPECT_TRUE(stage(r.provenance, Role::kPredictor).backend_error);
  }
}

TEST(Serialization, JsonRoundTrip) {
  const auto results = run_fixture(RunConfig{});
  const auto text = results_to_jsonl(results);
  EXPECT_EQ(results_to_jsonl(results_from_jsonl(text)), text);
}
