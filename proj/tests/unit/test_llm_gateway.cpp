#include <gtest/gtest.h>

#include <fstream>

#include "nextpoi/llm_gateway.hpp"
#include "nextpoi/run_config.hpp"
#include "test_helpers.hpp"

using namespace nextpoi;

namespace {

Dataset small_dataset() {
  Dataset ds;
  for (PoiId id : {2, 4, 5, 7, 9}) ds.pois.push_back({id, 40.7 + id * 0.01, -74.0, id % 2 ? "Gym" : "Bar"});
  return ds;
}

std::vector<CheckIn> visits(std::initializer_list<PoiId> pois) {
  std::vector<CheckIn> t;
  std::int64_t ts = 1333443600;
  for (auto p : pois) t.push_back(CheckIn{1, p, ts += 3600, 0, 0});
  return t;
}

const PoiPredicate kAny = [](PoiId) { return true; };

// Scripted transport: fails the first `failures` attempts with `status`.
class ScriptedTransport : public HttpTransport {
 public:
  ScriptedTransport(int failures, int status) : failures_(failures), status_(status) {}
  HttpResponse post(const HttpRequest&) override {
    ++calls;
    if (calls <= failures_) return HttpResponse{status_, "{}", status_ == 0 ? "down" : "", {}};
    return HttpResponse{200, "ok", "", {}};
  }
  int calls = 0;

 private:
  int failures_;
  int status_;
};

class ThrowingBackend : public ChatBackend {
 public:
  explicit ThrowingBackend(bool empty) : empty_(empty) {}
  std::string id() const override { return "throwing"; }
  std::string complete(const PromptRecord&, const DecodingParams&) override {
    if (empty_) return "   ";
    throw BackendError("boom");
  }

 private:
  bool empty_;
};

RetryPolicy fast_policy(int retries) {
  RetryPolicy p;
  p.max_retries = retries;
  p.base_backoff = std::chrono::milliseconds(1);
  p.max_backoff = std::chrono::milliseconds(4);
  return p;
}

}  // namespace

TEST(ParseRanked, DirectExtraction) {
  const std::vector<PoiId> none;
  EXPECT_EQ(parse_ranked_pois("Top: 734, 12, 9", kAny, 3, none).ids, (std::vector<PoiId>{734, 12, 9}));
}

TEST(ParseRanked, DedupeAndPad) {
  const std::vector<PoiId> fb = {9, 5, 7, 2};
  const auto r = parse_ranked_pois("5 then 5 then 7", kAny, 3, fb);
  EXPECT_EQ(r.ids, (std::vector<PoiId>{5, 7, 9}));
  EXPECT_EQ(r.from_model, 2u);
  EXPECT_EQ(r.from_fallback, 1u);
}

TEST(ParseRanked, FullFallback) {
  const std::vector<PoiId> fb = {4, 8, 1};
  const auto r = parse_ranked_pois("no idea", kAny, 2, fb);
  EXPECT_EQ(r.ids, (std::vector<PoiId>{4, 8}));
  EXPECT_EQ(r.from_fallback, 2u);
}

TEST(ParseRanked, MarkerUniverseAndDecimals) {
  const std::vector<PoiId> none;
  const auto in = [](PoiId id) { return id < 100; };
  // Only the text after the last marker counts; decimals and out-of-universe ids are skipped.
  EXPECT_EQ(parse_ranked_pois("I think 3 and 4.\nCANDIDATES: 40.71, 12, 500, 8", in, 5, none).ids,
            (std::vector<PoiId>{12, 8}));
  EXPECT_EQ(parse_ranked_pois("predictions: 1, 2\nPREDICTIONS: 6", kAny, 5, none).ids, (std::vector<PoiId>{6}));
  EXPECT_THROW(parse_ranked_pois("1", kAny, 0, none), ConfigError);
}

TEST(MockRules, ForecasterRanksByTrajectoryFrequency) {
  const auto ds = small_dataset();
  const auto traj = visits({4, 9, 4, 4});
  const std::vector<PoiId> cands = {9, 4, 7};
  ForecasterInputs in{1, "ctx", traj, cands, 3, nullptr};
  const auto p = build_forecaster_prompt(TemplateSet::builtin(), Role::kForecasterProfile, in, ds);
  EXPECT_EQ(mock_complete(p), "CANDIDATES: 4, 9, 7");
  EXPECT_EQ(mock_complete(p), mock_complete(p));
}

TEST(MockRules, ForecasterTruncatesToRequestedCount) {
  const auto ds = small_dataset();
  const auto traj = visits({7, 7, 5});
  const std::vector<PoiId> cands = {2, 5, 7, 9};
  ForecasterInputs in{1, "", traj, cands, 2, nullptr};
  const auto p = build_forecaster_prompt(TemplateSet::builtin(), Role::kForecasterPattern, in, ds);
  EXPECT_EQ(mock_complete(p), "CANDIDATES: 7, 5");
}

TEST(MockRules, PredictorTieByIdAscending) {
  const auto ds = small_dataset();
  const auto traj = visits({9});
  const std::vector<PoiId> merged = {5, 2};
  PredictorInputs in;
  in.user = 1;
  in.merged_candidates = merged;
  in.current = traj;
  in.k = 10;
  EXPECT_EQ(mock_complete(build_predictor_prompt(TemplateSet::builtin(), in, ds)), "PREDICTIONS: 2, 5");
  in.merged_candidates = {};
  // Without candidates the trajectory's POIs are ranked.
  EXPECT_EQ(mock_complete(build_predictor_prompt(TemplateSet::builtin(), in, ds)), "PREDICTIONS: 9");
}

TEST(MockRules, ProfilerEchoesTopCategories) {
  Dataset ds;
  ds.pois = {{1, 40.70, -74.00, "Gym / Fitness Center"}, {2, 40.71, -74.01, "Office"}};
  std::vector<CheckIn> t;
  for (int i = 0; i < 8; ++i) t.push_back(CheckIn{3, 1, 1333443600 + i * 86400, 0, i});
  t.push_back(CheckIn{3, 2, 1333443600 + 9 * 86400, 0, 9});
  const auto sums = run_tools(t, ds, {3, TrajectoryScope::kHistorical, 15});
  ProfilerInputs in{3, &sums, t, nullptr};
  const auto p = build_profiler_prompt(TemplateSet::builtin(), Role::kProfilerLong, in, ds);
  const auto text = mock_complete(p);
  EXPECT_NE(text.find("Gym / Fitness Center, Office"), std::string::npos) << text;
  EXPECT_NE(text.find("User 3"), std::string::npos);

  auto cur = run_tools(t, ds, {3, TrajectoryScope::kCurrent, 15});
  ProfilerInputs cin{3, &cur, t, nullptr};
  const auto pattern = mock_complete(build_profiler_prompt(TemplateSet::builtin(), Role::kProfilerShort, cin, ds));
  EXPECT_NE(pattern.find("peak hour 9"), std::string::npos) << pattern;

  const PoiRecord target = ds.pois[0];
  ProfilerInputs rin{3, &sums, t, &target};
  const auto reverse = mock_complete(build_profiler_prompt(TemplateSet::builtin(), Role::kProfilerLong, rin, ds));
  EXPECT_NE(reverse.find("Gym / Fitness Center routine near (40.70, -74.00)"), std::string::npos) << reverse;
}

TEST(Gateway, DeterministicAndValidated) {
  Gateway g(std::make_shared<MockBackend>());
  const auto ds = small_dataset();
  const auto traj = visits({4});
  const std::vector<PoiId> cands = {9, 4};
  const auto p = build_forecaster_prompt(TemplateSet::builtin(), Role::kForecasterProfile, {1, "", traj, cands, 2, nullptr}, ds);
  EXPECT_EQ(g.complete(p), g.complete(p));
  DecodingParams bad;
  bad.top_p = 0.0;
  EXPECT_THROW(g.complete(p, bad), ConfigError);
  EXPECT_EQ(g.stats().calls, 2u);
}

TEST(Gateway, ErrorsCountedAndAudited) {
  const auto dir = test_support::temp_dir("audit");
  const auto log = (dir / "audit.jsonl").string();
  {
    Gateway g(std::make_shared<ThrowingBackend>(false), log);
    PromptRecord p;
    p.user = "hello";
    EXPECT_THROW(g.complete(p), BackendError);
    EXPECT_EQ(g.stats().backend_errors, 1u);
    Gateway e(std::make_shared<ThrowingBackend>(true), log);
    EXPECT_THROW(e.complete(p), EmptyOutputError);
    EXPECT_EQ(e.stats().empty_outputs, 1u);
  }
  std::ifstream in(log);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_FALSE(j.at("ok").get<bool>());
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(Retry, BackoffSchedule) {
  RetryPolicy p;
  p.base_backoff = std::chrono::milliseconds(500);
  p.max_backoff = std::chrono::milliseconds(8000);
  EXPECT_EQ(backoff_delay(p, 0).count(), 500);
  EXPECT_EQ(backoff_delay(p, 1).count(), 1000);
  EXPECT_EQ(backoff_delay(p, 4).count(), 8000);
  EXPECT_EQ(backoff_delay(p, 10).count(), 8000);
}

TEST(Retry, RecoversWithinBudget) {
  for (int status : {0, 429, 503}) {
    auto t = std::make_shared<ScriptedTransport>(2, status);
    RetryingClient c(t, fast_policy(3));
    EXPECT_EQ(c.post({}).body, "ok");
    EXPECT_EQ(t->calls, 3);
    EXPECT_EQ(c.stats().retries.load(), 2u);
  }
}

TEST(Retry, BudgetExhausted) {
  auto t = std::make_shared<ScriptedTransport>(100, 503);
  RetryingClient c(t, fast_policy(2));
  EXPECT_THROW(c.post({}), BackendError);
  EXPECT_EQ(t->calls, 3);
  EXPECT_EQ(c.stats().terminal_failures.load(), 1u);
}

TEST(Retry, NonRetryableStopsImmediately) {
  auto t = std::make_shared<ScriptedTransport>(100, 400);
  RetryingClient c(t, fast_policy(5));
  EXPECT_THROW(c.post({}), BackendError);
  EXPECT_EQ(t->calls, 1);
}

TEST(Retry, UnreachableHost) {
  RetryingClient c(std::make_shared<HttplibTransport>(), fast_policy(2));
  HttpRequest req;
  req.url = "http://127.0.0.1:9/v1/chat/completions";
  req.body = "{}";
  req.timeout = std::chrono::milliseconds(500);
  EXPECT_THROW(c.post(req), BackendError);
  EXPECT_EQ(c.stats().attempts.load(), 3u);
}

TEST(FaultInjection, TerminalFailuresMatchClientView) {
  auto ok = [](const HttpRequest&) { return HttpResponse{200, "ok", "", {}}; };
  const int retries = 2;
  auto fault = std::make_shared<FaultInjectingTransport>(ok, 0.5, 42, retries + 1);
  RetryingClient c(fault, fast_policy(retries));
  std::uint64_t failed = 0;
  for (int i = 0; i < 300; ++i) {
    HttpRequest r;
    r.body = "request " + std::to_string(i % 150);  // each body sent twice
    try {
      c.post(r);
    } catch (const BackendError&) {
      ++failed;
    }
  }
  EXPECT_GT(fault->injected_failures(), 0u);
  EXPECT_GT(failed, 0u);
  EXPECT_EQ(fault->terminal_failures(), failed);
  EXPECT_EQ(c.stats().terminal_failures.load(), failed);
  EXPECT_LE(c.stats().max_attempts_seen.load(), static_cast<std::uint64_t>(retries + 1));
}

TEST(FaultInjection, DecisionsAreReproducible) {
  auto ok = [](const HttpRequest&) { return HttpResponse{200, "ok", "", {}}; };
  auto run = [&] {
    FaultInjectingTransport t(ok, 0.3, 7, 4);
    std::string pattern;
    for (int i = 0; i < 100; ++i) pattern += t.post({"", "body" + std::to_string(i % 10), {}, {}}).status == 200 ? '1' : '0';
    return pattern;
  };
  EXPECT_EQ(run(), run());
  EXPECT_THROW(FaultInjectingTransport(ok, 1.5, 0, 1), ConfigError);
}

TEST(StubBackend, MockServerMatchesDirectMock) {
  RunConfig cfg;
  cfg.backend.kind = "stub";
  cfg.backend.base_backoff_ms = 1;
  auto backend = make_backend(cfg);
  const auto ds = small_dataset();
  const auto traj = visits({4, 9, 4, 4});
  const std::vector<PoiId> cands = {9, 4, 7};
  const auto p = build_forecaster_prompt(TemplateSet::builtin(), Role::kForecasterProfile, {1, "ctx", traj, cands, 3, nullptr}, ds);
  EXPECT_EQ(backend->complete(p, {}), mock_complete(p));

  HttpRequest bad;
  bad.url = "http://stub/v1/chat/completions";
  bad.body = R"({"messages":[{"role":"system","content":"who am I"},{"role":"user","content":"x"}]})";
  EXPECT_EQ(mock_chat_server(bad, TemplateSet::builtin()).status, 400);
}

TEST(RemoteBackend, RequestBodyShape) {
  PromptRecord p;
  p.role = Role::kPredictor;
  p.system = "sys";
  p.user = "usr";
  DecodingParams d;
  d.temperature = 0.5;
  const auto j = nlohmann::json::parse(RemoteChatBackend::request_body("m1", p, d));
  EXPECT_EQ(j.at("model"), "m1");
  EXPECT_EQ(j.at("messages").size(), 2u);
  EXPECT_EQ(j.at("messages")[0].at("role"), "system");
  EXPECT_EQ(j.at("messages")[1].at("content"), "usr");
  EXPECT_DOUBLE_EQ(j.at("temperature").get<double>(), 0.5);
}
