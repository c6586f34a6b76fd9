#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <set>

#include "fixture_gen.hpp"
#include "nextpoi/dataset.hpp"

using namespace nextpoi;

namespace {

std::string tsv_row(const std::string& user, const std::string& poi, const std::string& cat, double lat, double lon,
                    const std::string& time, int tz = 0) {
  return user + "\t" + poi + "\tcat0\t" + cat + "\t" + std::to_string(lat) + "\t" + std::to_string(lon) + "\t" +
         std::to_string(tz) + "\t" + time + "\n";
}

CheckInLog synthetic_log(const std::vector<std::pair<UserId, PoiId>>& visits) {
  CheckInLog log;
  std::set<PoiId> pois;
  std::int64_t t = 1000;
  for (std::size_t i = 0; i < visits.size(); ++i) {
    log.checkins.push_back(CheckIn{visits[i].first, visits[i].second, t++, 0, static_cast<std::int64_t>(i)});
    pois.insert(visits[i].second);
  }
  std::stable_sort(log.checkins.begin(), log.checkins.end(), [](const CheckIn& a, const CheckIn& b) {
    return a.user != b.user ? a.user < b.user : a.utc_seconds < b.utc_seconds;
  });
  for (auto p : pois) log.pois.push_back(PoiRecord{p, 40.0, -74.0, "Park"});
  return log;
}

// Independent fixed-point filter: repeatedly drop whole users or POIs below threshold.
std::set<std::pair<UserId, std::int64_t>> reference_filter(const CheckInLog& log, std::size_t mu, std::size_t mp) {
  std::set<UserId> dead_users;
  std::set<PoiId> dead_pois;
  for (bool changed = true; changed;) {
    changed = false;
    std::map<UserId, std::size_t> uc;
    std::map<PoiId, std::size_t> pc;
    for (const auto& c : log.checkins) {
      if (dead_users.count(c.user) || dead_pois.count(c.poi)) continue;
      ++uc[c.user];
      ++pc[c.poi];
    }
    for (auto [u, n] : uc)
      if (n < mu && dead_users.insert(u).second) changed = true;
    for (auto [p, n] : pc)
      if (n < mp && dead_pois.insert(p).second) changed = true;
  }
  std::set<std::pair<UserId, std::int64_t>> kept;
  for (const auto& c : log.checkins)
    if (!dead_users.count(c.user) && !dead_pois.count(c.poi)) kept.insert({c.user, c.row});
  return kept;
}

}  // namespace

TEST(Timestamp, Formats) {
  EXPECT_EQ(parse_timestamp("Tue Apr 03 18:00:09 +0000 2012"), 1333476009);
  EXPECT_EQ(parse_timestamp("2012-04-03T18:00:09Z"), 1333476009);
  EXPECT_EQ(parse_timestamp("2012-04-03T20:00:09+02:00"), 1333476009);
  EXPECT_EQ(parse_timestamp("1333476009"), 1333476009);
  EXPECT_FALSE(parse_timestamp("yesterday").has_value());
  EXPECT_FALSE(parse_timestamp("").has_value());
}

TEST(Ingest, ThreeRowsOneUser) {
  std::string tsv;
  tsv += tsv_row("7", "a1", "Park", 40.7, -74.0, "Tue Apr 03 18:00:09 +0000 2012");
  tsv += tsv_row("7", "b2", "Bar", 40.71, -74.01, "Tue Apr 03 19:00:09 +0000 2012");
  tsv += tsv_row("7", "c3", "Gym", 40.72, -74.02, "Tue Apr 03 20:00:09 +0000 2012");
  const auto log = ingest_checkins_from_string(tsv, {});
  EXPECT_EQ(log.checkins.size(), 3u);
  EXPECT_EQ(log.pois.size(), 3u);
  EXPECT_EQ(log.report.users, 1u);
  EXPECT_TRUE(log.report.poi_ids_remapped);
  EXPECT_FALSE(log.report.user_ids_remapped);
  // Remapped ids follow first appearance.
  EXPECT_EQ(log.checkins[0].poi, 1);
  EXPECT_EQ(log.checkins[2].poi, 3);
}

TEST(Ingest, OutOfBoundsRowRejected) {
  std::string tsv;
  for (int i = 0; i < 200; ++i)
    tsv += tsv_row("1", std::to_string(i % 5 + 1), "Park", 40.7, -74.0, std::to_string(1333476009 + i));
  tsv += tsv_row("1", "9", "Park", 91.0, -74.0, "1333476009");
  const auto log = ingest_checkins_from_string(tsv, {});
  EXPECT_EQ(log.report.rejected, 1u);
  EXPECT_EQ(log.report.malformed, 0u);
  EXPECT_EQ(log.checkins.size(), 200u);
}

TEST(Ingest, TooManyBadRowsIsDataError) {
  std::string tsv = tsv_row("1", "1", "Park", 40.7, -74.0, "1333476009");
  tsv += "garbage line\n";
  EXPECT_THROW(ingest_checkins_from_string(tsv, {}), DataError);
}

TEST(Ingest, GenericCsvWithColumnMap) {
  IngestOptions o;
  o.format = InputFormat::kCsvGeneric;
  o.columns = parse_column_map(R"({"delimiter": ";", "columns": {"user_id": "uid", "lat": 2, "lon": 3,
                                   "poi_id": "venue", "category": "kind", "timestamp": "when"}})");
  const std::string csv = "uid;venue;la;lo;kind;when\n5;10;35.6;139.7;Ramen;2012-04-03T18:00:09Z\n";
  const auto log = ingest_checkins_from_string(csv, o);
  ASSERT_EQ(log.checkins.size(), 1u);
  EXPECT_EQ(log.checkins[0].user, 5);
  EXPECT_EQ(log.checkins[0].poi, 10);
  EXPECT_EQ(log.pois[0].category, "Ramen");
  EXPECT_DOUBLE_EQ(log.pois[0].lat, 35.6);
}

TEST(Ingest, BadColumnMapIsConfigError) {
  EXPECT_THROW(parse_column_map("{not json"), ConfigError);
  EXPECT_THROW(parse_input_format("parquet"), ConfigError);
}

TEST(Preprocess, IdentityThresholds) {
  const auto log = synthetic_log({{1, 1}, {1, 2}, {2, 3}, {3, 1}});
  const auto ds = preprocess(log, 1, 1);
  EXPECT_EQ(ds.checkins.size(), 4u);
  EXPECT_EQ(ds.pois.size(), 3u);
  EXPECT_EQ(ds.filter.removed_checkins, 0u);
}

TEST(Preprocess, SparseUserRemoved) {
  const auto log = synthetic_log({{1, 1}, {1, 1}, {1, 1}, {2, 1}, {2, 1}});
  const auto ds = preprocess(log, 3, 1);
  EXPECT_EQ(ds.users(), std::vector<UserId>{1});
  EXPECT_EQ(ds.checkins.size(), 3u);
}

TEST(Preprocess, MatchesReferenceFixedPoint) {
  // 10 users with a sparse tail of rarely visited POIs; removing those drops some
  // users below threshold, which in turn starves more POIs.
  std::vector<std::pair<UserId, PoiId>> visits;
  fixture::Rng rng(99);
  for (UserId u = 1; u <= 10; ++u) {
    const std::size_t n = 6 + rng.below(14);
    for (std::size_t i = 0; i < n; ++i) {
      const bool tail = rng.uniform() < 0.3;
      visits.push_back({u, tail ? static_cast<PoiId>(10 + rng.below(30)) : static_cast<PoiId>(1 + rng.below(6))});
    }
  }
  const auto log = synthetic_log(visits);
  for (auto [mu, mp] : {std::pair<std::size_t, std::size_t>{10, 10}, {5, 3}, {12, 2}}) {
    const auto expected = reference_filter(log, mu, mp);
    if (expected.empty()) {
      EXPECT_THROW(preprocess(log, mu, mp), DataError);
      continue;
    }
    const auto ds = preprocess(log, mu, mp);
    std::set<std::pair<UserId, std::int64_t>> got;
    for (const auto& c : ds.checkins) got.insert({c.user, c.row});
    EXPECT_EQ(got, expected) << mu << "," << mp;
    for (const auto& c : ds.checkins) EXPECT_NE(ds.find_poi(c.poi), nullptr);
  }
}

TEST(Preprocess, SinglePassStopsAfterOneRound) {
  const auto log = synthetic_log({{1, 1}, {1, 2}, {2, 1}, {2, 1}, {3, 2}});
  const auto ds = preprocess(log, 2, 2, FilterMode::kSinglePass);
  EXPECT_EQ(ds.filter.iterations, 1u);
}

TEST(Split, FortyCheckins) {
  std::vector<std::pair<UserId, PoiId>> v;
  for (int i = 0; i < 40; ++i) v.push_back({1, 1 + i % 3});
  const auto ds = preprocess(synthetic_log(v), 1, 1);
  const auto split = split_trajectories(ds, 30);
  ASSERT_EQ(split.pairs.size(), 1u);
  EXPECT_EQ(split.pairs[0].historical.size(), 9u);
  EXPECT_EQ(split.pairs[0].current.size(), 30u);
  EXPECT_EQ(split.pairs[0].target.row, ds.checkins.back().row);
}

TEST(Split, BoundaryLength) {
  std::vector<std::pair<UserId, PoiId>> v;
  for (int i = 0; i < 32; ++i) v.push_back({1, 1});
  for (int i = 0; i < 31; ++i) v.push_back({2, 1});
  const auto split = split_trajectories(preprocess(synthetic_log(v), 1, 1), 30);
  ASSERT_EQ(split.pairs.size(), 1u);
  EXPECT_EQ(split.pairs[0].historical.size(), 1u);
  EXPECT_EQ(split.pairs[0].current.size(), 30u);
  EXPECT_EQ(split.excluded, std::vector<UserId>{2});
}

TEST(Split, MatchesReferenceSplitter) {
  std::vector<std::pair<UserId, PoiId>> v;
  const std::size_t lengths[] = {3, 12, 7, 25, 9};
  for (UserId u = 1; u <= 5; ++u)
    for (std::size_t i = 0; i < lengths[u - 1]; ++i) v.push_back({u, static_cast<PoiId>(1 + i % 4)});
  const auto ds = preprocess(synthetic_log(v), 1, 1);
  const std::size_t L = 5;
  const auto split = split_trajectories(ds, L);
  std::size_t pi = 0;
  for (UserId u = 1; u <= 5; ++u) {
    std::vector<CheckIn> seq;
    for (const auto& c : ds.checkins)
      if (c.user == u) seq.push_back(c);
    if (seq.size() < L + 2) continue;
    ASSERT_LT(pi, split.pairs.size());
    const auto& p = split.pairs[pi++];
    EXPECT_EQ(p.user, u);
    EXPECT_EQ(p.target.row, seq.back().row);
    ASSERT_EQ(p.current.size(), L);
    ASSERT_EQ(p.historical.size(), seq.size() - L - 1);
    for (std::size_t i = 0; i < p.historical.size(); ++i) EXPECT_EQ(p.historical[i].row, seq[i].row);
    for (std::size_t i = 0; i < L; ++i) EXPECT_EQ(p.current[i].row, seq[p.historical.size() + i].row);
  }
  EXPECT_EQ(pi, split.pairs.size());
}

TEST(Serialize, RoundTrip) {
  const auto log = ingest_checkins_from_string(fixture::generate_tsv({.users = 8, .pois = 30}), {});
  const auto ds = preprocess(log, 5, 2);
  const auto back = deserialize_dataset(serialize_dataset(ds));
  EXPECT_EQ(back.pois, ds.pois);
  ASSERT_EQ(back.checkins.size(), ds.checkins.size());
  for (std::size_t i = 0; i < ds.checkins.size(); ++i) {
    EXPECT_EQ(back.checkins[i].user, ds.checkins[i].user);
    EXPECT_EQ(back.checkins[i].poi, ds.checkins[i].poi);
    EXPECT_EQ(back.checkins[i].utc_seconds, ds.checkins[i].utc_seconds);
    EXPECT_EQ(back.checkins[i].tz_offset_minutes, ds.checkins[i].tz_offset_minutes);
  }
  EXPECT_EQ(back.config_hash(), ds.config_hash());
  EXPECT_THROW(deserialize_dataset("{\"kind\":\"other\"}\n"), DataError);
}
