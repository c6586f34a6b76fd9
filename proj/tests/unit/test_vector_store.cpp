#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "oracles.hpp"
#include "test_helpers.hpp"

using namespace nextpoi;

namespace {

std::vector<float> basis(std::size_t dim, std::size_t i) {
  std::vector<float> v(dim, 0.0f);
  v[i] = 1.0f;
  return v;
}

std::vector<CheckIn> trajectory_of(std::initializer_list<PoiId> pois) {
  std::vector<CheckIn> t;
  for (auto p : pois) t.push_back(CheckIn{1, p, 0, 0, 0});
  return t;
}

}  // namespace

TEST(PoiText, Template) {
  EXPECT_EQ(poi_to_text({5, 40.7, -74.0, "Park"}),
            "POI 5 is located at coordinates (40.700000, -74.000000), category: Park");
  EXPECT_EQ(poi_to_text({5, 40.7, -74.0, ""}),
            "POI 5 is located at coordinates (40.700000, -74.000000), category: unknown");
}

TEST(PoiText, Golden) {
  const std::vector<PoiRecord> pois = {
      {1, 40.71981, -74.002581, "Home (private)"}, {2, 40.6068, -74.04417, "Government Building"},
      {3, 35.705101, 139.61959, "Train Station"},  {4, 35.714542, 139.796651, "Ramen / Noodle House"},
      {5, 40.7, -74.0, "Park"},                    {6, -33.8688, 151.2093, ""},
      {7, 37.7749, -122.4194, "Gym / Fitness Center"}, {8, 0.0, 0.0, "Bar"},
      {9, 40.758896, -73.98513, "Coffee Shop"},    {10, 51.5074, -0.1278, "Office"}};
  std::string got;
  for (const auto& p : pois) got += poi_to_text(p) + "\n";
  std::ifstream in(std::string(NEXTPOI_TEST_DIR) + "/golden/poi_text.txt");
  std::stringstream ss;
  ss << in.rdbuf();
  EXPECT_EQ(got, ss.str());
}

TEST(HashEmbedder, UnitVectorsOfConfiguredDimension) {
  HashEmbedder e(48, 1);
  const std::vector<std::string> texts = {"a", "b", "POI 1 is located at coordinates (1.0, 2.0), category: Park"};
  const auto vs = e.embed_batch(texts);
  ASSERT_EQ(vs.size(), 3u);
  for (const auto& v : vs) {
    ASSERT_EQ(v.size(), 48u);
    double n = 0;
    for (float x : v) n += double{x} * x;
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
  EXPECT_EQ(e.embed("a"), HashEmbedder(48, 1).embed("a"));
  EXPECT_NE(e.embed("a"), HashEmbedder(48, 2).embed("a"));
}

TEST(HashEmbedder, SameCategoryCloser) {
  HashEmbedder e(128, 0);
  auto cos = [](const std::vector<float>& a, const std::vector<float>& b) {
    double d = 0;
    for (std::size_t i = 0; i < a.size(); ++i) d += double{a[i]} * b[i];
    return d;
  };
  const auto a = e.embed(poi_to_text({1, 40.70, -74.00, "Coffee Shop"}));
  const auto b = e.embed(poi_to_text({2, 40.90, -73.80, "Coffee Shop"}));
  const auto c = e.embed(poi_to_text({3, 40.90, -73.80, "Museum"}));
  EXPECT_GT(cos(a, b), cos(a, c));
}

TEST(BuildIndex, EmptyAndSmall) {
  HashEmbedder e(16, 0);
  const auto empty = VectorIndex::build({}, e);
  EXPECT_TRUE(empty.empty());
  const std::vector<float> q(16, 1.0f);
  EXPECT_THROW(empty.top_k(q, 1), DataError);

  const std::vector<PoiRecord> pois = {{3, 1, 1, "A"}, {1, 2, 2, "B"}, {2, 3, 3, "C"}};
  const auto idx = VectorIndex::build(pois, e);
  EXPECT_EQ(idx.size(), 3u);
  EXPECT_EQ(idx.dimension(), 16u);
  EXPECT_EQ(idx.manifest().count, 3u);
  for (std::size_t r = 0; r < 3; ++r) {
    double n = 0;
    for (float x : idx.row(r)) n += double{x} * x;
    EXPECT_NEAR(n, 1.0, 1e-5);
  }
  EXPECT_EQ(std::vector<PoiId>(idx.ids().begin(), idx.ids().end()), (std::vector<PoiId>{1, 2, 3}));
}

TEST(BuildIndex, ManifestCountsFor1000Pois) {
  std::vector<PoiRecord> pois;
  for (PoiId i = 1; i <= 1000; ++i) pois.push_back({i, 40 + i * 1e-4, -74 + i * 1e-4, "Cat"});
  HashEmbedder e(32, 0);
  const auto idx = VectorIndex::build(pois, e);
  EXPECT_EQ(idx.manifest().count, 1000u);
  EXPECT_EQ(idx.manifest().dimension, 32u);
  EXPECT_EQ(idx.manifest().embedder_id, e.id());
}

TEST(TopK, SelfSimilarity) {
  std::vector<PoiId> ids;
  std::vector<float> block;
  const std::size_t dim = 10;
  for (std::size_t i = 0; i < dim; ++i) {
    ids.push_back(static_cast<PoiId>(i));
    const auto b = basis(dim, i);
    block.insert(block.end(), b.begin(), b.end());
  }
  const auto idx = VectorIndex::from_vectors(ids, block, dim, "basis");
  const auto res = idx.top_k(basis(dim, 7), 3);
  EXPECT_EQ(res[0].id, 7);
  EXPECT_DOUBLE_EQ(res[0].similarity, 1.0);
}

TEST(TopK, OrthogonalQueryTiesById) {
  const std::size_t dim = 6;
  std::vector<PoiId> ids = {9, 4, 6};
  std::vector<float> block;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto b = basis(dim, i);
    block.insert(block.end(), b.begin(), b.end());
  }
  const auto idx = VectorIndex::from_vectors(ids, block, dim, "basis");
  const auto res = idx.top_k(basis(dim, 5), 3);
  ASSERT_EQ(res.size(), 3u);
  EXPECT_EQ(res[0], (Neighbor{4, 0.0}));
  EXPECT_EQ(res[1], (Neighbor{6, 0.0}));
  EXPECT_EQ(res[2], (Neighbor{9, 0.0}));
}

TEST(TopK, MatchesExhaustiveScan) {
  fixture::Rng rng(500);
  const auto idx = oracle::random_index(rng, 500, 64);
  for (int q = 0; q < 20; ++q) {
    std::vector<float> query(64);
    for (auto& x : query) x = static_cast<float>(rng.uniform() - 0.5);
    EXPECT_EQ(idx.top_k(query, 50), oracle::exhaustive_top_k(idx, query, 50));
  }
  // Duplicated rows make exact ties; querying with an indexed row exercises them.
  for (std::size_t r = 0; r < idx.size(); r += 37) {
    const auto row = idx.row(r);
    EXPECT_EQ(idx.top_k(row, 20), oracle::exhaustive_top_k(idx, row, 20));
  }
}

TEST(TopK, BadQueries) {
  fixture::Rng rng(1);
  const auto idx = oracle::random_index(rng, 10, 8);
  const std::vector<float> wrong(7, 1.0f);
  EXPECT_THROW(idx.top_k(wrong, 3), DataError);
  const std::vector<float> ok(8, 1.0f);
  EXPECT_THROW(idx.top_k(ok, 0), ConfigError);
  EXPECT_EQ(idx.top_k(ok, 100).size(), 10u);
}

TEST(IndexFile, SaveLoadRoundTrip) {
  fixture::Rng rng(2);
  const auto idx = oracle::random_index(rng, 64, 24);
  const auto dir = test_support::temp_dir("index");
  const auto path = (dir / "poi.idx").string();
  idx.save(path);
  EXPECT_TRUE(std::filesystem::exists(path + ".json"));
  const auto back = VectorIndex::load(path);
  ASSERT_EQ(back.size(), idx.size());
  EXPECT_EQ(back.manifest().embedder_id, "random");
  for (std::size_t r = 0; r < idx.size(); ++r) {
    EXPECT_EQ(back.ids()[r], idx.ids()[r]);
    const auto a = idx.row(r);
    const auto b = back.row(r);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  }
  {
    std::ofstream(dir / "junk.idx") << "not an index";
  }
  EXPECT_THROW(VectorIndex::load((dir / "junk.idx").string()), DataError);
  EXPECT_THROW(VectorIndex::load((dir / "missing.idx").string()), IoError);
}

TEST(InitialCandidates, SinglePoi) {
  const auto& f = test_support::fixture();
  const PoiId p = f.dataset.pois[3].id;
  const auto t = trajectory_of({p});
  std::vector<PoiId> expected;
  for (const auto& n : f.index.top_k(f.index.row(*f.index.row_of(p)), 5)) expected.push_back(n.id);
  const auto got = initial_candidates(f.index, t, 5, 0);
  EXPECT_EQ(got, expected);
}

TEST(InitialCandidates, UnionIdempotent) {
  const auto& f = test_support::fixture();
  const PoiId p = f.dataset.pois[10].id;
  EXPECT_EQ(initial_candidates(f.index, trajectory_of({p, p}), 8, 0), initial_candidates(f.index, trajectory_of({p}), 8, 0));
}

TEST(InitialCandidates, MatchesBruteForceUnion) {
  const auto& f = test_support::fixture();
  for (const auto& pair : f.split.pairs) {
    std::set<PoiId> expected;
    for (const auto& c : pair.current) {
      const auto row = f.index.row(*f.index.row_of(c.poi));
      for (const auto& n : oracle::exhaustive_top_k(f.index, row, 10)) expected.insert(n.id);
    }
    const auto got = initial_candidates(f.index, pair.current, 10, 0);
    EXPECT_EQ(std::set<PoiId>(got.begin(), got.end()), expected);
    EXPECT_EQ(std::set<PoiId>(got.begin(), got.end()).size(), got.size());
  }
}

TEST(InitialCandidates, CapAndNesting) {
  const auto& f = test_support::fixture();
  const auto& pair = f.split.pairs.front();
  EXPECT_LE(initial_candidates(f.index, pair.current, 32, 20).size(), 20u);
  std::set<PoiId> prev;
  for (std::size_t k : {1, 5, 10, 25, 50}) {
    const auto c = initial_candidates(f.index, pair.current, k, 0);
    std::set<PoiId> cur(c.begin(), c.end());
    EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
    prev = cur;
  }
  const auto unknown = trajectory_of({999999});
  EXPECT_THROW(initial_candidates(f.index, unknown, 5, 0), DataError);
}
