#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include "fixture_gen.hpp"
#include "nextpoi/nextpoi.h"

namespace {

std::string take(char* s) {
  std::string out = s == nullptr ? std::string() : std::string(s);
  nextpoi_string_free(s);
  return out;
}

std::filesystem::path scratch() {
  auto p = std::filesystem::temp_directory_path() / "nextpoi_capi";
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST(CApi, StatusNamesAndVersion) {
  EXPECT_STREQ(nextpoi_version(), "0.1.0");
  EXPECT_STREQ(nextpoi_status_name(NEXTPOI_OK), "ok");
  EXPECT_STREQ(nextpoi_status_name(NEXTPOI_ERR_DOMAIN), "domain error");
}

TEST(CApi, ConfigLifecycle) {
  nextpoi_config* cfg = nullptr;
  ASSERT_EQ(nextpoi_config_create(nullptr, &cfg), NEXTPOI_OK);
  char* h1 = nullptr;
  ASSERT_EQ(nextpoi_config_hash(cfg, &h1), NEXTPOI_OK);
  const auto hash1 = take(h1);
  EXPECT_EQ(hash1.size(), 16u);
  ASSERT_EQ(nextpoi_config_patch(cfg, R"({"seed": 5, "backend": {"kind": "mock"}})"), NEXTPOI_OK);
  char* h2 = nullptr;
  ASSERT_EQ(nextpoi_config_hash(cfg, &h2), NEXTPOI_OK);
  EXPECT_NE(take(h2), hash1);
  char* js = nullptr;
  ASSERT_EQ(nextpoi_config_to_json(cfg, &js), NEXTPOI_OK);
  EXPECT_NE(take(js).find("\"seed\": 5"), std::string::npos);

  EXPECT_EQ(nextpoi_config_patch(cfg, R"({"no_such_key": 1})"), NEXTPOI_ERR_CONFIG);
  EXPECT_NE(std::string(nextpoi_last_error()).find("no_such_key"), std::string::npos);
  nextpoi_config_free(cfg);

  nextpoi_config* bad = nullptr;
  EXPECT_EQ(nextpoi_config_create("{not json", &bad), NEXTPOI_ERR_CONFIG);
  EXPECT_EQ(bad, nullptr);
  EXPECT_EQ(nextpoi_config_load("/nonexistent/config.json", &bad), NEXTPOI_ERR_IO);
  EXPECT_EQ(nextpoi_config_create(nullptr, nullptr), NEXTPOI_ERR_CONFIG);
}

TEST(CApi, LowerBound) {
  double lb = 0.0;
  ASSERT_EQ(nextpoi_lower_bound(0.3187, 0.7921, 0.1317, &lb), NEXTPOI_OK);
  EXPECT_NEAR(lb, 0.2831, 5e-4);
  EXPECT_EQ(nextpoi_lower_bound(0.3, 0.1, 0.2, &lb), NEXTPOI_ERR_DOMAIN);
  EXPECT_EQ(nextpoi_lower_bound(0.3, 1.1, 0.2, &lb), NEXTPOI_ERR_DOMAIN);
}

TEST(CApi, EndToEndOnFixture) {
  const auto dir = scratch();
  {
    std::ofstream(dir / "raw.tsv") << nextpoi::fixture::generate_tsv({.users = 12, .pois = 60});
  }
  nextpoi_config* cfg = nullptr;
  const std::string patch = R"({"raw_path": ")" + (dir / "raw.tsv").string() + R"(", "dataset_path": ")" +
                            (dir / "ds.jsonl").string() + R"(", "min_poi_checkins": 3})";
  ASSERT_EQ(nextpoi_config_create(patch.c_str(), &cfg), NEXTPOI_OK) << nextpoi_last_error();
  char* summary = nullptr;
  ASSERT_EQ(nextpoi_ingest(cfg, (dir / "ds.jsonl").c_str(), &summary), NEXTPOI_OK) << nextpoi_last_error();
  take(summary);
  ASSERT_EQ(nextpoi_run(cfg, (dir / "run").c_str(), &summary), NEXTPOI_OK) << nextpoi_last_error();
  EXPECT_NE(take(summary).find("config_hash"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "run" / "results.jsonl"));

  char* h = nullptr;
  ASSERT_EQ(nextpoi_config_hash(cfg, &h), NEXTPOI_OK);
  const auto hash = take(h);
  const auto results = (dir / "run" / "results.jsonl").string();
  EXPECT_EQ(nextpoi_evaluate(results.c_str(), hash.c_str(), 0, nullptr, nullptr), NEXTPOI_OK);
  EXPECT_EQ(nextpoi_evaluate(results.c_str(), "0000000000000000", 0, nullptr, nullptr), NEXTPOI_ERR_CONFIG);
  EXPECT_EQ(nextpoi_evaluate(results.c_str(), "0000000000000000", 1, nullptr, nullptr), NEXTPOI_OK);

  const size_t values[] = {1, 5};
  ASSERT_EQ(nextpoi_sweep_k(cfg, "kc", values, 2, (dir / "sweep.csv").c_str(), nullptr), NEXTPOI_OK)
      << nextpoi_last_error();
  EXPECT_EQ(nextpoi_sweep_k(cfg, "zz", values, 2, (dir / "sweep2.csv").c_str(), nullptr), NEXTPOI_ERR_CONFIG);
  nextpoi_config_free(cfg);
}
