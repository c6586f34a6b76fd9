#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "nextpoi/common.hpp"

namespace nextpoi {

struct PoiRecord {
  PoiId id = 0;
  double lat = 0.0;
  double lon = 0.0;
  std::string category;

  friend bool operator==(const PoiRecord&, const PoiRecord&) = default;
};

struct CheckIn {
  UserId user = 0;
  PoiId poi = 0;
  std::int64_t utc_seconds = 0;
  std::int32_t tz_offset_minutes = 0;
  // Position in the source file; breaks timestamp ties.
  std::int64_t row = 0;

  std::int64_t local_seconds() const { return utc_seconds + std::int64_t{tz_offset_minutes} * 60; }
};

enum class InputFormat { kTsvFoursquare, kCsvGeneric };

InputFormat parse_input_format(std::string_view name);

// A column is addressed either by header name or by zero-based index.
using ColumnRef = std::variant<std::string, std::size_t>;

struct CsvColumnMap {
  char delimiter = ',';
  bool has_header = true;
  ColumnRef user_id = std::string("user_id");
  ColumnRef poi_id = std::string("poi_id");
  ColumnRef category = std::string("category");
  ColumnRef lat = std::string("lat");
  ColumnRef lon = std::string("lon");
  ColumnRef timestamp = std::string("timestamp");
  std::optional<ColumnRef> tz_offset_minutes;
  // When true, the timestamp column holds local time and the offset is removed to get UTC.
  bool timestamp_is_local = false;
};

/// Reads a column map from JSON text such as
/// {"delimiter": ";", "columns": {"user_id": "uid", "lat": 4}, "timestamp_is_local": true}.
CsvColumnMap parse_column_map(std::string_view json_text);

struct IngestOptions {
  InputFormat format = InputFormat::kTsvFoursquare;
  CsvColumnMap columns;
  // Abort when (malformed + rejected) / rows exceeds this fraction.
  double max_bad_fraction = 0.01;
};

struct IngestReport {
  std::size_t rows = 0;
  std::size_t accepted = 0;
  std::size_t malformed = 0;  // unparseable rows
  std::size_t rejected = 0;   // parsed but out of bounds
  bool user_ids_remapped = false;
  bool poi_ids_remapped = false;
  std::size_t users = 0;
  std::size_t pois = 0;
  std::vector<std::string> first_errors;
};

struct CheckInLog {
  std::vector<PoiRecord> pois;    // sorted by id
  std::vector<CheckIn> checkins;  // sorted by (user, utc, row)
  IngestReport report;
};

/// Parses "Tue Apr 03 18:00:09 +0000 2012", ISO-8601 ("2012-04-03T18:00:09Z",
/// optional numeric offset) or integer epoch seconds into UTC seconds.
std::optional<std::int64_t> parse_timestamp(std::string_view text);

CheckInLog ingest_checkins(const std::string& path, const IngestOptions& options);
CheckInLog ingest_checkins_from_string(std::string_view contents, const IngestOptions& options);

enum class FilterMode { kIterative, kSinglePass };

struct FilterSummary {
  std::size_t min_user_checkins = 1;
  std::size_t min_poi_checkins = 1;
  FilterMode mode = FilterMode::kIterative;
  std::size_t iterations = 0;
  std::size_t removed_checkins = 0;
};

struct Dataset {
  std::vector<PoiRecord> pois;    // sorted by id, only POIs that are visited
  std::vector<CheckIn> checkins;  // sorted by (user, utc, row)
  FilterSummary filter;

  const PoiRecord* find_poi(PoiId id) const;
  const PoiRecord& poi(PoiId id) const;
  std::vector<UserId> users() const;
  std::string config_hash() const;
};

Dataset preprocess(const CheckInLog& log, std::size_t min_user_checkins, std::size_t min_poi_checkins,
                   FilterMode mode = FilterMode::kIterative);

struct TrajectoryPair {
  UserId user = 0;
  std::vector<CheckIn> historical;
  std::vector<CheckIn> current;
  CheckIn target;
};

struct SplitResult {
  std::vector<TrajectoryPair> pairs;  // ordered by user id
  std::vector<UserId> excluded;       // users below the minimum length
};

/// One instance per user: target is the final check-in, current holds the
/// `window` check-ins before it, historical the rest. Users with fewer than
/// `min_length` check-ins (default window + 2) are excluded.
SplitResult split_trajectories(const Dataset& dataset, std::size_t window = 30,
                               std::optional<std::size_t> min_length = std::nullopt);

std::string serialize_dataset(const Dataset& dataset);
Dataset deserialize_dataset(std::string_view jsonl);
void save_dataset(const Dataset& dataset, const std::string& path);
Dataset load_dataset(const std::string& path);

}  // namespace nextpoi
