#include "nextpoi/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

namespace nextpoi {
namespace {

using nlohmann::json;

template <typename T>
std::optional<T> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  T value{};
  const auto* end = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(s.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r' || s.back() == '\n'))
    s.remove_suffix(1);
  return s;
}

std::int64_t to_epoch(int y, unsigned mo, unsigned d, int hh, int mm, int ss) {
  using namespace std::chrono;
  const year_month_day ymd{year{y}, month{mo}, day{d}};
  if (!ymd.ok()) return INT64_MIN;
  const auto days = sys_days{ymd}.time_since_epoch().count();
  return std::int64_t{days} * 86400 + hh * 3600 + mm * 60 + ss;
}

int month_index(std::string_view name) {
  static constexpr std::array<std::string_view, 12> kMonths = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                               "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
  for (std::size_t i = 0; i < kMonths.size(); ++i)
    if (kMonths[i] == name) return static_cast<int>(i) + 1;
  return 0;
}

std::optional<int> parse_clock(std::string_view t, int& hh, int& mm, int& ss) {
  // hh:mm[:ss[.fraction]]
  if (t.size() < 5 || t[2] != ':') return std::nullopt;
  auto h = parse_number<int>(t.substr(0, 2));
  auto m = parse_number<int>(t.substr(3, 2));
  int s = 0;
  if (t.size() >= 8) {
    if (t[5] != ':') return std::nullopt;
    auto sv = parse_number<int>(t.substr(6, 2));
    if (!sv) return std::nullopt;
    s = *sv;
  }
  if (!h || !m || *h > 23 || *m > 59 || s > 60) return std::nullopt;
  hh = *h;
  mm = *m;
  ss = s;
  return 0;
}

// "+0000", "-05:00", "+09" -> minutes east of UTC
std::optional<int> parse_offset(std::string_view z) {
  if (z == "Z" || z == "z") return 0;
  if (z.size() < 3 || (z[0] != '+' && z[0] != '-')) return std::nullopt;
  const int sign = z[0] == '-' ? -1 : 1;
  std::string digits;
  for (char c : z.substr(1))
    if (c != ':') digits.push_back(c);
  if (digits.size() != 2 && digits.size() != 4) return std::nullopt;
  auto h = parse_number<int>(std::string_view(digits).substr(0, 2));
  auto m = digits.size() == 4 ? parse_number<int>(std::string_view(digits).substr(2, 2)) : std::optional<int>(0);
  if (!h || !m) return std::nullopt;
  return sign * (*h * 60 + *m);
}

std::vector<std::string_view> split(std::string_view line, char delim) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(delim, start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

// RFC 4180-style split: quoted fields may contain the delimiter and doubled quotes.
std::vector<std::string> split_csv(std::string_view line, char delim) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == delim) {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

struct RawRow {
  std::string user;
  std::string poi;
  std::string category;
  double lat = 0;
  double lon = 0;
  std::int64_t utc = 0;
  std::int32_t tz = 0;
  std::int64_t row = 0;
};

bool in_bounds(double lat, double lon) { return lat >= -90.0 && lat <= 90.0 && lon >= -180.0 && lon <= 180.0; }

ColumnRef parse_column_ref(const json& j) {
  if (j.is_number_unsigned()) return ColumnRef(j.get<std::size_t>());
  if (j.is_string()) return ColumnRef(j.get<std::string>());
  throw ConfigError("column reference must be a header name or a non-negative index");
}

std::size_t resolve_column(const ColumnRef& ref, const std::vector<std::string>& header) {
  if (const auto* idx = std::get_if<std::size_t>(&ref)) return *idx;
  const auto& name = std::get<std::string>(ref);
  for (std::size_t i = 0; i < header.size(); ++i)
    if (trim(header[i]) == name) return i;
  throw ConfigError("column not found in header: " + name);
}

// Dense remap in order of first appearance when any id is non-numeric.
std::vector<std::int64_t> assign_ids(const std::vector<RawRow>& rows, std::string RawRow::*field, bool& remapped) {
  std::vector<std::int64_t> ids(rows.size());
  remapped = false;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto v = parse_number<std::int64_t>(rows[i].*field);
    if (!v) {
      remapped = true;
      break;
    }
    ids[i] = *v;
  }
  if (!remapped) return ids;
  std::unordered_map<std::string, std::int64_t> table;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [it, inserted] = table.try_emplace(rows[i].*field, static_cast<std::int64_t>(table.size()) + 1);
    ids[i] = it->second;
  }
  return ids;
}

bool checkin_less(const CheckIn& a, const CheckIn& b) {
  if (a.user != b.user) return a.user < b.user;
  if (a.utc_seconds != b.utc_seconds) return a.utc_seconds < b.utc_seconds;
  return a.row < b.row;
}

std::string_view mode_name(FilterMode mode) { return mode == FilterMode::kIterative ? "iterative" : "single_pass"; }

}  // namespace

InputFormat parse_input_format(std::string_view name) {
  if (name == "tsv" || name == "tsv_foursquare" || name == "foursquare") return InputFormat::kTsvFoursquare;
  if (name == "csv" || name == "csv_generic") return InputFormat::kCsvGeneric;
  throw ConfigError(fmt::format("unknown input format '{}'", name));
}

CsvColumnMap parse_column_map(std::string_view json_text) {
  CsvColumnMap map;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("column map is not valid JSON: ") + e.what());
  }
  if (j.contains("delimiter")) {
    const auto d = j["delimiter"].get<std::string>();
    if (d.size() != 1 && d != "\\t") throw ConfigError("delimiter must be a single character");
    map.delimiter = d == "\\t" ? '\t' : d[0];
  }
  map.has_header = j.value("has_header", true);
  map.timestamp_is_local = j.value("timestamp_is_local", false);
  if (j.contains("columns")) {
    const auto& c = j["columns"];
    if (c.contains("user_id")) map.user_id = parse_column_ref(c["user_id"]);
    if (c.contains("poi_id")) map.poi_id = parse_column_ref(c["poi_id"]);
    if (c.contains("category")) map.category = parse_column_ref(c["category"]);
    if (c.contains("lat")) map.lat = parse_column_ref(c["lat"]);
    if (c.contains("lon")) map.lon = parse_column_ref(c["lon"]);
    if (c.contains("timestamp")) map.timestamp = parse_column_ref(c["timestamp"]);
    if (c.contains("tz_offset_minutes")) map.tz_offset_minutes = parse_column_ref(c["tz_offset_minutes"]);
  }
  if (!map.has_header) {
    for (const ColumnRef* ref : {&map.user_id, &map.poi_id, &map.category, &map.lat, &map.lon, &map.timestamp})
      if (std::holds_alternative<std::string>(*ref))
        throw ConfigError("column names require has_header=true; use indices instead");
  }
  return map;
}

std::optional<std::int64_t> parse_timestamp(std::string_view text) {
  text = trim(text);
  if (text.empty()) return std::nullopt;
  if (auto epoch = parse_number<std::int64_t>(text)) return epoch;

  int hh = 0, mm = 0, ss = 0;
  const auto parts = split(text, ' ');
  if (parts.size() == 6) {
    // Tue Apr 03 18:00:09 +0000 2012
    const int mo = month_index(parts[1]);
    auto d = parse_number<unsigned>(parts[2]);
    auto y = parse_number<int>(parts[5]);
    auto off = parse_offset(parts[4]);
    if (mo == 0 || !d || !y || !off || !parse_clock(parts[3], hh, mm, ss)) return std::nullopt;
    const auto local = to_epoch(*y, static_cast<unsigned>(mo), *d, hh, mm, ss);
    if (local == INT64_MIN) return std::nullopt;
    return local - std::int64_t{*off} * 60;
  }

  // 2012-04-03T18:00:09[.123][Z|+hh:mm]
  if (text.size() < 19 || text[4] != '-' || text[7] != '-' || (text[10] != 'T' && text[10] != ' '))
    return std::nullopt;
  auto y = parse_number<int>(text.substr(0, 4));
  auto mo = parse_number<unsigned>(text.substr(5, 2));
  auto d = parse_number<unsigned>(text.substr(8, 2));
  if (!y || !mo || !d || !parse_clock(text.substr(11, 8), hh, mm, ss)) return std::nullopt;
  std::string_view rest = text.substr(19);
  if (!rest.empty() && rest.front() == '.') {
    std::size_t i = 1;
    while (i < rest.size() && rest[i] >= '0' && rest[i] <= '9') ++i;
    rest.remove_prefix(i);
  }
  int offset = 0;
  if (!rest.empty()) {
    auto off = parse_offset(rest);
    if (!off) return std::nullopt;
    offset = *off;
  }
  const auto local = to_epoch(*y, *mo, *d, hh, mm, ss);
  if (local == INT64_MIN) return std::nullopt;
  return local - std::int64_t{offset} * 60;
}

CheckInLog ingest_checkins_from_string(std::string_view contents, const IngestOptions& options) {
  CheckInLog log;
  IngestReport& report = log.report;
  std::vector<RawRow> rows;

  auto note_error = [&](std::size_t line_no, const std::string& msg) {
    if (report.first_errors.size() < 10) report.first_errors.push_back(fmt::format("line {}: {}", line_no, msg));
  };

  std::vector<std::string> header;
  std::size_t col_user = 0, col_poi = 1, col_cat = 3, col_lat = 4, col_lon = 5, col_time = 7;
  std::optional<std::size_t> col_tz = 6;
  const bool tsv = options.format == InputFormat::kTsvFoursquare;
  const auto& cmap = options.columns;
  bool header_pending = !tsv && cmap.has_header;
  if (!tsv && !header_pending) {
    const std::vector<std::string> none;
    col_user = resolve_column(cmap.user_id, none);
    col_poi = resolve_column(cmap.poi_id, none);
    col_cat = resolve_column(cmap.category, none);
    col_lat = resolve_column(cmap.lat, none);
    col_lon = resolve_column(cmap.lon, none);
    col_time = resolve_column(cmap.timestamp, none);
    col_tz = cmap.tz_offset_minutes ? std::optional(resolve_column(*cmap.tz_offset_minutes, none)) : std::nullopt;
  }

  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < contents.size()) {
    auto end = contents.find('\n', start);
    if (end == std::string_view::npos) end = contents.size();
    std::string_view line = contents.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (trim(line).empty()) continue;

    std::vector<std::string> fields;
    if (tsv) {
      for (auto f : split(line, '\t')) fields.emplace_back(trim(f));
    } else {
      fields = split_csv(line, cmap.delimiter);
    }

    if (header_pending) {
      header = fields;
      col_user = resolve_column(cmap.user_id, header);
      col_poi = resolve_column(cmap.poi_id, header);
      col_cat = resolve_column(cmap.category, header);
      col_lat = resolve_column(cmap.lat, header);
      col_lon = resolve_column(cmap.lon, header);
      col_time = resolve_column(cmap.timestamp, header);
      col_tz = cmap.tz_offset_minutes ? std::optional(resolve_column(*cmap.tz_offset_minutes, header)) : std::nullopt;
      header_pending = false;
      continue;
    }

    ++report.rows;
    const std::size_t needed =
        std::max({col_user, col_poi, col_cat, col_lat, col_lon, col_time, col_tz.value_or(0)}) + 1;
    if (fields.size() < needed || (tsv && fields.size() != 8)) {
      ++report.malformed;
      note_error(line_no, fmt::format("expected {} fields, got {}", tsv ? 8 : needed, fields.size()));
      continue;
    }
    RawRow r;
    r.user = std::string(trim(fields[col_user]));
    r.poi = std::string(trim(fields[col_poi]));
    r.category = std::string(trim(fields[col_cat]));
    auto lat = parse_number<double>(fields[col_lat]);
    auto lon = parse_number<double>(fields[col_lon]);
    auto tz = col_tz ? parse_number<std::int32_t>(fields[*col_tz]) : std::optional<std::int32_t>(0);
    auto ts = parse_timestamp(fields[col_time]);
    if (r.user.empty() || r.poi.empty() || !lat || !lon || !tz || !ts) {
      ++report.malformed;
      note_error(line_no, "unparseable field");
      continue;
    }
    if (!in_bounds(*lat, *lon)) {
      ++report.rejected;
      note_error(line_no, fmt::format("coordinates out of bounds ({}, {})", *lat, *lon));
      continue;
    }
    r.lat = *lat;
    r.lon = *lon;
    r.tz = *tz;
    r.utc = (!tsv && cmap.timestamp_is_local) ? *ts - std::int64_t{*tz} * 60 : *ts;
    r.row = static_cast<std::int64_t>(report.rows - 1);
    rows.push_back(std::move(r));
  }

  if (report.rows > 0) {
    const double bad = static_cast<double>(report.malformed + report.rejected) / static_cast<double>(report.rows);
    if (bad > options.max_bad_fraction) {
      throw DataError(fmt::format("{} of {} rows malformed or rejected ({:.2f}%), above the {:.2f}% limit",
                                  report.malformed + report.rejected, report.rows, bad * 100.0,
                                  options.max_bad_fraction * 100.0));
    }
  }

  const auto user_ids = assign_ids(rows, &RawRow::user, report.user_ids_remapped);
  const auto poi_ids = assign_ids(rows, &RawRow::poi, report.poi_ids_remapped);

  std::map<PoiId, PoiRecord> pois;
  log.checkins.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto& r = rows[i];
    pois.try_emplace(poi_ids[i], PoiRecord{poi_ids[i], r.lat, r.lon, r.category});
    log.checkins.push_back(CheckIn{user_ids[i], poi_ids[i], r.utc, r.tz, r.row});
  }
  std::stable_sort(log.checkins.begin(), log.checkins.end(), checkin_less);
  log.pois.reserve(pois.size());
  for (auto& [id, p] : pois) log.pois.push_back(std::move(p));

  report.accepted = log.checkins.size();
  report.pois = log.pois.size();
  std::unordered_set<UserId> users;
  for (const auto& c : log.checkins) users.insert(c.user);
  report.users = users.size();
  return log;
}

CheckInLog ingest_checkins(const std::string& path, const IngestOptions& options) {
  return ingest_checkins_from_string(read_text_file(path), options);
}

const PoiRecord* Dataset::find_poi(PoiId id) const {
  auto it = std::lower_bound(pois.begin(), pois.end(), id, [](const PoiRecord& p, PoiId v) { return p.id < v; });
  return (it != pois.end() && it->id == id) ? &*it : nullptr;
}

const PoiRecord& Dataset::poi(PoiId id) const {
  const auto* p = find_poi(id);
  if (p == nullptr) throw DataError(fmt::format("unknown POI {}", id));
  return *p;
}

std::vector<UserId> Dataset::users() const {
  std::vector<UserId> out;
  for (const auto& c : checkins)
    if (out.empty() || out.back() != c.user) out.push_back(c.user);
  return out;
}

std::string Dataset::config_hash() const {
  const json j = {{"min_user_checkins", filter.min_user_checkins},
                  {"min_poi_checkins", filter.min_poi_checkins},
                  {"mode", mode_name(filter.mode)}};
  return sha256_hex(j.dump()).substr(0, 16);
}

Dataset preprocess(const CheckInLog& log, std::size_t min_user_checkins, std::size_t min_poi_checkins,
                   FilterMode mode) {
  if (min_user_checkins < 1 || min_poi_checkins < 1) throw ConfigError("filter thresholds must be >= 1");
  std::vector<CheckIn> kept = log.checkins;
  std::size_t iterations = 0;
  while (true) {
    ++iterations;
    std::unordered_map<UserId, std::size_t> user_counts;
    std::unordered_map<PoiId, std::size_t> poi_counts;
    for (const auto& c : kept) {
      ++user_counts[c.user];
      ++poi_counts[c.poi];
    }
    std::vector<CheckIn> next;
    next.reserve(kept.size());
    for (const auto& c : kept)
      if (user_counts[c.user] >= min_user_checkins && poi_counts[c.poi] >= min_poi_checkins) next.push_back(c);
    const bool changed = next.size() != kept.size();
    kept = std::move(next);
    if (!changed || mode == FilterMode::kSinglePass) break;
  }
  if (kept.empty()) {
    throw DataError(fmt::format("no check-ins survive filtering (min_user_checkins={}, min_poi_checkins={}, {} input rows)",
                                min_user_checkins, min_poi_checkins, log.checkins.size()));
  }

  Dataset ds;
  std::unordered_set<PoiId> used;
  for (const auto& c : kept) used.insert(c.poi);
  for (const auto& p : log.pois)
    if (used.count(p.id)) ds.pois.push_back(p);
  ds.filter = FilterSummary{min_user_checkins, min_poi_checkins, mode, iterations, log.checkins.size() - kept.size()};
  ds.checkins = std::move(kept);
  return ds;
}

SplitResult split_trajectories(const Dataset& dataset, std::size_t window, std::optional<std::size_t> min_length) {
  if (window < 1) throw ConfigError("trajectory window must be >= 1");
  const std::size_t minimum = min_length.value_or(window + 2);
  if (minimum < 2) throw ConfigError("minimum trajectory length must be >= 2");
  SplitResult out;
  const auto& all = dataset.checkins;
  std::size_t begin = 0;
  while (begin < all.size()) {
    std::size_t end = begin;
    while (end < all.size() && all[end].user == all[begin].user) ++end;
    const std::size_t n = end - begin;
    if (n < minimum) {
      out.excluded.push_back(all[begin].user);
    } else {
      TrajectoryPair pair;
      pair.user = all[begin].user;
      pair.target = all[end - 1];
      const std::size_t current_len = std::min(window, n - 1);
      const std::size_t split = end - 1 - current_len;
      pair.historical.assign(all.begin() + static_cast<std::ptrdiff_t>(begin), all.begin() + static_cast<std::ptrdiff_t>(split));
      pair.current.assign(all.begin() + static_cast<std::ptrdiff_t>(split), all.begin() + static_cast<std::ptrdiff_t>(end - 1));
      out.pairs.push_back(std::move(pair));
    }
    begin = end;
  }
  return out;
}

std::string serialize_dataset(const Dataset& dataset) {
  std::string out;
  const json header = {
      {"kind", "nextpoi.dataset"},
      {"version", 1},
      {"counts",
       {{"users", dataset.users().size()}, {"pois", dataset.pois.size()}, {"checkins", dataset.checkins.size()}}},
      {"filter",
       {{"min_user_checkins", dataset.filter.min_user_checkins},
        {"min_poi_checkins", dataset.filter.min_poi_checkins},
        {"mode", mode_name(dataset.filter.mode)},
        {"iterations", dataset.filter.iterations},
        {"removed_checkins", dataset.filter.removed_checkins}}},
      {"config_hash", dataset.config_hash()}};
  out += header.dump();
  out += '\n';
  for (const auto& p : dataset.pois) {
    out += json{{"type", "poi"}, {"id", p.id}, {"lat", p.lat}, {"lon", p.lon}, {"category", p.category}}.dump();
    out += '\n';
  }
  for (const auto& c : dataset.checkins) {
    out += json{{"type", "checkin"}, {"user", c.user}, {"poi", c.poi}, {"utc", c.utc_seconds}, {"tz", c.tz_offset_minutes}}
               .dump();
    out += '\n';
  }
  return out;
}

Dataset deserialize_dataset(std::string_view jsonl) {
  Dataset ds;
  std::istringstream in{std::string(jsonl)};
  std::string line;
  bool have_header = false;
  std::int64_t row = 0;
  try {
    while (std::getline(in, line)) {
      if (trim(line).empty()) continue;
      const json j = json::parse(line);
      if (!have_header) {
        if (j.value("kind", "") != "nextpoi.dataset") throw DataError("not a dataset file (missing header)");
        if (j.value("version", 0) != 1) throw DataError("unsupported dataset version");
        const auto& f = j.at("filter");
        ds.filter.min_user_checkins = f.at("min_user_checkins").get<std::size_t>();
        ds.filter.min_poi_checkins = f.at("min_poi_checkins").get<std::size_t>();
        ds.filter.mode = f.at("mode").get<std::string>() == "iterative" ? FilterMode::kIterative : FilterMode::kSinglePass;
        ds.filter.iterations = f.value("iterations", std::size_t{0});
        ds.filter.removed_checkins = f.value("removed_checkins", std::size_t{0});
        have_header = true;
        continue;
      }
      const auto type = j.at("type").get<std::string>();
      if (type == "poi") {
        ds.pois.push_back(PoiRecord{j.at("id").get<PoiId>(), j.at("lat").get<double>(), j.at("lon").get<double>(),
                                    j.at("category").get<std::string>()});
      } else if (type == "checkin") {
        ds.checkins.push_back(CheckIn{j.at("user").get<UserId>(), j.at("poi").get<PoiId>(), j.at("utc").get<std::int64_t>(),
                                      j.at("tz").get<std::int32_t>(), row++});
      } else {
        throw DataError("unknown record type: " + type);
      }
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed dataset file: ") + e.what());
  }
  if (!have_header) throw DataError("empty dataset file");
  std::sort(ds.pois.begin(), ds.pois.end(), [](const PoiRecord& a, const PoiRecord& b) { return a.id < b.id; });
  std::stable_sort(ds.checkins.begin(), ds.checkins.end(), checkin_less);
  for (const auto& c : ds.checkins)
    if (ds.find_poi(c.poi) == nullptr) throw DataError(fmt::format("check-in references unknown POI {}", c.poi));
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& path) { write_text_file(path, serialize_dataset(dataset)); }

Dataset load_dataset(const std::string& path) { return deserialize_dataset(read_text_file(path)); }

}  // namespace nextpoi
