#include "nextpoi/stat_tools.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>

#include <fmt/format.h>

namespace nextpoi {
namespace {

constexpr std::array<std::string_view, 7> kWeekdays = {"Monday", "Tuesday",  "Wednesday", "Thursday",
                                                       "Friday", "Saturday", "Sunday"};

void sort_entries(std::vector<SummaryEntry>& entries) {
  std::sort(entries.begin(), entries.end(), [](const SummaryEntry& a, const SummaryEntry& b) {
    if (a.count != b.count) return a.count > b.count;
    if (a.key != b.key) return a.key < b.key;
    return a.label < b.label;
  });
}

std::string scope_phrase(TrajectoryScope scope) {
  return scope == TrajectoryScope::kHistorical ? "The historical trajectory" : "The current trajectory";
}

std::string format_entries(const std::vector<SummaryEntry>& entries, std::size_t top_n) {
  std::string out;
  const std::size_t shown = std::min(top_n, entries.size());
  for (std::size_t i = 0; i < shown; ++i) {
    if (i > 0) out += "; ";
    out += fmt::format("{}, Frequency: {}", entries[i].label, entries[i].count);
  }
  if (shown < entries.size()) out += fmt::format("; and {} more", entries.size() - shown);
  return out;
}

DistributionSummary make_summary(SummaryKind kind, const SummaryContext& ctx) {
  DistributionSummary s;
  s.kind = kind;
  s.scope = ctx.scope;
  s.user = ctx.user;
  return s;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
  std::int64_t q = a / b;
  if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
  return q;
}

std::string coordinate_label(double lat, double lon) { return fmt::format("({:.6f}, {:.6f})", lat, lon); }

}  // namespace

std::string_view summary_kind_name(SummaryKind kind) {
  switch (kind) {
    case SummaryKind::kFreq: return "POI frequency";
    case SummaryKind::kCat: return "category";
    case SummaryKind::kTime: return "time";
    case SummaryKind::kLoc: return "location";
  }
  return "unknown";
}

int local_hour(std::int64_t local_seconds) {
  const std::int64_t sod = local_seconds - floor_div(local_seconds, 86400) * 86400;
  return static_cast<int>(sod / 3600);
}

int local_weekday(std::int64_t local_seconds) {
  // 1970-01-01 was a Thursday (index 3 with Monday = 0).
  const std::int64_t days = floor_div(local_seconds, 86400);
  const std::int64_t wd = (days + 3) % 7;
  return static_cast<int>(wd < 0 ? wd + 7 : wd);
}

std::string_view weekday_name(int weekday) { return kWeekdays.at(static_cast<std::size_t>(weekday)); }

double haversine_km(double lat1, double lon1, double lat2, double lon2) {
  constexpr double kRad = std::numbers::pi / 180.0;
  const double dlat = (lat2 - lat1) * kRad;
  const double dlon = (lon2 - lon1) * kRad;
  const double a = std::sin(dlat / 2) * std::sin(dlat / 2) +
                   std::cos(lat1 * kRad) * std::cos(lat2 * kRad) * std::sin(dlon / 2) * std::sin(dlon / 2);
  return 2.0 * kEarthRadiusKm * std::asin(std::min(1.0, std::sqrt(a)));
}

DistributionSummary tool_freq(std::span<const CheckIn> trajectory, const SummaryContext& ctx) {
  auto s = make_summary(SummaryKind::kFreq, ctx);
  std::map<PoiId, std::int64_t> counts;
  for (const auto& c : trajectory) ++counts[c.poi];
  for (const auto& [poi, n] : counts) s.entries.push_back({fmt::format("POI {}", poi), n, poi});
  sort_entries(s.entries);
  s.contributing = trajectory.size();
  s.rendered = render_summary(s, ctx.top_n);
  return s;
}

DistributionSummary tool_cat(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx) {
  auto s = make_summary(SummaryKind::kCat, ctx);
  std::map<std::string, std::int64_t> counts;
  for (const auto& c : trajectory) {
    const auto* poi = dataset.find_poi(c.poi);
    ++counts[(poi == nullptr || poi->category.empty()) ? std::string("unknown") : poi->category];
  }
  for (const auto& [label, n] : counts) s.entries.push_back({label, n, 0});
  sort_entries(s.entries);
  s.contributing = trajectory.size();
  s.rendered = render_summary(s, ctx.top_n);
  return s;
}

DistributionSummary tool_time(std::span<const CheckIn> trajectory, const SummaryContext& ctx) {
  auto s = make_summary(SummaryKind::kTime, ctx);
  std::array<std::int64_t, 24> hours{};
  std::array<std::int64_t, 7> days{};
  for (const auto& c : trajectory) {
    ++hours[static_cast<std::size_t>(local_hour(c.local_seconds()))];
    ++days[static_cast<std::size_t>(local_weekday(c.local_seconds()))];
  }
  for (int h = 0; h < 24; ++h)
    if (hours[h] > 0) s.entries.push_back({fmt::format("{:02d}:00", h), hours[h], h});
  for (int d = 0; d < 7; ++d)
    if (days[d] > 0) s.weekday_entries.push_back({std::string(kWeekdays[d]), days[d], d});
  sort_entries(s.entries);
  sort_entries(s.weekday_entries);
  s.contributing = trajectory.size();
  s.rendered = render_summary(s, ctx.top_n);
  return s;
}

DistributionSummary tool_loc(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx) {
  auto s = make_summary(SummaryKind::kLoc, ctx);
  std::vector<const PoiRecord*> visited;
  visited.reserve(trajectory.size());
  for (const auto& c : trajectory)
    if (const auto* poi = dataset.find_poi(c.poi)) visited.push_back(poi);
  s.contributing = visited.size();
  if (!visited.empty()) {
    LocationStats stats;
    for (const auto* p : visited) {
      stats.centroid_lat += p->lat;
      stats.centroid_lon += p->lon;
    }
    stats.centroid_lat /= static_cast<double>(visited.size());
    stats.centroid_lon /= static_cast<double>(visited.size());
    double total = 0.0;
    for (const auto* p : visited) {
      const double d = haversine_km(stats.centroid_lat, stats.centroid_lon, p->lat, p->lon);
      total += d;
      stats.max_radius_km = std::max(stats.max_radius_km, d);
    }
    stats.mean_radius_km = total / static_cast<double>(visited.size());
    s.location = stats;

    std::map<std::string, std::int64_t> counts;
    for (const auto* p : visited) ++counts[coordinate_label(p->lat, p->lon)];
    for (const auto& [label, n] : counts) s.entries.push_back({label, n, 0});
    sort_entries(s.entries);
  }
  s.rendered = render_summary(s, ctx.top_n);
  return s;
}

SummarySet run_tools(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx) {
  return {tool_freq(trajectory, ctx), tool_cat(trajectory, dataset, ctx), tool_time(trajectory, ctx),
          tool_loc(trajectory, dataset, ctx)};
}

std::string render_summary(const DistributionSummary& summary, std::size_t top_n) {
  const auto head = fmt::format("{} of User {}", scope_phrase(summary.scope), summary.user);
  if (summary.entries.empty()) return head + " has no check-in data available.";
  std::string out = fmt::format("{} shows the following {} distribution: {}.", head, summary_kind_name(summary.kind),
                                format_entries(summary.entries, top_n));
  if (summary.kind == SummaryKind::kTime && !summary.weekday_entries.empty()) {
    out += fmt::format(" Weekday distribution: {}. Peak hour: {}; peak weekday: {}.",
                       format_entries(summary.weekday_entries, top_n), summary.entries.front().key,
                       summary.weekday_entries.front().label);
  }
  if (summary.kind == SummaryKind::kLoc && summary.location) {
    const auto& l = *summary.location;
    out += fmt::format(" Centroid: ({:.6f}, {:.6f}); mean radius: {:.3f} km; max radius: {:.3f} km.", l.centroid_lat,
                       l.centroid_lon, l.mean_radius_km, l.max_radius_km);
  }
  return out;
}

nlohmann::json summary_to_json(const DistributionSummary& summary) {
  auto entries = [](const std::vector<SummaryEntry>& es) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& e : es) arr.push_back({{"label", e.label}, {"count", e.count}});
    return arr;
  };
  nlohmann::json j = {{"kind", summary_kind_name(summary.kind)},
                      {"scope", summary.scope == TrajectoryScope::kHistorical ? "historical" : "current"},
                      {"user", summary.user},
                      {"contributing", summary.contributing},
                      {"entries", entries(summary.entries)},
                      {"rendered", summary.rendered}};
  if (summary.kind == SummaryKind::kTime) j["weekdays"] = entries(summary.weekday_entries);
  if (summary.location) {
    j["location"] = {{"centroid_lat", summary.location->centroid_lat},
                     {"centroid_lon", summary.location->centroid_lon},
                     {"mean_radius_km", summary.location->mean_radius_km},
                     {"max_radius_km", summary.location->max_radius_km}};
  }
  return j;
}

}  // namespace nextpoi
