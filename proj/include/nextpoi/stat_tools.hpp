#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nextpoi/dataset.hpp"

namespace nextpoi {

enum class SummaryKind { kFreq, kCat, kTime, kLoc };
enum class TrajectoryScope { kHistorical, kCurrent };

std::string_view summary_kind_name(SummaryKind kind);

struct SummaryEntry {
  std::string label;
  std::int64_t count = 0;
  // Secondary sort key (POI id, hour, weekday index); equal keys fall back to label.
  std::int64_t key = 0;

  friend bool operator==(const SummaryEntry&, const SummaryEntry&) = default;
};

struct LocationStats {
  double centroid_lat = 0.0;
  double centroid_lon = 0.0;
  double mean_radius_km = 0.0;
  double max_radius_km = 0.0;
};

struct DistributionSummary {
  SummaryKind kind = SummaryKind::kFreq;
  TrajectoryScope scope = TrajectoryScope::kHistorical;
  UserId user = 0;
  std::size_t contributing = 0;
  // Sorted by count desc, then key asc, then label asc.
  std::vector<SummaryEntry> entries;
  std::vector<SummaryEntry> weekday_entries;  // time only
  std::optional<LocationStats> location;      // loc only
  std::string rendered;

  bool empty() const { return contributing == 0; }
};

struct SummaryContext {
  UserId user = 0;
  TrajectoryScope scope = TrajectoryScope::kHistorical;
  std::size_t top_n = 15;
};

DistributionSummary tool_freq(std::span<const CheckIn> trajectory, const SummaryContext& ctx);
DistributionSummary tool_cat(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx);
DistributionSummary tool_time(std::span<const CheckIn> trajectory, const SummaryContext& ctx);
DistributionSummary tool_loc(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx);

using SummarySet = std::array<DistributionSummary, 4>;  // freq, cat, time, loc

SummarySet run_tools(std::span<const CheckIn> trajectory, const Dataset& dataset, const SummaryContext& ctx);

/// Deterministic one-paragraph rendering:
/// "The historical trajectory of User 27 shows the following category distribution:
///  Home (private), Frequency: 117; Gym / Fitness Center, Frequency: 25."
/// Entries beyond `top_n` are summarised as "and N more".
std::string render_summary(const DistributionSummary& summary, std::size_t top_n);

/// Great-circle distance on a sphere of radius 6371.0088 km (mean Earth radius).
double haversine_km(double lat1, double lon1, double lat2, double lon2);

inline constexpr double kEarthRadiusKm = 6371.0088;

/// Hour of day [0, 23] and weekday (0 = Monday) of a local timestamp.
int local_hour(std::int64_t local_seconds);
int local_weekday(std::int64_t local_seconds);
std::string_view weekday_name(int weekday);

nlohmann::json summary_to_json(const DistributionSummary& summary);

}  // namespace nextpoi
