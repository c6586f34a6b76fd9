#pragma once

#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "nextpoi/agents.hpp"

namespace nextpoi {

struct InstanceRank {
  UserId user = 0;
  PoiId label = 0;
  std::optional<std::size_t> rank;  // 1-based; nullopt = miss
};

struct MetricsReport {
  std::vector<std::pair<std::string, double>> metrics;  // HR@k..., NDCG@k..., MRR
  std::size_t instance_count = 0;
  std::string config_hash;
  std::vector<InstanceRank> instances;

  double at(std::string_view name) const;
  nlohmann::json to_json() const;
  std::string render_table() const;
};

/// 1-based position of `label` in `ranked`, nullopt when absent.
std::optional<std::size_t> label_rank(std::span<const PoiId> ranked, PoiId label);

MetricsReport evaluate(std::span<const PredictionResult> results, std::span<const std::size_t> ks = {},
                       std::size_t mrr_cutoff = 10);
MetricsReport evaluate_ranks(std::span<const InstanceRank> instances, std::span<const std::size_t> ks = {},
                             std::size_t mrr_cutoff = 10);

struct MetricDelta {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  std::optional<double> relative_pct;  // (b - a) / a * 100; nullopt when a == 0
};

/// (b - a) / a as a signed percentage.
std::optional<double> relative_improvement(double a, double b);

/// Both reports must cover the same (user, label) instances.
std::vector<MetricDelta> compare_runs(const MetricsReport& a, const MetricsReport& b);
std::string render_comparison(std::span<const MetricDelta> deltas);

}  // namespace nextpoi
