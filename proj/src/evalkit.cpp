#include "nextpoi/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include <fmt/format.h>

namespace nextpoi {
namespace {

constexpr std::size_t kDefaultKs[] = {5, 10};

}  // namespace

std::optional<std::size_t> label_rank(std::span<const PoiId> ranked, PoiId label) {
  const auto it = std::find(ranked.begin(), ranked.end(), label);
  if (it == ranked.end()) return std::nullopt;
  return static_cast<std::size_t>(it - ranked.begin()) + 1;
}

double MetricsReport::at(std::string_view name) const {
  for (const auto& [n, v] : metrics)
    if (n == name) return v;
  throw ConfigError(fmt::format("no metric named {}", name));
}

nlohmann::json MetricsReport::to_json() const {
  nlohmann::json m = nlohmann::json::object();
  for (const auto& [n, v] : metrics) m[n] = v;
  nlohmann::json inst = nlohmann::json::array();
  for (const auto& i : instances)
    inst.push_back({{"user", i.user}, {"label", i.label}, {"rank", i.rank ? nlohmann::json(*i.rank) : nlohmann::json(nullptr)}});
  return {{"kind", "nextpoi.metrics"},
          {"config_hash", config_hash},
          {"instance_count", instance_count},
          {"metrics", m},
          {"instances", inst}};
}

std::string MetricsReport::render_table() const {
  std::string out = fmt::format("{:<10} {:>8}\n", "Metric", "Value");
  for (const auto& [n, v] : metrics) out += fmt::format("{:<10} {:>8.4f}\n", n, v);
  out += fmt::format("{:<10} {:>8}\n", "instances", instance_count);
  return out;
}

MetricsReport evaluate_ranks(std::span<const InstanceRank> instances, std::span<const std::size_t> ks,
                             std::size_t mrr_cutoff) {
  if (instances.empty()) throw DomainError("cannot evaluate an empty result set");
  if (ks.empty()) ks = kDefaultKs;
  for (auto k : ks)
    if (k == 0) throw ConfigError("metric cutoffs must be >= 1");

  const double n = static_cast<double>(instances.size());
  MetricsReport report;
  report.instance_count = instances.size();
  report.instances.assign(instances.begin(), instances.end());
  for (auto k : ks) {
    double hits = 0.0;
    for (const auto& i : instances) hits += (i.rank && *i.rank <= k) ? 1.0 : 0.0;
    report.metrics.emplace_back(fmt::format("HR@{}", k), hits / n);
  }
  for (auto k : ks) {
    double gain = 0.0;
    for (const auto& i : instances)
      if (i.rank && *i.rank <= k) gain += 1.0 / std::log2(static_cast<double>(*i.rank) + 1.0);
    report.metrics.emplace_back(fmt::format("NDCG@{}", k), gain / n);
  }
  double rr = 0.0;
  for (const auto& i : instances)
    if (i.rank && *i.rank <= mrr_cutoff) rr += 1.0 / static_cast<double>(*i.rank);
  report.metrics.emplace_back("MRR", rr / n);
  return report;
}

MetricsReport evaluate(std::span<const PredictionResult> results, std::span<const std::size_t> ks,
                       std::size_t mrr_cutoff) {
  std::vector<InstanceRank> ranks;
  ranks.reserve(results.size());
  for (const auto& r : results) ranks.push_back({r.user, r.label, label_rank(r.ranked, r.label)});
  return evaluate_ranks(ranks, ks, mrr_cutoff);
}

std::optional<double> relative_improvement(double a, double b) {
  if (a == 0.0) return std::nullopt;
  return (b - a) / a * 100.0;
}

std::vector<MetricDelta> compare_runs(const MetricsReport& a, const MetricsReport& b) {
  std::map<UserId, PoiId> left;
  for (const auto& i : a.instances) left.emplace(i.user, i.label);
  bool same = a.instances.size() == b.instances.size() && left.size() == a.instances.size();
  for (const auto& i : b.instances) {
    const auto it = left.find(i.user);
    same = same && it != left.end() && it->second == i.label;
  }
  if (!same) throw DataError("reports cover different instance sets");
  std::vector<MetricDelta> out;
  for (const auto& [name, va] : a.metrics) {
    const double vb = b.at(name);
    out.push_back({name, va, vb, relative_improvement(va, vb)});
  }
  return out;
}

std::string render_comparison(std::span<const MetricDelta> deltas) {
  std::string out = fmt::format("{:<10} {:>8} {:>8} {:>10}\n", "Metric", "A", "B", "Change");
  for (const auto& d : deltas)
    out += fmt::format("{:<10} {:>8.4f} {:>8.4f} {:>10}\n", d.metric, d.a, d.b,
                       d.relative_pct ? fmt::format("{:+.2f}%", *d.relative_pct) : std::string("n/a"));
  return out;
}

}  // namespace nextpoi
