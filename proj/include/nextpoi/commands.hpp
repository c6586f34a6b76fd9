#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "nextpoi/analysis.hpp"
#include "nextpoi/evalkit.hpp"
#include "nextpoi/rrf.hpp"
#include "nextpoi/run_config.hpp"

namespace nextpoi {

// Each command writes its artifacts and returns a JSON summary. Every artifact
// carries the config hash of the RunConfig that produced it.

/// raw_path -> dataset JSONL at `out_path` (+ "<out_path>.manifest.json").
nlohmann::json cmd_ingest(const RunConfig& config, const std::string& out_path);

/// dataset_path -> vector index at `out_path` (+ ".json" sidecar).
nlohmann::json cmd_build_index(const RunConfig& config, const std::string& out_path);

/// Candidate run plus the paired global-search run, metrics and hit-rate report under `out_dir`.
nlohmann::json cmd_run(const RunConfig& config, const std::string& out_dir);

/// Reverse-constructed training samples under `out_dir`.
nlohmann::json cmd_gen_rrf(const RunConfig& config, const std::string& out_dir);

/// Metrics for a results file. When `expected_hash` is non-empty it must match
/// the hash embedded in every line unless `force`.
nlohmann::json cmd_evaluate(const std::string& results_path, const std::string& expected_hash, bool force,
                            const std::string& out_path);

/// Hit-rate report from a candidate run and a global-search run.
nlohmann::json cmd_analyze_runs(const std::string& candidate_path, const std::string& global_path,
                                const std::string& name, const std::string& out_path);

/// Hit-rate reports from a rates file (see reports_from_rates_json).
nlohmann::json cmd_analyze_rates(const std::string& rates_path, const std::string& out_path);

struct SimulateOptions {
  std::size_t configs = 100;
  std::size_t trials = 100000;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
};
nlohmann::json cmd_simulate(const SimulateOptions& options, const std::string& csv_path);

enum class SweepAxis { kRefineK, kPerQueryK };
SweepAxis parse_sweep_axis(std::string_view name);

/// One pipeline run per value; CSV of metrics and stage hit rates. Sweeping
/// per_query_k disables the pool cap so candidate sets are nested.
nlohmann::json cmd_sweep_k(const RunConfig& config, SweepAxis axis, const std::vector<std::size_t>& values,
                           const std::string& csv_path);

/// Shared loaders.
struct Workspace {
  Dataset dataset;
  SplitResult split;
  VectorIndex index;
  bool index_built_in_memory = false;
};
Workspace load_workspace(const RunConfig& config, bool need_index);

std::string results_file_contents(std::span<const PredictionResult> results, const std::string& config_hash);
std::vector<PredictionResult> read_results_file(const std::string& path, std::vector<std::string>* hashes = nullptr);

}  // namespace nextpoi
