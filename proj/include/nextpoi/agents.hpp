#pragma once

#include <array>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nextpoi/dataset.hpp"
#include "nextpoi/llm_gateway.hpp"
#include "nextpoi/run_config.hpp"
#include "nextpoi/stat_tools.hpp"
#include "nextpoi/vector_store.hpp"

namespace nextpoi {

struct StageFlags {
  bool attempted = false;
  bool backend_error = false;
  bool empty_output = false;
  bool fallback = false;          // deterministic default used instead of (part of) the model output
  std::size_t model_ids = 0;      // ids taken from the model's answer
  std::size_t fallback_ids = 0;   // ids filled from the fallback pool
  std::string error;

  bool failed() const { return backend_error || empty_output; }
};

using Provenance = std::array<StageFlags, 5>;  // indexed by Role

inline StageFlags& stage(Provenance& p, Role r) { return p[static_cast<std::size_t>(r)]; }
inline const StageFlags& stage(const Provenance& p, Role r) { return p[static_cast<std::size_t>(r)]; }

struct UserContext {
  std::string profile;
  std::string pattern;
  SummarySet summaries_historical;
  SummarySet summaries_current;
};

struct CandidateBundle {
  std::vector<PoiId> initial;
  std::vector<PoiId> profile_refined;  // C^H
  std::vector<PoiId> pattern_refined;  // C^C
  std::vector<PoiId> merged;
};

struct PredictionResult {
  UserId user = 0;
  std::vector<PoiId> ranked;
  PoiId label = 0;
  CandidateBundle candidates;
  bool in_candidate = false;      // top-1 is in the merged set
  bool out_of_candidate = false;  // top-1 outside a non-empty merged set
  Provenance provenance{};
  std::string instance_error;     // set when the instance failed outright

  bool failed() const { return !instance_error.empty(); }
};

struct TextOutcome {
  std::string text;
  StageFlags flags;
};

struct ListOutcome {
  std::vector<PoiId> ids;
  StageFlags flags;
};

/// Long-term profile from the historical trajectory and its summaries.
TextOutcome profile_user(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                         const SummarySet& summaries, std::span<const CheckIn> historical,
                         const DecodingParams& params = {}, const PoiRecord* target = nullptr);

/// Recent mobility pattern from the current trajectory and its summaries.
TextOutcome mobility_pattern(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                             const SummarySet& summaries, std::span<const CheckIn> current,
                             const DecodingParams& params = {}, const PoiRecord* target = nullptr);

/// Re-ranks `initial` under a profile (kForecasterProfile) or pattern
/// (kForecasterPattern) context; at most K ids, all drawn from `initial`.
ListOutcome refine_candidates(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                              UserId user, std::string_view context, std::span<const CheckIn> trajectory,
                              std::span<const PoiId> initial, std::size_t K, const DecodingParams& params = {},
                              const PoiRecord* target = nullptr);

/// H1, C1, H2, C2, ... keeping the first occurrence of each id.
std::vector<PoiId> merge_candidates(std::span<const PoiId> profile_refined, std::span<const PoiId> pattern_refined);

PredictionResult predict(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                         const UserContext& context, const CandidateBundle& bundle, std::span<const CheckIn> current,
                         std::size_t k, const DecodingParams& params = {});

/// Full pipeline for one trajectory pair. Never throws for backend problems;
/// those are recorded in the provenance flags.
PredictionResult run_instance(const TrajectoryPair& pair, const Dataset& dataset, const VectorIndex& index,
                              Gateway& gateway, const RunConfig& config);

struct PipelineRun {
  std::vector<PredictionResult> results;  // sorted by user
  nlohmann::json manifest;
};

PipelineRun run_pipeline(const Dataset& dataset, std::span<const TrajectoryPair> pairs, const VectorIndex& index,
                         Gateway& gateway, const RunConfig& config);

nlohmann::json result_to_json(const PredictionResult& result);
PredictionResult result_from_json(const nlohmann::json& j);
std::string results_to_jsonl(std::span<const PredictionResult> results);
std::vector<PredictionResult> results_from_jsonl(std::string_view text);

}  // namespace nextpoi
