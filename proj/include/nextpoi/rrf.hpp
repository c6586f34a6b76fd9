#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "nextpoi/agents.hpp"

namespace nextpoi {

/// 0 when the label is absent, else 1 - (rank - 1) / K with rank 1-based.
double alignment_score(std::span<const PoiId> candidates, PoiId label, std::size_t K);

/// Fraction of the label's attribute tokens (category, latitude and longitude
/// rounded to two decimals) that occur in `text` as whole tokens, ignoring case.
double alignment_score(std::string_view text, const PoiRecord& label);

/// Inserts `label` at a 1-based rank drawn uniformly from 1..min(5, n + 1) using
/// `seed`, after dropping the tail element when the list already holds K ids.
std::vector<PoiId> inject_label(std::vector<PoiId> candidates, PoiId label, std::size_t K, std::uint64_t seed);

struct ReverseText {
  std::string text;
  double alignment = 0.0;
  int attempts = 0;
  bool below_threshold = false;
  StageFlags flags;
};

struct ReverseList {
  std::vector<PoiId> ids;
  double alignment = 0.0;
  int attempts = 0;
  bool injected = false;
  StageFlags flags;
};

struct ReverseOptions {
  int max_retries = 2;
  double profile_threshold = 0.5;
  double retry_temperature = 0.7;
  DecodingParams decoding;
  std::uint64_t seed = 0;
};

/// Label-aware profiler call with retries; the first output meeting the
/// threshold wins, otherwise the best-scoring one is kept and flagged.
ReverseText reverse_text(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                         const TrajectoryPair& pair, const SummarySet& summaries, const ReverseOptions& options);

/// Label-aware forecaster call with retries; falls back to seeded injection so
/// the returned list always contains the label.
ReverseList reverse_list(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                         const TrajectoryPair& pair, std::string_view context, std::span<const PoiId> initial,
                         std::size_t K, const ReverseOptions& options);

struct RrfSample {
  Role role = Role::kPredictor;
  UserId user = 0;
  PoiId label = 0;
  std::string system;
  std::string user_prompt;
  std::string assistant_target;
  double alignment = 0.0;
  nlohmann::json meta = nlohmann::json::object();
};

nlohmann::json sample_to_json(const RrfSample& sample);

/// Empty when the sample satisfies its role's invariants, else a description.
std::string check_sample(const RrfSample& sample);

/// The five samples (one per role) for one trajectory pair.
std::vector<RrfSample> build_samples(const TrajectoryPair& pair, const Dataset& dataset, const VectorIndex& index,
                                     Gateway& gateway, const RunConfig& config);

struct RrfEmission {
  std::size_t instances = 0;
  std::size_t emitted = 0;
  std::size_t dropped = 0;
  std::size_t failed_instances = 0;
  nlohmann::json manifest;
};

/// Writes <role>.jsonl for each role, all.jsonl and manifest.json under
/// `out_dir`. In strict mode any dropped sample raises InvariantError after
/// the files are written.
RrfEmission emit_samples(const Dataset& dataset, std::span<const TrajectoryPair> pairs, const VectorIndex& index,
                         Gateway& gateway, const RunConfig& config, const std::string& out_dir);

}  // namespace nextpoi
