#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>

#include <json.hpp>

#include "nextpoi/llm_gateway.hpp"
#include "nextpoi/vector_store.hpp"

namespace nextpoi {

struct BackendConfig {
  std::string kind = "mock";  // mock | remote | stub (mock rules behind the HTTP client, optional fault injection)
  std::string base_url;
  std::string api_key_env = "OPENAI_API_KEY";
  std::string model;
  std::map<std::string, std::string> role_models;
  double timeout_s = 60.0;
  int max_retries = 3;
  int max_inflight = 4;
  int base_backoff_ms = 500;
  int max_backoff_ms = 8000;
  double fault_rate = 0.0;  // stub only
};

struct EmbedderConfig {
  std::string kind = "hash";  // hash | remote
  std::size_t dimension = 128;
  std::uint64_t seed = 0;
  std::string base_url;
  std::string model;
  std::string api_key_env = "OPENAI_API_KEY";
};

struct RunConfig {
  // Data
  std::string raw_path;
  std::string input_format = "tsv_foursquare";
  std::string column_map_path;  // csv_generic only
  double max_bad_fraction = 0.01;
  std::size_t min_user_checkins = 10;
  std::size_t min_poi_checkins = 10;
  std::string filter_mode = "iterative";  // iterative | single_pass
  std::string dataset_path;
  std::string index_path;
  std::size_t window = 30;     // L
  std::size_t min_length = 0;  // 0 -> window + 2
  std::size_t top_n = 15;

  // Candidates
  std::size_t per_query_k = 32;  // K_C
  std::size_t pool_cap = 250;
  std::size_t refine_k = 25;  // K; 0 disables candidates
  std::size_t predict_k = 10;

  BackendConfig backend;
  EmbedderConfig embedder;
  DecodingParams decoding;
  std::string templates_dir;

  // Ablations
  bool no_profiler = false;
  bool no_forecaster = false;
  bool no_refine = false;
  bool single_agent = false;

  // Reverse sample construction
  int rrf_max_retries = 2;
  double rrf_profile_threshold = 0.5;
  double rrf_retry_temperature = 0.7;
  bool strict = true;

  std::uint64_t seed = 0;

  // Not part of the hash: execution detail only.
  std::size_t threads = 1;
  std::string audit_log;

  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  /// Digest of every semantic field (threads and audit_log excluded).
  std::string hash() const;
  void validate() const;
};

/// Instantiates the chat backend described by `config.backend`. For kind
/// "stub", `fault_transport` (if non-null) receives the fault-injecting
/// transport so callers can inspect what was injected.
std::shared_ptr<ChatBackend> make_backend(const RunConfig& config,
                                          std::shared_ptr<FaultInjectingTransport>* fault_transport = nullptr,
                                          std::shared_ptr<RetryingClient>* client_out = nullptr);
std::unique_ptr<Embedder> make_embedder(const RunConfig& config);
const TemplateSet& templates_for(const RunConfig& config);

}  // namespace nextpoi
