#include "nextpoi/run_config.hpp"

#include <cstdlib>
#include <mutex>

#include <fmt/format.h>

namespace nextpoi {
namespace {

using nlohmann::json;

template <typename T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("config key '{}': {}", key, e.what()));
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> known, const char* where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) throw ConfigError(fmt::format("unknown config key '{}' in {}", key, where));
  }
}

std::string env_or_empty(const std::string& name) {
  if (name.empty()) return {};
  const char* v = std::getenv(name.c_str());
  return v == nullptr ? std::string() : std::string(v);
}

RetryPolicy retry_policy(const BackendConfig& b) {
  RetryPolicy p;
  p.max_retries = b.max_retries;
  p.max_inflight = b.max_inflight;
  p.base_backoff = std::chrono::milliseconds(b.base_backoff_ms);
  p.max_backoff = std::chrono::milliseconds(b.max_backoff_ms);
  return p;
}

}  // namespace

json RunConfig::to_json() const {
  return json{
      {"raw_path", raw_path},
      {"input_format", input_format},
      {"column_map_path", column_map_path},
      {"max_bad_fraction", max_bad_fraction},
      {"min_user_checkins", min_user_checkins},
      {"min_poi_checkins", min_poi_checkins},
      {"filter_mode", filter_mode},
      {"dataset_path", dataset_path},
      {"index_path", index_path},
      {"window", window},
      {"min_length", min_length},
      {"top_n", top_n},
      {"per_query_k", per_query_k},
      {"pool_cap", pool_cap},
      {"refine_k", refine_k},
      {"predict_k", predict_k},
      {"backend",
       {{"kind", backend.kind},
        {"base_url", backend.base_url},
        {"api_key_env", backend.api_key_env},
        {"model", backend.model},
        {"role_models", backend.role_models},
        {"timeout_s", backend.timeout_s},
        {"max_retries", backend.max_retries},
        {"max_inflight", backend.max_inflight},
        {"base_backoff_ms", backend.base_backoff_ms},
        {"max_backoff_ms", backend.max_backoff_ms},
        {"fault_rate", backend.fault_rate}}},
      {"embedder",
       {{"kind", embedder.kind},
        {"dimension", embedder.dimension},
        {"seed", embedder.seed},
        {"base_url", embedder.base_url},
        {"model", embedder.model},
        {"api_key_env", embedder.api_key_env}}},
      {"decoding",
       {{"temperature", decoding.temperature},
        {"top_p", decoding.top_p},
        {"n_samples", decoding.n_samples},
        {"max_tokens", decoding.max_tokens}}},
      {"templates_dir", templates_dir},
      {"no_profiler", no_profiler},
      {"no_forecaster", no_forecaster},
      {"no_refine", no_refine},
      {"single_agent", single_agent},
      {"rrf_max_retries", rrf_max_retries},
      {"rrf_profile_threshold", rrf_profile_threshold},
      {"rrf_retry_temperature", rrf_retry_temperature},
      {"strict", strict},
      {"seed", seed},
      {"threads", threads},
      {"audit_log", audit_log},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  reject_unknown(j,
                 {"raw_path", "input_format", "column_map_path", "max_bad_fraction", "min_user_checkins",
                  "min_poi_checkins", "filter_mode", "dataset_path", "index_path", "window", "min_length", "top_n", "per_query_k", "pool_cap", "refine_k",
                  "predict_k", "backend", "embedder", "decoding", "templates_dir", "no_profiler", "no_forecaster",
                  "no_refine", "single_agent", "rrf_max_retries", "rrf_profile_threshold", "rrf_retry_temperature",
                  "strict", "seed", "threads", "audit_log"},
                 "run config");
  RunConfig c;
  read(j, "raw_path", c.raw_path);
  read(j, "input_format", c.input_format);
  read(j, "column_map_path", c.column_map_path);
  read(j, "max_bad_fraction", c.max_bad_fraction);
  read(j, "min_user_checkins", c.min_user_checkins);
  read(j, "min_poi_checkins", c.min_poi_checkins);
  read(j, "filter_mode", c.filter_mode);
  read(j, "dataset_path", c.dataset_path);
  read(j, "index_path", c.index_path);
  read(j, "window", c.window);
  read(j, "min_length", c.min_length);
  read(j, "top_n", c.top_n);
  read(j, "per_query_k", c.per_query_k);
  read(j, "pool_cap", c.pool_cap);
  read(j, "refine_k", c.refine_k);
  read(j, "predict_k", c.predict_k);
  read(j, "templates_dir", c.templates_dir);
  read(j, "no_profiler", c.no_profiler);
  read(j, "no_forecaster", c.no_forecaster);
  read(j, "no_refine", c.no_refine);
  read(j, "single_agent", c.single_agent);
  read(j, "rrf_max_retries", c.rrf_max_retries);
  read(j, "rrf_profile_threshold", c.rrf_profile_threshold);
  read(j, "rrf_retry_temperature", c.rrf_retry_temperature);
  read(j, "strict", c.strict);
  read(j, "seed", c.seed);
  read(j, "threads", c.threads);
  read(j, "audit_log", c.audit_log);
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    reject_unknown(b,
                   {"kind", "base_url", "api_key_env", "model", "role_models", "timeout_s", "max_retries",
                    "max_inflight", "base_backoff_ms", "max_backoff_ms", "fault_rate"},
                   "backend");
    read(b, "kind", c.backend.kind);
    read(b, "base_url", c.backend.base_url);
    read(b, "api_key_env", c.backend.api_key_env);
    read(b, "model", c.backend.model);
    read(b, "role_models", c.backend.role_models);
    read(b, "timeout_s", c.backend.timeout_s);
    read(b, "max_retries", c.backend.max_retries);
    read(b, "max_inflight", c.backend.max_inflight);
    read(b, "base_backoff_ms", c.backend.base_backoff_ms);
    read(b, "max_backoff_ms", c.backend.max_backoff_ms);
    read(b, "fault_rate", c.backend.fault_rate);
  }
  if (j.contains("embedder")) {
    const auto& e = j.at("embedder");
    reject_unknown(e, {"kind", "dimension", "seed", "base_url", "model", "api_key_env"}, "embedder");
    read(e, "kind", c.embedder.kind);
    read(e, "dimension", c.embedder.dimension);
    read(e, "seed", c.embedder.seed);
    read(e, "base_url", c.embedder.base_url);
    read(e, "model", c.embedder.model);
    read(e, "api_key_env", c.embedder.api_key_env);
  }
  if (j.contains("decoding")) {
    const auto& d = j.at("decoding");
    reject_unknown(d, {"temperature", "top_p", "n_samples", "max_tokens"}, "decoding");
    read(d, "temperature", c.decoding.temperature);
    read(d, "top_p", c.decoding.top_p);
    read(d, "n_samples", c.decoding.n_samples);
    read(d, "max_tokens", c.decoding.max_tokens);
  }
  c.validate();
  return c;
}

std::string RunConfig::hash() const {
  auto j = to_json();
  j.erase("threads");
  j.erase("audit_log");
  return sha256_hex(j.dump()).substr(0, 16);
}

void RunConfig::validate() const {
  parse_input_format(input_format);
  if (!(max_bad_fraction >= 0.0 && max_bad_fraction <= 1.0)) throw ConfigError("max_bad_fraction must be in [0, 1]");
  if (min_user_checkins < 1 || min_poi_checkins < 1) throw ConfigError("filter thresholds must be >= 1");
  if (filter_mode != "iterative" && filter_mode != "single_pass")
    throw ConfigError("filter_mode must be iterative or single_pass");
  if (window < 1) throw ConfigError("window must be >= 1");
  if (min_length != 0 && min_length < 2) throw ConfigError("min_length must be 0 (auto) or >= 2");
  if (per_query_k < 1) throw ConfigError("per_query_k must be >= 1");
  if (predict_k < 1) throw ConfigError("predict_k must be >= 1");
  if (top_n < 1) throw ConfigError("top_n must be >= 1");
  if (threads < 1) throw ConfigError("threads must be >= 1");
  if (rrf_max_retries < 0) throw ConfigError("rrf_max_retries must be >= 0");
  if (rrf_profile_threshold < 0.0 || rrf_profile_threshold > 1.0)
    throw ConfigError("rrf_profile_threshold must be in [0, 1]");
  if (backend.kind != "mock" && backend.kind != "remote" && backend.kind != "stub")
    throw ConfigError("backend.kind must be mock, remote or stub");
  if (backend.max_retries < 0 || backend.max_inflight < 1) throw ConfigError("invalid retry/in-flight settings");
  if (backend.fault_rate < 0.0 || backend.fault_rate > 1.0) throw ConfigError("fault_rate must be in [0, 1]");
  for (const auto& [tag, model] : backend.role_models)
    if (!parse_role(tag)) throw ConfigError("unknown role in role_models: " + tag);
  if (embedder.kind != "hash" && embedder.kind != "remote") throw ConfigError("embedder.kind must be hash or remote");
  if (embedder.dimension < 1) throw ConfigError("embedder.dimension must be >= 1");
  decoding.validate();
}

std::shared_ptr<ChatBackend> make_backend(const RunConfig& config, std::shared_ptr<FaultInjectingTransport>* fault_transport,
                                          std::shared_ptr<RetryingClient>* client_out) {
  const auto& b = config.backend;
  if (b.kind == "mock") return std::make_shared<MockBackend>(config.seed);

  RemoteChatConfig rc;
  rc.base_url = b.base_url;
  rc.model = b.model;
  rc.api_key = env_or_empty(b.api_key_env);
  rc.timeout = std::chrono::milliseconds(static_cast<std::int64_t>(b.timeout_s * 1000.0));
  if (!config.single_agent)
    for (const auto& [tag, model] : b.role_models) rc.role_models[*parse_role(tag)] = model;

  std::shared_ptr<HttpTransport> transport;
  if (b.kind == "stub") {
    if (rc.base_url.empty()) rc.base_url = "http://stub.invalid/v1";
    if (rc.model.empty()) rc.model = "mock-rules";
    const TemplateSet* templates = &templates_for(config);
    auto fault = std::make_shared<FaultInjectingTransport>(
        [templates](const HttpRequest& req) { return mock_chat_server(req, *templates); }, b.fault_rate,
        derive_seed(config.seed, 0xFA017), b.max_retries + 1);
    if (fault_transport != nullptr) *fault_transport = fault;
    transport = fault;
  } else {
    transport = std::make_shared<HttplibTransport>();
  }
  auto client = std::make_shared<RetryingClient>(transport, retry_policy(b));
  if (client_out != nullptr) *client_out = client;
  return std::make_shared<RemoteChatBackend>(client, rc);
}

std::unique_ptr<Embedder> make_embedder(const RunConfig& config) {
  const auto& e = config.embedder;
  if (e.kind == "hash") return std::make_unique<HashEmbedder>(e.dimension, e.seed);
  RemoteEmbedderConfig rc;
  rc.base_url = e.base_url;
  rc.model = e.model;
  rc.api_key = env_or_empty(e.api_key_env);
  rc.dimension = e.dimension;
  auto client = std::make_shared<RetryingClient>(std::make_shared<HttplibTransport>(), retry_policy(config.backend));
  return std::make_unique<RemoteEmbedder>(client, rc);
}

const TemplateSet& templates_for(const RunConfig& config) {
  if (config.templates_dir.empty()) return TemplateSet::builtin();
  static std::mutex mu;
  static std::map<std::string, std::unique_ptr<TemplateSet>> cache;
  std::lock_guard lock(mu);
  auto& slot = cache[config.templates_dir];
  if (!slot) slot = std::make_unique<TemplateSet>(TemplateSet::load_dir(config.templates_dir));
  return *slot;
}

}  // namespace nextpoi
