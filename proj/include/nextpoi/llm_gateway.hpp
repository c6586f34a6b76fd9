#pragma once

#include <atomic>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "nextpoi/prompts.hpp"
#include "nextpoi/transport.hpp"

namespace nextpoi {

struct DecodingParams {
  double temperature = 0.0;
  double top_p = 1.0;
  int n_samples = 1;
  int max_tokens = 1024;

  void validate() const;
};

/// The backend produced no text; callers fall back to a deterministic default.
struct EmptyOutputError : BackendError {
  explicit EmptyOutputError(const std::string& what) : BackendError(what) {}
};

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string id() const = 0;
  virtual std::string complete(const PromptRecord& prompt, const DecodingParams& params) = 0;
};

/// Rule-based stand-in for a chat model. Pure function of the prompt:
///  - profiler roles echo the top-3 category, hour and location entries found in
///    the embedded summaries (plus the target's category and rounded coordinates
///    when a label-aware prompt names a target whose category is among them);
///  - forecaster roles re-rank the listed candidates by how often each appears
///    in the prompt's trajectory section (desc), then id (asc), truncated to the
///    requested count;
///  - the predictor applies the same rule to the merged candidates, or to the
///    trajectory's POIs when no candidates are given.
std::string mock_complete(const PromptRecord& prompt);

class MockBackend final : public ChatBackend {
 public:
  explicit MockBackend(std::uint64_t seed = 0) : seed_(seed) {}
  std::string id() const override;
  std::string complete(const PromptRecord& prompt, const DecodingParams& params) override;

 private:
  std::uint64_t seed_;
};

struct RemoteChatConfig {
  std::string base_url;  // e.g. http://localhost:8000/v1
  std::string model;
  std::string api_key;   // resolved value, not the env var name
  std::map<Role, std::string> role_models;  // optional per-role overrides
  std::chrono::milliseconds timeout{60000};
};

/// OpenAI-compatible chat-completions client.
class RemoteChatBackend final : public ChatBackend {
 public:
  RemoteChatBackend(std::shared_ptr<RetryingClient> client, RemoteChatConfig config);
  std::string id() const override;
  std::string complete(const PromptRecord& prompt, const DecodingParams& params) override;

  static std::string request_body(const std::string& model, const PromptRecord& prompt, const DecodingParams& params);

 private:
  std::shared_ptr<RetryingClient> client_;
  RemoteChatConfig config_;
};

/// Serves chat-completions requests with the mock rules; the role is recovered
/// from the system message. Unknown roles get HTTP 400 ("mock-error").
HttpResponse mock_chat_server(const HttpRequest& request, const TemplateSet& templates);

struct GatewayStats {
  std::uint64_t calls = 0;
  std::uint64_t backend_errors = 0;
  std::uint64_t empty_outputs = 0;
};

/// Shared entry point for every agent call: validates parameters, times the
/// call and appends a request/response record to an optional JSON Lines audit log.
class Gateway {
 public:
  explicit Gateway(std::shared_ptr<ChatBackend> backend, std::string audit_log_path = {});

  std::string complete(const PromptRecord& prompt, const DecodingParams& params = {});

  std::string backend_id() const { return backend_->id(); }
  GatewayStats stats() const;

 private:
  void audit(const PromptRecord& prompt, const DecodingParams& params, const std::string& response,
             const std::string& error, double latency_ms);

  std::shared_ptr<ChatBackend> backend_;
  std::mutex audit_mu_;
  std::ofstream audit_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<std::uint64_t> backend_errors_{0};
  std::atomic<std::uint64_t> empty_outputs_{0};
};

struct RankedParse {
  std::vector<PoiId> ids;
  std::size_t from_model = 0;
  std::size_t from_fallback = 0;
};

using PoiPredicate = std::function<bool(PoiId)>;

/// Tolerant extraction of a ranked id list from free text. Only the text after
/// the last "CANDIDATES:" / "PREDICTIONS:" marker is read when one is present.
/// Integer tokens (not parts of decimals) are taken in order, filtered by
/// `in_universe`, de-duplicated and truncated to k; missing slots are filled
/// from `fallback_pool` in order, skipping ids already present.
RankedParse parse_ranked_pois(std::string_view text, const PoiPredicate& in_universe, std::size_t k,
                              std::span<const PoiId> fallback_pool);

}  // namespace nextpoi
