#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

namespace nextpoi {

struct HttpRequest {
  std::string url;  // absolute, e.g. http://localhost:8000/v1/chat/completions
  std::string body;
  std::map<std::string, std::string> headers;
  std::chrono::milliseconds timeout{60000};
};

struct HttpResponse {
  int status = 0;  // 0 = transport failure (no HTTP response)
  std::string body;
  std::string error;
  std::map<std::string, std::string> headers;
};

class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const HttpRequest& request) = 0;
};

/// cpp-httplib backed transport. One client per call; thread-safe.
class HttplibTransport final : public HttpTransport {
 public:
  HttpResponse post(const HttpRequest& request) override;
};

struct RetryPolicy {
  int max_retries = 3;  // attempts per call <= max_retries + 1
  std::chrono::milliseconds base_backoff{500};
  std::chrono::milliseconds max_backoff{8000};
  int max_inflight = 4;
};

/// Exponential backoff for attempt n (0-based), capped.
std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt);

struct RetryStats {
  std::atomic<std::uint64_t> calls{0};
  std::atomic<std::uint64_t> attempts{0};
  std::atomic<std::uint64_t> retries{0};
  std::atomic<std::uint64_t> terminal_failures{0};
  std::atomic<std::uint64_t> max_attempts_seen{0};
};

/// Wraps a transport with bounded retries, exponential backoff (HTTP 429 and
/// 5xx and transport errors are retryable) and a global in-flight cap.
class RetryingClient {
 public:
  RetryingClient(std::shared_ptr<HttpTransport> transport, RetryPolicy policy);

  /// Returns the first 2xx response; throws BackendError when the budget is spent
  /// or the server answers with a non-retryable status.
  HttpResponse post(const HttpRequest& request);

  const RetryPolicy& policy() const { return policy_; }
  const RetryStats& stats() const { return stats_; }

 private:
  std::shared_ptr<HttpTransport> transport_;
  RetryPolicy policy_;
  std::counting_semaphore<> inflight_;
  RetryStats stats_;
};

/// Test double that answers every request through `handler` but fails a seeded
/// fraction of attempts. The decision for a request depends only on its body and
/// on how many times that body was already sent, so it does not depend on thread
/// scheduling. Terminal failures (every attempt of one call failed) are recorded.
class FaultInjectingTransport final : public HttpTransport {
 public:
  using Handler = std::function<HttpResponse(const HttpRequest&)>;

  FaultInjectingTransport(Handler handler, double failure_rate, std::uint64_t seed, int attempts_per_call);

  HttpResponse post(const HttpRequest& request) override;

  std::uint64_t injected_failures() const;
  std::uint64_t terminal_failures() const;
  // Bodies of requests whose every attempt failed.
  std::vector<std::string> terminal_bodies() const;
  std::uint64_t max_attempts_for_one_body() const;

 private:
  Handler handler_;
  double failure_rate_;
  std::uint64_t seed_;
  int attempts_per_call_;
  mutable std::mutex mu_;
  std::unordered_map<std::string, int> attempts_;
  std::unordered_map<std::string, int> consecutive_failures_;
  std::uint64_t injected_ = 0;
  std::vector<std::string> terminal_;
};

}  // namespace nextpoi
