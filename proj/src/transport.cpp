#include "nextpoi/transport.hpp"

#include <algorithm>
#include <thread>

#include <fmt/format.h>

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include "nextpoi/common.hpp"

namespace nextpoi {
namespace {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

ParsedUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ConfigError("URL needs a scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

bool retryable(int status) { return status == 0 || status == 429 || status >= 500; }

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

}  // namespace

HttpResponse HttplibTransport::post(const HttpRequest& request) {
  const auto url = split_url(request.url);
  httplib::Client client(url.origin);
  const auto secs = request.timeout.count() / 1000;
  const auto usecs = (request.timeout.count() % 1000) * 1000;
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  for (const auto& [k, v] : request.headers) headers.emplace(k, v);
  auto result = client.Post(url.path, headers, request.body, "application/json");
  HttpResponse out;
  if (!result) {
    out.status = 0;
    out.error = httplib::to_string(result.error());
    return out;
  }
  out.status = result->status;
  out.body = result->body;
  for (const auto& [k, v] : result->headers) out.headers[k] = v;
  return out;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& policy, int attempt) {
  const auto shift = std::min(attempt, 20);
  const auto delay = policy.base_backoff * (std::int64_t{1} << shift);
  return std::min(delay, policy.max_backoff);
}

RetryingClient::RetryingClient(std::shared_ptr<HttpTransport> transport, RetryPolicy policy)
    : transport_(std::move(transport)), policy_(policy), inflight_(std::max(1, policy.max_inflight)) {
  if (!transport_) throw ConfigError("retrying client needs a transport");
  if (policy_.max_retries < 0) throw ConfigError("max_retries must be >= 0");
}

HttpResponse RetryingClient::post(const HttpRequest& request) {
  ++stats_.calls;
  std::string last_error;
  const int budget = policy_.max_retries + 1;
  for (int attempt = 0; attempt < budget; ++attempt) {
    if (attempt > 0) {
      ++stats_.retries;
      std::this_thread::sleep_for(backoff_delay(policy_, attempt - 1));
    }
    HttpResponse response;
    {
      inflight_.acquire();
      ++stats_.attempts;
      try {
        response = transport_->post(request);
      } catch (...) {
        inflight_.release();
        throw;
      }
      inflight_.release();
    }
    auto seen = stats_.max_attempts_seen.load();
    while (static_cast<std::uint64_t>(attempt + 1) > seen &&
           !stats_.max_attempts_seen.compare_exchange_weak(seen, static_cast<std::uint64_t>(attempt + 1))) {
    }
    if (response.status >= 200 && response.status < 300) return response;
    last_error = response.status == 0 ? fmt::format("transport error: {}", response.error)
                                      : fmt::format("HTTP {}: {}", response.status, response.body.substr(0, 200));
    if (!retryable(response.status)) {
      ++stats_.terminal_failures;
      throw BackendError(fmt::format("non-retryable backend response ({})", last_error));
    }
    if (response.status == 429) {
      // Honour Retry-After (seconds) when it asks for more than our own schedule.
      if (auto it = response.headers.find("Retry-After"); it != response.headers.end() && attempt + 1 < budget) {
        try {
          const auto wait = std::chrono::seconds(std::stoll(it->second));
          const auto ours = backoff_delay(policy_, attempt);
          if (wait > ours) std::this_thread::sleep_for(std::min<std::chrono::milliseconds>(wait - ours, policy_.max_backoff));
        } catch (const std::exception&) {
        }
      }
    }
  }
  ++stats_.terminal_failures;
  throw BackendError(fmt::format("backend failed after {} attempts ({})", budget, last_error));
}

FaultInjectingTransport::FaultInjectingTransport(Handler handler, double failure_rate, std::uint64_t seed,
                                                 int attempts_per_call)
    : handler_(std::move(handler)), failure_rate_(failure_rate), seed_(seed), attempts_per_call_(attempts_per_call) {
  if (failure_rate < 0.0 || failure_rate > 1.0) throw ConfigError("failure rate must be in [0, 1]");
  if (attempts_per_call < 1) throw ConfigError("attempts_per_call must be >= 1");
}

HttpResponse FaultInjectingTransport::post(const HttpRequest& request) {
  bool fail = false;
  {
    std::lock_guard lock(mu_);
    const int n = attempts_[request.body]++;
    fail = unit_interval(derive_seed(seed_, fnv1a(request.body), static_cast<std::uint64_t>(n))) < failure_rate_;
    if (fail) {
      ++injected_;
      int& streak = consecutive_failures_[request.body];
      ++streak;
      if (streak % attempts_per_call_ == 0) terminal_.push_back(request.body);
    } else {
      consecutive_failures_[request.body] = 0;
    }
  }
  if (fail) {
    HttpResponse r;
    // Alternate failure flavours: dropped connection, throttling, server error.
    switch (fnv1a(request.body) % 3) {
      case 0: r.status = 0; r.error = "injected connection failure"; break;
      case 1: r.status = 429; r.body = R"({"error":"injected rate limit"})"; break;
      default: r.status = 503; r.body = R"({"error":"injected server error"})"; break;
    }
    return r;
  }
  return handler_(request);
}

std::uint64_t FaultInjectingTransport::injected_failures() const {
  std::lock_guard lock(mu_);
  return injected_;
}

std::uint64_t FaultInjectingTransport::terminal_failures() const {
  std::lock_guard lock(mu_);
  return terminal_.size();
}

std::vector<std::string> FaultInjectingTransport::terminal_bodies() const {
  std::lock_guard lock(mu_);
  return terminal_;
}

std::uint64_t FaultInjectingTransport::max_attempts_for_one_body() const {
  std::lock_guard lock(mu_);
  int best = 0;
  for (const auto& [body, n] : attempts_) best = std::max(best, n);
  return static_cast<std::uint64_t>(best);
}

}  // namespace nextpoi
