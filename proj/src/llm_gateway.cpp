#include "nextpoi/llm_gateway.hpp"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <map>
#include <unordered_map>
#include <unordered_set>

#include <fmt/format.h>
#include <json.hpp>

#include "nextpoi/vector_store.hpp"

namespace nextpoi {
namespace {

using nlohmann::json;

// Splits a prompt into "### Name" sections; text before the first header is "".
std::map<std::string, std::string> split_sections(std::string_view text) {
  std::map<std::string, std::string> out;
  std::string current;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    if (line.rfind("### ", 0) == 0) {
      current = std::string(line.substr(4));
      out[current];
    } else {
      auto& body = out[current];
      if (!body.empty()) body += '\n';
      body += line;
    }
    if (end == text.size()) break;
    pos = end + 1;
  }
  return out;
}

std::optional<std::int64_t> read_int(std::string_view s, std::size_t& pos) {
  std::size_t start = pos;
  while (pos < s.size() && std::isdigit(static_cast<unsigned char>(s[pos]))) ++pos;
  if (pos == start) return std::nullopt;
  return std::stoll(std::string(s.substr(start, pos - start)));
}

// Ids following "POI " in order of appearance.
std::vector<PoiId> poi_mentions(std::string_view text) {
  std::vector<PoiId> out;
  std::size_t pos = 0;
  while ((pos = text.find("POI ", pos)) != std::string_view::npos) {
    pos += 4;
    if (auto v = read_int(text, pos)) out.push_back(*v);
  }
  return out;
}

struct SummaryView {
  std::vector<std::string> labels;  // in rendered order
};

// Reads "label, Frequency: n; label, Frequency: n." lists out of rendered summaries.
std::map<std::string, SummaryView> parse_summaries(std::string_view text) {
  std::map<std::string, SummaryView> out;
  static constexpr std::string_view kMarker = "shows the following ";
  static constexpr std::string_view kFreq = ", Frequency: ";
  std::size_t pos = 0;
  while ((pos = text.find(kMarker, pos)) != std::string_view::npos) {
    pos += kMarker.size();
    const auto kind_end = text.find(" distribution: ", pos);
    if (kind_end == std::string_view::npos) break;
    auto& view = out[std::string(text.substr(pos, kind_end - pos))];
    pos = kind_end + 15;
    while (true) {
      const auto f = text.find(kFreq, pos);
      const auto line_end = text.find('\n', pos);
      if (f == std::string_view::npos || (line_end != std::string_view::npos && f > line_end)) break;
      view.labels.emplace_back(text.substr(pos, f - pos));
      std::size_t p = f + kFreq.size();
      read_int(text, p);
      if (p + 1 < text.size() && text[p] == ';' && text[p + 1] == ' ' && text.substr(p + 2, 4) != "and ") {
        pos = p + 2;
        continue;
      }
      pos = p;
      break;
    }
  }
  return out;
}

std::string join_top(const std::vector<std::string>& labels, std::size_t n, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < std::min(n, labels.size()); ++i) {
    if (i > 0) out += sep;
    out += labels[i];
  }
  return out.empty() ? std::string("none") : out;
}

std::string after(std::string_view text, std::string_view key) {
  const auto p = text.find(key);
  if (p == std::string_view::npos) return {};
  std::size_t e = p + key.size();
  while (e < text.size() && (std::isalnum(static_cast<unsigned char>(text[e])))) ++e;
  return std::string(text.substr(p + key.size(), e - p - key.size()));
}

std::string first_user_id(std::string_view text) {
  const auto p = text.find("User ");
  if (p == std::string_view::npos) return "?";
  std::size_t q = p + 5;
  auto v = read_int(text, q);
  return v ? std::to_string(*v) : "?";
}

std::string mock_profiler(const PromptRecord& prompt) {
  const auto sections = split_sections(prompt.user);
  const auto summaries_it = sections.find("Statistical summaries");
  const auto summaries = parse_summaries(summaries_it == sections.end() ? std::string_view() : summaries_it->second);
  auto labels = [&](const char* kind) {
    const auto it = summaries.find(kind);
    return it == summaries.end() ? std::vector<std::string>{} : it->second.labels;
  };
  const auto cats = labels("category");
  const auto hours = labels("time");
  const auto locs = labels("location");
  const auto user = first_user_id(prompt.user);

  std::string out;
  if (prompt.role == Role::kProfilerLong) {
    out = fmt::format(
        "User {} long-term profile: most visited categories are {}; most active around {}; usually found near {}.", user,
        join_top(cats, 3, ", "), join_top(hours, 3, ", "), join_top(locs, 3, "; "));
  } else {
    const auto text = summaries_it == sections.end() ? std::string() : summaries_it->second;
    const auto peak_hour = after(text, "Peak hour: ");
    const auto peak_day = after(text, "peak weekday: ");
    out = fmt::format(
        "User {} recent mobility pattern: key destinations are {}; peak hour {} on {}; active hours {}; recent "
        "locations near {}.",
        user, join_top(cats, 3, ", "), peak_hour.empty() ? "unknown" : peak_hour,
        peak_day.empty() ? "unknown" : peak_day, join_top(hours, 3, ", "), join_top(locs, 3, "; "));
  }

  if (const auto target = sections.find("Target POI"); target != sections.end()) {
    const std::string_view t = target->second;
    const auto c0 = t.find("(category: ");
    const auto c1 = t.find(", coordinates (");
    const auto c2 = c1 == std::string_view::npos ? c1 : t.find(')', c1 + 15);
    if (c0 != std::string_view::npos && c1 != std::string_view::npos && c2 != std::string_view::npos) {
      const std::string category(t.substr(c0 + 11, c1 - c0 - 11));
      double lat = 0, lon = 0;
      const bool top3 = std::find(cats.begin(), cats.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, cats.size())),
                                  category) != cats.begin() + static_cast<std::ptrdiff_t>(std::min<std::size_t>(3, cats.size()));
      if (top3 && std::sscanf(std::string(t.substr(c1 + 15, c2 - c1 - 15)).c_str(), "%lf, %lf", &lat, &lon) == 2) {
        out += fmt::format(" The next visit fits the user's {} routine near ({:.2f}, {:.2f}).", category, lat, lon);
      }
    }
  }
  return out;
}

std::vector<PoiId> rank_by_trajectory_frequency(const std::vector<PoiId>& candidates, std::string_view trajectory) {
  std::unordered_map<PoiId, std::size_t> freq;
  for (PoiId id : poi_mentions(trajectory)) ++freq[id];
  std::vector<PoiId> unique;
  std::unordered_set<PoiId> seen;
  for (PoiId id : candidates)
    if (seen.insert(id).second) unique.push_back(id);
  std::sort(unique.begin(), unique.end(), [&](PoiId a, PoiId b) {
    const auto fa = freq.count(a) ? freq.at(a) : 0;
    const auto fb = freq.count(b) ? freq.at(b) : 0;
    if (fa != fb) return fa > fb;
    return a < b;
  });
  return unique;
}

std::string trajectory_section(const std::map<std::string, std::string>& sections) {
  for (const auto& [name, body] : sections)
    if (name.size() >= 10 && name.compare(name.size() - 10, 10, "trajectory") == 0) return body;
  return {};
}

std::size_t requested_count(const std::map<std::string, std::string>& sections, std::size_t fallback) {
  const auto it = sections.find("Requested count");
  if (it == sections.end()) return fallback;
  std::size_t p = it->second.find_first_of("0123456789");
  if (p == std::string::npos) return fallback;
  auto v = read_int(it->second, p);
  return v ? static_cast<std::size_t>(*v) : fallback;
}

std::string join_ids(std::string_view prefix, const std::vector<PoiId>& ids, std::size_t k) {
  std::string out(prefix);
  for (std::size_t i = 0; i < std::min(k, ids.size()); ++i) {
    out += i == 0 ? " " : ", ";
    out += std::to_string(ids[i]);
  }
  return out;
}

bool is_decimal_part(std::string_view text, std::size_t start, std::size_t end) {
  if (start > 0 && text[start - 1] == '.' && start > 1 && std::isdigit(static_cast<unsigned char>(text[start - 2])))
    return true;
  return end + 1 < text.size() && text[end] == '.' && std::isdigit(static_cast<unsigned char>(text[end + 1]));
}

std::string_view marker_tail(std::string_view text) {
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::size_t best = std::string::npos;
  std::size_t best_len = 0;
  for (std::string_view m : {std::string_view("candidates:"), std::string_view("predictions:")}) {
    const auto p = lower.rfind(m);
    if (p != std::string::npos && (best == std::string::npos || p > best)) {
      best = p;
      best_len = m.size();
    }
  }
  if (best == std::string::npos) return text;
  auto tail = text.substr(best + best_len);
  const auto nl = tail.find('\n');
  return nl == std::string_view::npos ? tail : tail.substr(0, nl);
}

}  // namespace

void DecodingParams::validate() const {
  if (!(temperature >= 0.0)) throw ConfigError("temperature must be >= 0");
  if (!(top_p > 0.0 && top_p <= 1.0)) throw ConfigError("top_p must be in (0, 1]");
  if (n_samples < 1) throw ConfigError("n_samples must be >= 1");
  if (max_tokens < 1) throw ConfigError("max_tokens must be >= 1");
}

std::string mock_complete(const PromptRecord& prompt) {
  switch (prompt.role) {
    case Role::kProfilerLong:
    case Role::kProfilerShort:
      return mock_profiler(prompt);
    case Role::kForecasterProfile:
    case Role::kForecasterPattern: {
      const auto sections = split_sections(prompt.user);
      const auto cand_it = sections.find("Candidate POIs");
      const auto candidates = cand_it == sections.end() ? std::vector<PoiId>{} : poi_mentions(cand_it->second);
      const auto ranked = rank_by_trajectory_frequency(candidates, trajectory_section(sections));
      return join_ids("CANDIDATES:", ranked, requested_count(sections, ranked.size()));
    }
    case Role::kPredictor: {
      const auto sections = split_sections(prompt.user);
      const auto merged_it = sections.find("Merged candidates");
      auto candidates = merged_it == sections.end() ? std::vector<PoiId>{} : poi_mentions(merged_it->second);
      const auto traj = trajectory_section(sections);
      if (candidates.empty()) candidates = poi_mentions(traj);
      const auto ranked = rank_by_trajectory_frequency(candidates, traj);
      return join_ids("PREDICTIONS:", ranked, requested_count(sections, 10));
    }
  }
  throw BackendError("mock-error: unknown role");
}

std::string MockBackend::id() const { return fmt::format("mock-v1:seed={}", seed_); }

std::string MockBackend::complete(const PromptRecord& prompt, const DecodingParams& params) {
  params.validate();
  return mock_complete(prompt);
}

RemoteChatBackend::RemoteChatBackend(std::shared_ptr<RetryingClient> client, RemoteChatConfig config)
    : client_(std::move(client)), config_(std::move(config)) {
  if (!client_) throw ConfigError("remote backend needs a client");
  if (config_.base_url.empty()) throw ConfigError("remote backend needs base_url");
  if (config_.model.empty()) throw ConfigError("remote backend needs a model name");
}

std::string RemoteChatBackend::id() const { return fmt::format("remote:{}@{}", config_.model, config_.base_url); }

std::string RemoteChatBackend::request_body(const std::string& model, const PromptRecord& prompt,
                                            const DecodingParams& params) {
  json messages = json::array();
  if (!prompt.system.empty()) messages.push_back({{"role", "system"}, {"content", prompt.system}});
  messages.push_back({{"role", "user"}, {"content", prompt.user}});
  return json{{"model", model},
              {"messages", messages},
              {"temperature", params.temperature},
              {"top_p", params.top_p},
              {"n", params.n_samples},
              {"max_tokens", params.max_tokens}}
      .dump();
}

std::string RemoteChatBackend::complete(const PromptRecord& prompt, const DecodingParams& params) {
  params.validate();
  const auto it = config_.role_models.find(prompt.role);
  const std::string& model = it == config_.role_models.end() ? config_.model : it->second;
  HttpRequest req;
  req.url = config_.base_url + "/chat/completions";
  req.timeout = config_.timeout;
  req.body = request_body(model, prompt, params);
  if (!config_.api_key.empty()) req.headers["Authorization"] = "Bearer " + config_.api_key;
  const auto resp = client_->post(req);
  try {
    const auto j = json::parse(resp.body);
    const auto& choices = j.at("choices");
    if (choices.empty()) throw EmptyOutputError("backend returned no choices");
    const auto& content = choices.at(0).at("message").at("content");
    return content.is_null() ? std::string() : content.get<std::string>();
  } catch (const json::exception& e) {
    throw BackendError(std::string("malformed chat-completions response: ") + e.what());
  }
}

HttpResponse mock_chat_server(const HttpRequest& request, const TemplateSet& templates) {
  HttpResponse resp;
  json body;
  try {
    body = json::parse(request.body);
  } catch (const json::exception&) {
    resp.status = 400;
    resp.body = R"({"error":"mock-error: request is not JSON"})";
    return resp;
  }
  if (request.url.size() >= 11 && request.url.compare(request.url.size() - 11, 11, "/embeddings") == 0) {
    const auto dim = body.value("dimensions", std::size_t{64});
    HashEmbedder embedder(dim, 0);
    json data = json::array();
    std::size_t i = 0;
    for (const auto& input : body.at("input")) {
      const auto v = embedder.embed(input.get<std::string>());
      data.push_back({{"object", "embedding"}, {"index", i++}, {"embedding", v}});
    }
    resp.status = 200;
    resp.body = json{{"object", "list"}, {"data", data}, {"model", body.value("model", "")}}.dump();
    return resp;
  }
  PromptRecord prompt;
  std::optional<Role> role;
  for (const auto& m : body.value("messages", json::array())) {
    const auto r = m.value("role", "");
    const auto content = m.value("content", "");
    if (r == "system") {
      prompt.system = content;
      for (Role candidate : kAllRoles)
        if (templates.system_text(candidate) == content) role = candidate;
    } else if (r == "user") {
      prompt.user = content;
    }
  }
  if (!role) {
    resp.status = 400;
    resp.body = R"({"error":"mock-error: unknown role"})";
    return resp;
  }
  prompt.role = *role;
  const auto text = mock_complete(prompt);
  resp.status = 200;
  resp.body = json{{"id", "mock-" + sha256_hex(request.body).substr(0, 12)},
                   {"object", "chat.completion"},
                   {"model", body.value("model", "")},
                   {"choices", json::array({{{"index", 0},
                                             {"message", {{"role", "assistant"}, {"content", text}}},
                                             {"finish_reason", "stop"}}})}}
                  .dump();
  return resp;
}

Gateway::Gateway(std::shared_ptr<ChatBackend> backend, std::string audit_log_path) : backend_(std::move(backend)) {
  if (!backend_) throw ConfigError("gateway needs a backend");
  if (!audit_log_path.empty()) {
    audit_.open(audit_log_path, std::ios::app);
    if (!audit_) throw IoError("cannot open audit log: " + audit_log_path);
  }
}

std::string Gateway::complete(const PromptRecord& prompt, const DecodingParams& params) {
  params.validate();
  if (prompt.user.empty()) throw ConfigError("prompt is empty");
  ++calls_;
  const auto start = std::chrono::steady_clock::now();
  auto elapsed = [&] {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  };
  std::string text;
  try {
    text = backend_->complete(prompt, params);
  } catch (const EmptyOutputError& e) {
    ++empty_outputs_;
    audit(prompt, params, {}, e.what(), elapsed());
    throw;
  } catch (const BackendError& e) {
    ++backend_errors_;
    audit(prompt, params, {}, e.what(), elapsed());
    throw;
  }
  const bool blank = std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c); });
  if (blank) {
    ++empty_outputs_;
    audit(prompt, params, text, "empty output", elapsed());
    throw EmptyOutputError("backend returned an empty completion");
  }
  audit(prompt, params, text, {}, elapsed());
  return text;
}

GatewayStats Gateway::stats() const { return {calls_.load(), backend_errors_.load(), empty_outputs_.load()}; }

void Gateway::audit(const PromptRecord& prompt, const DecodingParams& params, const std::string& response,
                    const std::string& error, double latency_ms) {
  if (!audit_.is_open()) return;
  const json rec = {{"role", role_tag(prompt.role)},
                    {"context_hash", prompt.context_hash},
                    {"backend", backend_->id()},
                    {"temperature", params.temperature},
                    {"top_p", params.top_p},
                    {"system", prompt.system},
                    {"user", prompt.user},
                    {"response", response},
                    {"error", error},
                    {"ok", error.empty()},
                    {"latency_ms", latency_ms}};
  std::lock_guard lock(audit_mu_);
  audit_ << rec.dump() << '\n';
  audit_.flush();
}

RankedParse parse_ranked_pois(std::string_view text, const PoiPredicate& in_universe, std::size_t k,
                              std::span<const PoiId> fallback_pool) {
  if (k == 0) throw ConfigError("parse_ranked_pois needs k >= 1");
  RankedParse out;
  std::unordered_set<PoiId> seen;
  const auto tail = marker_tail(text);
  std::size_t pos = 0;
  while (pos < tail.size() && out.ids.size() < k) {
    if (!std::isdigit(static_cast<unsigned char>(tail[pos]))) {
      ++pos;
      continue;
    }
    const std::size_t start = pos;
    while (pos < tail.size() && std::isdigit(static_cast<unsigned char>(tail[pos]))) ++pos;
    if (is_decimal_part(tail, start, pos) || pos - start > 18) continue;
    const PoiId id = std::stoll(std::string(tail.substr(start, pos - start)));
    if (in_universe && !in_universe(id)) continue;
    if (seen.insert(id).second) out.ids.push_back(id);
  }
  out.from_model = out.ids.size();
  for (PoiId id : fallback_pool) {
    if (out.ids.size() >= k) break;
    if (seen.insert(id).second) out.ids.push_back(id);
  }
  out.from_fallback = out.ids.size() - out.from_model;
  return out;
}

}  // namespace nextpoi
