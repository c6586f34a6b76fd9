#include "nextpoi/agents.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

namespace nextpoi {
namespace {

using nlohmann::json;

constexpr std::string_view kInsufficientHistory = "insufficient history";

TextOutcome run_profiler(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                         UserId user, const SummarySet& summaries, std::span<const CheckIn> trajectory,
                         const DecodingParams& params, const PoiRecord* target) {
  TextOutcome out;
  if (trajectory.empty()) {
    out.text = std::string(kInsufficientHistory);
    out.flags.fallback = true;
    return out;
  }
  ProfilerInputs in;
  in.user = user;
  in.summaries = &summaries;
  in.trajectory = trajectory;
  in.target = target;
  const auto prompt = build_profiler_prompt(templates, role, in, dataset);
  out.flags.attempted = true;
  try {
    out.text = gateway.complete(prompt, params);
  } catch (const EmptyOutputError& e) {
    out.flags.empty_output = true;
    out.flags.error = e.what();
  } catch (const BackendError& e) {
    out.flags.backend_error = true;
    out.flags.error = e.what();
  }
  if (out.flags.failed()) {
    out.text = render_summaries(summaries);
    out.flags.fallback = true;
  }
  return out;
}

std::vector<PoiId> distinct_recent_first(std::span<const CheckIn> trajectory) {
  std::vector<PoiId> out;
  std::unordered_set<PoiId> seen;
  for (auto it = trajectory.rbegin(); it != trajectory.rend(); ++it)
    if (seen.insert(it->poi).second) out.push_back(it->poi);
  return out;
}

std::string failure_message(const std::exception& e) { return e.what(); }

json flags_to_json(const StageFlags& f) {
  return json{{"attempted", f.attempted}, {"backend_error", f.backend_error}, {"empty_output", f.empty_output},
              {"fallback", f.fallback},   {"model_ids", f.model_ids},         {"fallback_ids", f.fallback_ids},
              {"error", f.error}};
}

StageFlags flags_from_json(const json& j) {
  StageFlags f;
  f.attempted = j.at("attempted").get<bool>();
  f.backend_error = j.at("backend_error").get<bool>();
  f.empty_output = j.at("empty_output").get<bool>();
  f.fallback = j.at("fallback").get<bool>();
  f.model_ids = j.at("model_ids").get<std::size_t>();
  f.fallback_ids = j.at("fallback_ids").get<std::size_t>();
  f.error = j.at("error").get<std::string>();
  return f;
}

}  // namespace

TextOutcome profile_user(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                         const SummarySet& summaries, std::span<const CheckIn> historical,
                         const DecodingParams& params, const PoiRecord* target) {
  return run_profiler(gateway, templates, dataset, Role::kProfilerLong, user, summaries, historical, params, target);
}

TextOutcome mobility_pattern(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                             const SummarySet& summaries, std::span<const CheckIn> current,
                             const DecodingParams& params, const PoiRecord* target) {
  return run_profiler(gateway, templates, dataset, Role::kProfilerShort, user, summaries, current, params, target);
}

ListOutcome refine_candidates(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                              UserId user, std::string_view context, std::span<const CheckIn> trajectory,
                              std::span<const PoiId> initial, std::size_t K, const DecodingParams& params,
                              const PoiRecord* target) {
  ListOutcome out;
  if (initial.empty() || K == 0) {
    out.flags.fallback = true;
    out.flags.error = initial.empty() ? "empty initial candidate set" : "K = 0";
    return out;
  }
  const std::size_t k = std::min(K, initial.size());
  ForecasterInputs in;
  in.user = user;
  in.context = context;
  in.trajectory = trajectory;
  in.candidates = initial;
  in.k = k;
  in.target = target;
  const auto prompt = build_forecaster_prompt(templates, role, in, dataset);
  out.flags.attempted = true;
  std::string text;
  try {
    text = gateway.complete(prompt, params);
  } catch (const EmptyOutputError& e) {
    out.flags.empty_output = true;
    out.flags.error = e.what();
  } catch (const BackendError& e) {
    out.flags.backend_error = true;
    out.flags.error = e.what();
  }
  const std::unordered_set<PoiId> universe(initial.begin(), initial.end());
  auto parsed = parse_ranked_pois(text, [&](PoiId id) { return universe.count(id) > 0; }, k, initial);
  out.ids = std::move(parsed.ids);
  out.flags.model_ids = parsed.from_model;
  out.flags.fallback_ids = parsed.from_fallback;
  out.flags.fallback = out.flags.failed() || parsed.from_fallback > 0;
  return out;
}

std::vector<PoiId> merge_candidates(std::span<const PoiId> profile_refined, std::span<const PoiId> pattern_refined) {
  std::vector<PoiId> out;
  out.reserve(profile_refined.size() + pattern_refined.size());
  std::unordered_set<PoiId> seen;
  const std::size_t n = std::max(profile_refined.size(), pattern_refined.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i < profile_refined.size() && seen.insert(profile_refined[i]).second) out.push_back(profile_refined[i]);
    if (i < pattern_refined.size() && seen.insert(pattern_refined[i]).second) out.push_back(pattern_refined[i]);
  }
  return out;
}

PredictionResult predict(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, UserId user,
                         const UserContext& context, const CandidateBundle& bundle, std::span<const CheckIn> current,
                         std::size_t k, const DecodingParams& params) {
  PredictionResult r;
  r.user = user;
  r.candidates = bundle;
  auto& flags = stage(r.provenance, Role::kPredictor);

  PredictorInputs in;
  in.user = user;
  in.profile = context.profile;
  in.pattern = context.pattern;
  in.profile_candidates = bundle.profile_refined;
  in.pattern_candidates = bundle.pattern_refined;
  in.merged_candidates = bundle.merged;
  in.current = current;
  in.k = k;
  const auto prompt = build_predictor_prompt(templates, in, dataset);
  flags.attempted = true;
  std::string text;
  try {
    text = gateway.complete(prompt, params);
  } catch (const EmptyOutputError& e) {
    flags.empty_output = true;
    flags.error = e.what();
  } catch (const BackendError& e) {
    flags.backend_error = true;
    flags.error = e.what();
  }

  std::vector<PoiId> pool;
  std::unordered_set<PoiId> in_pool;
  auto extend = [&](std::span<const PoiId> ids) {
    for (PoiId id : ids)
      if (dataset.find_poi(id) != nullptr && in_pool.insert(id).second) pool.push_back(id);
  };
  extend(bundle.merged);
  extend(bundle.initial);
  extend(distinct_recent_first(current));

  auto parsed = parse_ranked_pois(text, [&](PoiId id) { return dataset.find_poi(id) != nullptr; }, k, pool);
  r.ranked = std::move(parsed.ids);
  flags.model_ids = parsed.from_model;
  flags.fallback_ids = parsed.from_fallback;
  flags.fallback = flags.failed() || parsed.from_fallback > 0;

  if (!r.ranked.empty() && !bundle.merged.empty()) {
    const bool inside = std::find(bundle.merged.begin(), bundle.merged.end(), r.ranked.front()) != bundle.merged.end();
    r.in_candidate = inside;
    r.out_of_candidate = !inside;
  }
  return r;
}

PredictionResult run_instance(const TrajectoryPair& pair, const Dataset& dataset, const VectorIndex& index,
                              Gateway& gateway, const RunConfig& config) {
  const auto& templates = templates_for(config);
  UserContext ctx;
  ctx.summaries_historical =
      run_tools(pair.historical, dataset, SummaryContext{pair.user, TrajectoryScope::kHistorical, config.top_n});
  ctx.summaries_current =
      run_tools(pair.current, dataset, SummaryContext{pair.user, TrajectoryScope::kCurrent, config.top_n});

  Provenance prov{};
  if (!config.no_profiler) {
    auto p = profile_user(gateway, templates, dataset, pair.user, ctx.summaries_historical, pair.historical,
                          config.decoding);
    auto m = mobility_pattern(gateway, templates, dataset, pair.user, ctx.summaries_current, pair.current,
                              config.decoding);
    ctx.profile = std::move(p.text);
    ctx.pattern = std::move(m.text);
    stage(prov, Role::kProfilerLong) = std::move(p.flags);
    stage(prov, Role::kProfilerShort) = std::move(m.flags);
  }

  CandidateBundle bundle;
  if (!config.no_forecaster && config.refine_k > 0) {
    bundle.initial = initial_candidates(index, pair.current, config.per_query_k, config.pool_cap);
    if (config.no_refine) {
      bundle.merged = bundle.initial;
    } else {
      auto h = refine_candidates(gateway, templates, dataset, Role::kForecasterProfile, pair.user, ctx.profile,
                                 pair.historical, bundle.initial, config.refine_k, config.decoding);
      auto c = refine_candidates(gateway, templates, dataset, Role::kForecasterPattern, pair.user, ctx.pattern,
                                 pair.current, bundle.initial, config.refine_k, config.decoding);
      bundle.profile_refined = std::move(h.ids);
      bundle.pattern_refined = std::move(c.ids);
      stage(prov, Role::kForecasterProfile) = std::move(h.flags);
      stage(prov, Role::kForecasterPattern) = std::move(c.flags);
      bundle.merged = merge_candidates(bundle.profile_refined, bundle.pattern_refined);
    }
  }

  auto result =
      predict(gateway, templates, dataset, pair.user, ctx, bundle, pair.current, config.predict_k, config.decoding);
  result.label = pair.target.poi;
  for (Role r : kAllRoles)
    if (r != Role::kPredictor) stage(result.provenance, r) = stage(prov, r);
  return result;
}

PipelineRun run_pipeline(const Dataset& dataset, std::span<const TrajectoryPair> pairs, const VectorIndex& index,
                         Gateway& gateway, const RunConfig& config) {
  config.validate();
  if (!config.no_forecaster && config.refine_k > 0 && index.empty())
    throw ConfigError("candidate retrieval needs a non-empty index");
  const auto started = std::chrono::steady_clock::now();

  std::vector<PredictionResult> results(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < pairs.size(); i = next.fetch_add(1)) {
      try {
        results[i] = run_instance(pairs[i], dataset, index, gateway, config);
      } catch (const std::exception& e) {
        PredictionResult failed;
        failed.user = pairs[i].user;
        failed.label = pairs[i].target.poi;
        failed.instance_error = failure_message(e);
        results[i] = std::move(failed);
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.threads, pairs.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }
  std::stable_sort(results.begin(), results.end(),
                   [](const PredictionResult& a, const PredictionResult& b) { return a.user < b.user; });

  const double wall_ms =
      std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

  json stage_failures = json::object();
  json stage_fallbacks = json::object();
  for (Role r : kAllRoles) {
    std::size_t failures = 0;
    std::size_t fallbacks = 0;
    for (const auto& res : results) {
      failures += stage(res.provenance, r).failed() ? 1 : 0;
      fallbacks += stage(res.provenance, r).fallback ? 1 : 0;
    }
    stage_failures[std::string(role_tag(r))] = failures;
    stage_fallbacks[std::string(role_tag(r))] = fallbacks;
  }
  std::size_t instance_failures = 0;
  for (const auto& res : results) instance_failures += res.failed() ? 1 : 0;

  const auto stats = gateway.stats();
  PipelineRun run;
  run.manifest = json{
      {"kind", "nextpoi.run"},
      {"config", config.to_json()},
      {"config_hash", config.hash()},
      {"dataset_hash", dataset.config_hash()},
      {"seed", config.seed},
      {"backend", gateway.backend_id()},
      {"embedder", index.manifest().embedder_id},
      {"template_version", templates_for(config).version()},
      {"instances", results.size()},
      {"instance_failures", instance_failures},
      {"stage_failures", stage_failures},
      {"stage_fallbacks", stage_fallbacks},
      {"gateway", {{"calls", stats.calls}, {"backend_errors", stats.backend_errors}, {"empty_outputs", stats.empty_outputs}}},
      {"threads", n_threads},
      {"wall_ms", wall_ms},
  };
  run.results = std::move(results);
  return run;
}

json result_to_json(const PredictionResult& r) {
  json prov = json::object();
  for (Role role : kAllRoles) prov[std::string(role_tag(role))] = flags_to_json(stage(r.provenance, role));
  return json{{"user", r.user},
              {"label", r.label},
              {"ranked", r.ranked},
              {"in_candidate", r.in_candidate},
              {"out_of_candidate", r.out_of_candidate},
              {"candidates",
               {{"initial", r.candidates.initial},
                {"profile_refined", r.candidates.profile_refined},
                {"pattern_refined", r.candidates.pattern_refined},
                {"merged", r.candidates.merged}}},
              {"provenance", prov},
              {"instance_error", r.instance_error}};
}

PredictionResult result_from_json(const json& j) {
  try {
    PredictionResult r;
    r.user = j.at("user").get<UserId>();
    r.label = j.at("label").get<PoiId>();
    r.ranked = j.at("ranked").get<std::vector<PoiId>>();
    r.in_candidate = j.at("in_candidate").get<bool>();
    r.out_of_candidate = j.at("out_of_candidate").get<bool>();
    const auto& c = j.at("candidates");
    r.candidates.initial = c.at("initial").get<std::vector<PoiId>>();
    r.candidates.profile_refined = c.at("profile_refined").get<std::vector<PoiId>>();
    r.candidates.pattern_refined = c.at("pattern_refined").get<std::vector<PoiId>>();
    r.candidates.merged = c.at("merged").get<std::vector<PoiId>>();
    const auto& prov = j.at("provenance");
    for (Role role : kAllRoles) stage(r.provenance, role) = flags_from_json(prov.at(std::string(role_tag(role))));
    r.instance_error = j.value("instance_error", std::string());
    return r;
  } catch (const json::exception& e) {
    throw DataError(fmt::format("malformed prediction record: {}", e.what()));
  }
}

std::string results_to_jsonl(std::span<const PredictionResult> results) {
  std::string out;
  for (const auto& r : results) {
    out += result_to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionResult> results_from_jsonl(std::string_view text) {
  std::vector<PredictionResult> out;
  std::size_t pos = 0;
  std::size_t line_no = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    const auto line = text.substr(pos, end - pos);
    ++line_no;
    pos = end + 1;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw DataError(fmt::format("results line {}: {}", line_no, e.what()));
    }
    out.push_back(result_from_json(j));
  }
  return out;
}

}  // namespace nextpoi
