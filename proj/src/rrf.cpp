#include "nextpoi/rrf.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <filesystem>
#include <limits>
#include <thread>
#include <unordered_set>

#include <fmt/format.h>

namespace nextpoi {
namespace {

using nlohmann::json;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
  return out;
}

bool is_word(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

// Whole-token containment: the match may not be glued to letters/digits, and a
// numeric token may not be preceded by '-' or '.' nor followed by a digit.
bool contains_token(const std::string& haystack, const std::string& needle, bool numeric) {
  if (needle.empty()) return false;
  for (std::size_t pos = haystack.find(needle); pos != std::string::npos; pos = haystack.find(needle, pos + 1)) {
    const char before = pos == 0 ? ' ' : haystack[pos - 1];
    const std::size_t end = pos + needle.size();
    const char after = end >= haystack.size() ? ' ' : haystack[end];
    bool ok = !is_word(before) && !is_word(after);
    if (numeric && needle.front() != '-') ok = ok && before != '-';
    if (numeric) ok = ok && before != '.';
    if (ok) return true;
  }
  return false;
}

std::string ids_line(std::string_view prefix, std::span<const PoiId> ids) {
  std::string out(prefix);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    out += i == 0 ? " " : ", ";
    out += std::to_string(ids[i]);
  }
  return out;
}

DecodingParams attempt_params(const ReverseOptions& o, int attempt) {
  DecodingParams p = o.decoding;
  if (attempt > 0) p.temperature = o.retry_temperature;
  return p;
}

std::string call(Gateway& gateway, const PromptRecord& prompt, const DecodingParams& params, StageFlags& flags) {
  flags.attempted = true;
  try {
    return gateway.complete(prompt, params);
  } catch (const EmptyOutputError& e) {
    flags.empty_output = true;
    flags.error = e.what();
  } catch (const BackendError& e) {
    flags.backend_error = true;
    flags.error = e.what();
  }
  return {};
}

json flags_json(const StageFlags& f) {
  return json{{"backend_error", f.backend_error}, {"empty_output", f.empty_output}, {"fallback", f.fallback},
              {"error", f.error}};
}

ReverseOptions reverse_options(const RunConfig& config) {
  ReverseOptions o;
  o.max_retries = config.rrf_max_retries;
  o.profile_threshold = config.rrf_profile_threshold;
  o.retry_temperature = config.rrf_retry_temperature;
  o.decoding = config.decoding;
  o.seed = config.seed;
  return o;
}

}  // namespace

double alignment_score(std::span<const PoiId> candidates, PoiId label, std::size_t K) {
  if (K == 0) return 0.0;
  const auto it = std::find(candidates.begin(), candidates.end(), label);
  if (it == candidates.end()) return 0.0;
  const auto rank = static_cast<double>(it - candidates.begin()) + 1.0;
  return std::clamp(1.0 - (rank - 1.0) / static_cast<double>(K), 0.0, 1.0);
}

double alignment_score(std::string_view text, const PoiRecord& label) {
  const auto hay = lower(text);
  std::size_t total = 0;
  std::size_t found = 0;
  if (!label.category.empty()) {
    ++total;
    found += contains_token(hay, lower(label.category), false) ? 1 : 0;
  }
  for (double v : {label.lat, label.lon}) {
    ++total;
    found += contains_token(hay, fmt::format("{:.2f}", v), true) ? 1 : 0;
  }
  return static_cast<double>(found) / static_cast<double>(total);
}

std::vector<PoiId> inject_label(std::vector<PoiId> candidates, PoiId label, std::size_t K, std::uint64_t seed) {
  if (K == 0) throw ConfigError("K must be >= 1");
  candidates.erase(std::remove(candidates.begin(), candidates.end(), label), candidates.end());
  if (candidates.size() > K - 1) candidates.resize(K - 1);
  const std::size_t slots = std::min<std::size_t>(5, candidates.size() + 1);
  const auto pos = static_cast<std::size_t>(unit_interval(splitmix64(seed)) * static_cast<double>(slots));
  candidates.insert(candidates.begin() + static_cast<std::ptrdiff_t>(std::min(pos, slots - 1)), label);
  return candidates;
}

ReverseText reverse_text(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                         const TrajectoryPair& pair, const SummarySet& summaries, const ReverseOptions& options) {
  const auto& label = dataset.poi(pair.target.poi);
  const auto& trajectory = role == Role::kProfilerLong ? pair.historical : pair.current;
  ReverseText best;
  best.alignment = -1.0;
  for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
    auto out = role == Role::kProfilerLong
                   ? profile_user(gateway, templates, dataset, pair.user, summaries, trajectory,
                                  attempt_params(options, attempt), &label)
                   : mobility_pattern(gateway, templates, dataset, pair.user, summaries, trajectory,
                                      attempt_params(options, attempt), &label);
    const double score = alignment_score(out.text, label);
    if (score > best.alignment) {
      best.text = std::move(out.text);
      best.alignment = score;
      best.flags = std::move(out.flags);
    }
    best.attempts = attempt + 1;
    if (best.alignment >= options.profile_threshold) break;
  }
  best.below_threshold = best.alignment < options.profile_threshold;
  return best;
}

ReverseList reverse_list(Gateway& gateway, const TemplateSet& templates, const Dataset& dataset, Role role,
                         const TrajectoryPair& pair, std::string_view context, std::span<const PoiId> initial,
                         std::size_t K, const ReverseOptions& options) {
  if (K == 0) throw ConfigError("K must be >= 1");
  const PoiId label = pair.target.poi;
  const auto& target = dataset.poi(label);
  const auto& trajectory = role == Role::kForecasterProfile ? pair.historical : pair.current;
  std::unordered_set<PoiId> universe(initial.begin(), initial.end());
  const bool label_listed = universe.count(label) > 0;
  universe.insert(label);
  const std::size_t k = std::min(K, initial.size() + (label_listed ? 0 : 1));

  ReverseList out;
  bool model_hit = false;
  if (!initial.empty()) {
    ForecasterInputs in;
    in.user = pair.user;
    in.context = context;
    in.trajectory = trajectory;
    in.candidates = initial;
    in.k = k;
    in.target = &target;
    const auto prompt = build_forecaster_prompt(templates, role, in, dataset);
    for (int attempt = 0; attempt <= options.max_retries; ++attempt) {
      StageFlags flags;
      const auto text = call(gateway, prompt, attempt_params(options, attempt), flags);
      auto parsed = parse_ranked_pois(text, [&](PoiId id) { return universe.count(id) > 0; }, k, initial);
      flags.model_ids = parsed.from_model;
      flags.fallback_ids = parsed.from_fallback;
      flags.fallback = flags.failed() || parsed.from_fallback > 0;
      out.ids = std::move(parsed.ids);
      out.flags = std::move(flags);
      out.attempts = attempt + 1;
      // Padding from the initial list does not count as the model naming the label.
      const auto model_end = out.ids.begin() + static_cast<std::ptrdiff_t>(std::min(out.flags.model_ids, out.ids.size()));
      model_hit = std::find(out.ids.begin(), model_end, label) != model_end;
      if (model_hit) break;
    }
  }
  if (!model_hit) {
    std::erase(out.ids, label);
    const auto seed = derive_seed(options.seed, static_cast<std::uint64_t>(pair.user), static_cast<std::uint64_t>(role));
    out.ids = inject_label(std::move(out.ids), label, K, seed);
    out.injected = true;
  }
  out.alignment = alignment_score(out.ids, label, K);
  return out;
}

json sample_to_json(const RrfSample& s) {
  return json{{"messages",
               json::array({{{"role", "system"}, {"content", s.system}},
                            {{"role", "user"}, {"content", s.user_prompt}},
                            {{"role", "assistant"}, {"content", s.assistant_target}}})},
              {"role_tag", std::string(role_tag(s.role))},
              {"user_id", s.user},
              {"label", s.label},
              {"alignment", s.alignment},
              {"meta", s.meta}};
}

std::string check_sample(const RrfSample& s) {
  if (s.system.empty() || s.user_prompt.empty() || s.assistant_target.empty()) return "empty message";
  if (!(s.alignment >= 0.0 && s.alignment <= 1.0)) return "alignment outside [0, 1]";
  if (s.role == Role::kForecasterProfile || s.role == Role::kForecasterPattern || s.role == Role::kPredictor) {
    const auto parsed =
        parse_ranked_pois(s.assistant_target, [](PoiId) { return true; }, std::numeric_limits<std::size_t>::max(), {});
    if (s.role == Role::kPredictor) {
      if (parsed.ids.empty() || parsed.ids.front() != s.label) return "predictor target does not start with the label";
    } else if (std::find(parsed.ids.begin(), parsed.ids.end(), s.label) == parsed.ids.end()) {
      return "forecaster target does not contain the label";
    }
  }
  return {};
}

std::vector<RrfSample> build_samples(const TrajectoryPair& pair, const Dataset& dataset, const VectorIndex& index,
                                     Gateway& gateway, const RunConfig& config) {
  if (config.refine_k == 0) throw ConfigError("reverse sample construction needs refine_k >= 1");
  const auto& templates = templates_for(config);
  const auto options = reverse_options(config);
  const PoiId label = pair.target.poi;

  const auto sum_h =
      run_tools(pair.historical, dataset, SummaryContext{pair.user, TrajectoryScope::kHistorical, config.top_n});
  const auto sum_c = run_tools(pair.current, dataset, SummaryContext{pair.user, TrajectoryScope::kCurrent, config.top_n});

  const auto p_pos = reverse_text(gateway, templates, dataset, Role::kProfilerLong, pair, sum_h, options);
  const auto m_pos = reverse_text(gateway, templates, dataset, Role::kProfilerShort, pair, sum_c, options);

  const auto initial = initial_candidates(index, pair.current, config.per_query_k, config.pool_cap);
  const bool label_in_initial = std::find(initial.begin(), initial.end(), label) != initial.end();
  const auto ch_pos = reverse_list(gateway, templates, dataset, Role::kForecasterProfile, pair, p_pos.text, initial,
                                   config.refine_k, options);
  const auto cc_pos = reverse_list(gateway, templates, dataset, Role::kForecasterPattern, pair, m_pos.text, initial,
                                   config.refine_k, options);
  const auto merged = merge_candidates(ch_pos.ids, cc_pos.ids);

  std::vector<RrfSample> samples;
  auto add = [&](Role role, const PromptRecord& prompt, std::string target_text, double alignment, json meta) {
    RrfSample s;
    s.role = role;
    s.user = pair.user;
    s.label = label;
    s.system = prompt.system;
    s.user_prompt = prompt.user;
    s.assistant_target = std::move(target_text);
    s.alignment = alignment;
    s.meta = std::move(meta);
    samples.push_back(std::move(s));
  };

  // Inputs are the ordinary (label-free) prompts; targets are the label-consistent outputs.
  for (const auto* rt : {&p_pos, &m_pos}) {
    const Role role = rt == &p_pos ? Role::kProfilerLong : Role::kProfilerShort;
    ProfilerInputs in;
    in.user = pair.user;
    in.summaries = rt == &p_pos ? &sum_h : &sum_c;
    in.trajectory = rt == &p_pos ? std::span<const CheckIn>(pair.historical) : std::span<const CheckIn>(pair.current);
    add(role, build_profiler_prompt(templates, role, in, dataset), rt->text, rt->alignment,
        json{{"attempts", rt->attempts}, {"below_threshold", rt->below_threshold}, {"flags", flags_json(rt->flags)}});
  }
  for (const auto* rl : {&ch_pos, &cc_pos}) {
    const Role role = rl == &ch_pos ? Role::kForecasterProfile : Role::kForecasterPattern;
    ForecasterInputs in;
    in.user = pair.user;
    in.context = rl == &ch_pos ? p_pos.text : m_pos.text;
    in.trajectory = rl == &ch_pos ? std::span<const CheckIn>(pair.historical) : std::span<const CheckIn>(pair.current);
    in.candidates = initial;
    in.k = config.refine_k;
    add(role, build_forecaster_prompt(templates, role, in, dataset), ids_line("CANDIDATES:", rl->ids), rl->alignment,
        json{{"attempts", rl->attempts},
             {"injected", rl->injected},
             {"label_in_initial", label_in_initial},
             {"flags", flags_json(rl->flags)}});
  }

  // Predictor: the model's ranking over the positive contexts with the label moved to the head.
  PredictorInputs in;
  in.user = pair.user;
  in.profile = p_pos.text;
  in.pattern = m_pos.text;
  in.profile_candidates = ch_pos.ids;
  in.pattern_candidates = cc_pos.ids;
  in.merged_candidates = merged;
  in.current = pair.current;
  in.k = config.predict_k;
  const auto prompt = build_predictor_prompt(templates, in, dataset);
  StageFlags flags;
  const auto text = call(gateway, prompt, config.decoding, flags);
  auto parsed = parse_ranked_pois(text, [&](PoiId id) { return dataset.find_poi(id) != nullptr; }, config.predict_k,
                                  merged);
  auto ranked = std::move(parsed.ids);
  const bool model_top1 = !ranked.empty() && ranked.front() == label;
  ranked.erase(std::remove(ranked.begin(), ranked.end(), label), ranked.end());
  ranked.insert(ranked.begin(), label);
  if (ranked.size() > config.predict_k) ranked.resize(config.predict_k);
  flags.fallback = flags.failed() || parsed.from_fallback > 0;
  add(Role::kPredictor, prompt, ids_line("PREDICTIONS:", ranked), alignment_score(ranked, label, config.predict_k),
      json{{"model_top1", model_top1}, {"flags", flags_json(flags)}});
  return samples;
}

RrfEmission emit_samples(const Dataset& dataset, std::span<const TrajectoryPair> pairs, const VectorIndex& index,
                         Gateway& gateway, const RunConfig& config, const std::string& out_dir) {
  config.validate();
  if (index.empty()) throw ConfigError("reverse sample construction needs a non-empty index");
  if (config.refine_k == 0) throw ConfigError("reverse sample construction needs refine_k >= 1");

  std::vector<std::vector<RrfSample>> per_pair(pairs.size());
  std::vector<std::string> errors(pairs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next.fetch_add(1); i < pairs.size(); i = next.fetch_add(1)) {
      try {
        per_pair[i] = build_samples(pairs[i], dataset, index, gateway, config);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(config.threads, pairs.size()));
  {
    std::vector<std::jthread> pool;
    for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
    worker();
  }

  RrfEmission em;
  em.instances = pairs.size();
  std::map<Role, std::string> files;
  std::string combined;
  json per_role = json::object();
  json violations = json::array();
  std::size_t injected = 0;
  std::size_t below_threshold = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (!errors[i].empty()) {
      ++em.failed_instances;
      violations.push_back({{"user_id", pairs[i].user}, {"error", errors[i]}});
      continue;
    }
    for (const auto& s : per_pair[i]) {
      const auto problem = check_sample(s);
      if (!problem.empty()) {
        ++em.dropped;
        violations.push_back({{"user_id", s.user}, {"role_tag", std::string(role_tag(s.role))}, {"error", problem}});
        continue;
      }
      const auto line = sample_to_json(s).dump() + "\n";
      files[s.role] += line;
      combined += line;
      ++em.emitted;
      injected += s.meta.value("injected", false) ? 1 : 0;
      below_threshold += s.meta.value("below_threshold", false) ? 1 : 0;
    }
  }

  const std::filesystem::path dir(out_dir);
  for (Role r : kAllRoles) {
    const auto tag = std::string(role_tag(r));
    write_text_file((dir / (tag + ".jsonl")).string(), files[r]);
    per_role[tag] = static_cast<std::size_t>(std::count(files[r].begin(), files[r].end(), '\n'));
  }
  write_text_file((dir / "all.jsonl").string(), combined);

  em.manifest = json{{"kind", "nextpoi.rrf"},
                     {"config_hash", config.hash()},
                     {"seed", config.seed},
                     {"backend", gateway.backend_id()},
                     {"template_version", templates_for(config).version()},
                     {"strict", config.strict},
                     {"instances", em.instances},
                     {"samples", em.emitted},
                     {"per_role", per_role},
                     {"dropped", em.dropped},
                     {"failed_instances", em.failed_instances},
                     {"invariant_violations", em.dropped},
                     {"injected_lists", injected},
                     {"profiles_below_threshold", below_threshold},
                     {"violations", violations}};
  write_text_file((dir / "manifest.json").string(), em.manifest.dump(2) + "\n");

  if (config.strict && (em.dropped > 0 || em.failed_instances > 0))
    throw InvariantError(fmt::format("{} samples dropped, {} instances failed (strict mode)", em.dropped,
                                     em.failed_instances));
  return em;
}

}  // namespace nextpoi
