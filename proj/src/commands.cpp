#include "nextpoi/commands.hpp"

#include <cmath>
#include <filesystem>
#include <set>

#include <fmt/format.h>

namespace nextpoi {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string join(const fs::path& dir, const char* name) { return (dir / name).string(); }

json retry_json(const std::shared_ptr<RetryingClient>& client, const std::shared_ptr<FaultInjectingTransport>& fault) {
  json j = json::object();
  if (client) {
    const auto& s = client->stats();
    j["calls"] = s.calls.load();
    j["attempts"] = s.attempts.load();
    j["retries"] = s.retries.load();
    j["terminal_failures"] = s.terminal_failures.load();
    j["max_attempts_seen"] = s.max_attempts_seen.load();
  }
  if (fault) {
    j["injected_failures"] = fault->injected_failures();
    j["injected_terminal_failures"] = fault->terminal_failures();
  }
  return j;
}

std::size_t flagged_calls(std::span<const PredictionResult> results) {
  std::size_t n = 0;
  for (const auto& r : results)
    for (Role role : kAllRoles) n += stage(r.provenance, role).backend_error ? 1 : 0;
  return n;
}

void check_hashes(const std::vector<std::string>& hashes, const std::string& path) {
  const std::set<std::string> distinct(hashes.begin(), hashes.end());
  if (distinct.size() > 1) throw ConfigError(fmt::format("{} mixes results from {} configurations", path, distinct.size()));
}

}  // namespace

Workspace load_workspace(const RunConfig& config, bool need_index) {
  if (config.dataset_path.empty()) throw ConfigError("dataset_path is not set");
  Workspace ws;
  ws.dataset = load_dataset(config.dataset_path);
  ws.split = split_trajectories(ws.dataset, config.window,
                                config.min_length == 0 ? std::nullopt : std::optional<std::size_t>(config.min_length));
  if (ws.split.pairs.empty()) throw DataError("no user has enough check-ins for a trajectory split");
  if (!need_index) return ws;
  if (config.index_path.empty()) {
    auto embedder = make_embedder(config);
    ws.index = VectorIndex::build(ws.dataset.pois, *embedder);
    ws.index_built_in_memory = true;
  } else {
    ws.index = VectorIndex::load(config.index_path);
  }
  for (const auto& p : ws.dataset.pois)
    if (!ws.index.row_of(p.id)) throw ConfigError(fmt::format("index has no vector for POI {}", p.id));
  return ws;
}

std::string results_file_contents(std::span<const PredictionResult> results, const std::string& config_hash) {
  std::string out;
  for (const auto& r : results) {
    auto j = result_to_json(r);
    j["config_hash"] = config_hash;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::vector<PredictionResult> read_results_file(const std::string& path, std::vector<std::string>* hashes) {
  const auto text = read_text_file(path);
  if (hashes != nullptr) {
    std::size_t pos = 0;
    while (pos < text.size()) {
      auto end = text.find('\n', pos);
      if (end == std::string::npos) end = text.size();
      const auto line = std::string_view(text).substr(pos, end - pos);
      pos = end + 1;
      if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
      try {
        hashes->push_back(json::parse(line).value("config_hash", std::string()));
      } catch (const json::exception& e) {
        throw DataError(fmt::format("{}: {}", path, e.what()));
      }
    }
  }
  return results_from_jsonl(text);
}

json cmd_ingest(const RunConfig& config, const std::string& out_path) {
  if (config.raw_path.empty()) throw ConfigError("raw_path is not set");
  IngestOptions opts;
  opts.format = parse_input_format(config.input_format);
  opts.max_bad_fraction = config.max_bad_fraction;
  if (!config.column_map_path.empty()) opts.columns = parse_column_map(read_text_file(config.column_map_path));
  const auto log = ingest_checkins(config.raw_path, opts);
  const auto ds = preprocess(log, config.min_user_checkins, config.min_poi_checkins,
                             config.filter_mode == "iterative" ? FilterMode::kIterative : FilterMode::kSinglePass);
  save_dataset(ds, out_path);
  const auto& r = log.report;
  json summary{{"kind", "nextpoi.ingest"},
               {"config_hash", config.hash()},
               {"dataset_hash", ds.config_hash()},
               {"raw", {{"rows", r.rows},
                        {"accepted", r.accepted},
                        {"malformed", r.malformed},
                        {"rejected", r.rejected},
                        {"users", r.users},
                        {"pois", r.pois},
                        {"user_ids_remapped", r.user_ids_remapped},
                        {"poi_ids_remapped", r.poi_ids_remapped},
                        {"first_errors", r.first_errors}}},
               {"filtered", {{"users", ds.users().size()},
                             {"pois", ds.pois.size()},
                             {"checkins", ds.checkins.size()},
                             {"iterations", ds.filter.iterations},
                             {"removed_checkins", ds.filter.removed_checkins}}},
               {"output", out_path}};
  write_text_file(out_path + ".manifest.json", summary.dump(2) + "\n");
  return summary;
}

json cmd_build_index(const RunConfig& config, const std::string& out_path) {
  if (config.dataset_path.empty()) throw ConfigError("dataset_path is not set");
  const auto ds = load_dataset(config.dataset_path);
  auto embedder = make_embedder(config);
  const auto index = VectorIndex::build(ds.pois, *embedder);
  index.save(out_path);
  return json{{"kind", "nextpoi.index"},
              {"config_hash", config.hash()},
              {"embedder", index.manifest().embedder_id},
              {"dimension", index.dimension()},
              {"count", index.size()},
              {"output", out_path}};
}

json cmd_run(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  const bool candidates = !config.no_forecaster && config.refine_k > 0;
  auto ws = load_workspace(config, candidates);
  const auto hash = config.hash();
  const fs::path dir(out_dir);

  std::shared_ptr<FaultInjectingTransport> fault;
  std::shared_ptr<RetryingClient> client;
  Gateway gateway(make_backend(config, &fault, &client), config.audit_log);

  auto main_run = run_pipeline(ws.dataset, ws.split.pairs, ws.index, gateway, config);
  main_run.manifest["excluded_users"] = ws.split.excluded.size();
  main_run.manifest["index_built_in_memory"] = ws.index_built_in_memory;
  main_run.manifest["flagged_backend_calls"] = flagged_calls(main_run.results);
  write_text_file(join(dir, "results.jsonl"), results_file_contents(main_run.results, hash));

  // The global-search posterior comes from a dedicated run without candidates.
  PipelineRun global_run;
  const std::vector<PredictionResult>* global_results = &main_run.results;
  if (candidates) {
    RunConfig global_config = config;
    global_config.no_forecaster = true;
    global_run = run_pipeline(ws.dataset, ws.split.pairs, ws.index, gateway, global_config);
    global_run.manifest["flagged_backend_calls"] = flagged_calls(global_run.results);
    write_text_file(join(dir, "global_results.jsonl"), results_file_contents(global_run.results, hash));
    write_text_file(join(dir, "global_manifest.json"), global_run.manifest.dump(2) + "\n");
    global_results = &global_run.results;
  }
  main_run.manifest["transport"] = retry_json(client, fault);
  write_text_file(join(dir, "manifest.json"), main_run.manifest.dump(2) + "\n");

  auto metrics = evaluate(main_run.results);
  metrics.config_hash = hash;
  write_text_file(join(dir, "metrics.json"), metrics.to_json().dump(2) + "\n");
  write_text_file(join(dir, "metrics.txt"), metrics.render_table());

  const auto report = build_report("run", main_run.results, *global_results);
  auto report_json = report.to_json();
  report_json["config_hash"] = hash;
  write_text_file(join(dir, "hit_rate_report.json"), report_json.dump(2) + "\n");
  write_text_file(join(dir, "hit_rate_report.txt"), render_report_table(std::span(&report, 1)));

  json m = json::object();
  for (const auto& [n, v] : metrics.metrics) m[n] = v;
  return json{{"kind", "nextpoi.run"},
              {"config_hash", hash},
              {"instances", main_run.results.size()},
              {"excluded_users", ws.split.excluded.size()},
              {"instance_failures", main_run.manifest["instance_failures"]},
              {"metrics", m},
              {"verdict_line", report.verdict_line()},
              {"transport", main_run.manifest["transport"]},
              {"output_dir", out_dir}};
}

json cmd_gen_rrf(const RunConfig& config, const std::string& out_dir) {
  config.validate();
  auto ws = load_workspace(config, true);
  Gateway gateway(make_backend(config), config.audit_log);
  const auto em = emit_samples(ws.dataset, ws.split.pairs, ws.index, gateway, config, out_dir);
  return em.manifest;
}

json cmd_evaluate(const std::string& results_path, const std::string& expected_hash, bool force,
                  const std::string& out_path) {
  std::vector<std::string> hashes;
  const auto results = read_results_file(results_path, &hashes);
  if (!force) {
    check_hashes(hashes, results_path);
    if (!expected_hash.empty() && !hashes.empty() && hashes.front() != expected_hash)
      throw ConfigError(fmt::format("results were produced by config {} but {} was expected (use --force)",
                                    hashes.front(), expected_hash));
  }
  auto report = evaluate(results);
  report.config_hash = hashes.empty() ? std::string() : hashes.front();
  auto j = report.to_json();
  if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
  j["table"] = report.render_table();
  return j;
}

json cmd_analyze_runs(const std::string& candidate_path, const std::string& global_path, const std::string& name,
                      const std::string& out_path) {
  std::vector<std::string> hc, hg;
  const auto cand = read_results_file(candidate_path, &hc);
  const auto glob = read_results_file(global_path, &hg);
  check_hashes(hc, candidate_path);
  check_hashes(hg, global_path);
  const auto report = build_report(name, cand, glob);
  auto j = report.to_json();
  if (!hc.empty()) j["config_hash"] = hc.front();
  if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
  j["table"] = render_report_table(std::span(&report, 1));
  return j;
}

json cmd_analyze_rates(const std::string& rates_path, const std::string& out_path) {
  json rates;
  try {
    rates = json::parse(read_text_file(rates_path));
  } catch (const json::exception& e) {
    throw ConfigError(fmt::format("{}: {}", rates_path, e.what()));
  }
  const auto reports = reports_from_rates_json(rates);
  json arr = json::array();
  for (const auto& r : reports) arr.push_back(r.to_json());
  json j{{"kind", "nextpoi.hit_rate_reports"}, {"reports", arr}};
  if (!out_path.empty()) write_text_file(out_path, j.dump(2) + "\n");
  j["table"] = render_report_table(reports);
  return j;
}

json cmd_simulate(const SimulateOptions& options, const std::string& csv_path) {
  if (options.configs == 0 || options.trials == 0) throw ConfigError("configs and trials must be >= 1");
  const auto configs = random_sim_configs(options.configs, options.seed);
  const auto results = simulate_many(configs, options.trials, options.seed, options.threads);
  std::size_t decisive = 0, agree = 0;
  double max_closed_form_gap = 0.0;
  for (const auto& r : results) {
    const double diff = r.empirical.error_global - r.empirical.error_with_candidate;
    const double se = std::sqrt(r.stderr_global * r.stderr_global + r.stderr_with_candidate * r.stderr_with_candidate);
    const double theo_diff = r.theoretical.error_global - r.theoretical.error_with_candidate;
    if (std::abs(theo_diff) > 3.0 * se) {
      ++decisive;
      const bool bound_verdict = r.lower_bound && r.config.hit > *r.lower_bound;
      agree += ((diff > 0.0) == bound_verdict) ? 1 : 0;
    }
    const auto closed = error_decomposition(r.config.hit, r.config.p_in, r.config.p_out, r.config.p_global);
    max_closed_form_gap = std::max({max_closed_form_gap, std::abs(closed.error_global - r.theoretical.error_global),
                                    std::abs(closed.error_with_candidate - r.theoretical.error_with_candidate)});
  }
  json summary{{"kind", "nextpoi.simulate"},
                {"configs", results.size()},
                {"trials", options.trials},
                {"seed", options.seed},
                {"decisive_configs", decisive},
                {"verdict_agreements", agree},
                {"max_closed_form_gap", max_closed_form_gap},
                {"output", csv_path}};
  if (!csv_path.empty()) {
    write_text_file(csv_path, simulation_csv(results));
    write_text_file(csv_path + ".manifest.json", summary.dump(2) + "\n");
  }
  return summary;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "k" || name == "refine_k") return SweepAxis::kRefineK;
  if (name == "kc" || name == "per_query_k") return SweepAxis::kPerQueryK;
  throw ConfigError(fmt::format("unknown sweep axis '{}' (expected k or kc)", name));
}

json cmd_sweep_k(const RunConfig& config, SweepAxis axis, const std::vector<std::size_t>& values,
                 const std::string& csv_path) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  config.validate();
  const auto ws = load_workspace(config, true);
  std::string csv =
      "axis,value,instances,HR@5,HR@10,NDCG@5,NDCG@10,MRR,hit_initial,hit_profile,hit_pattern,hit_merged\n";
  json rows = json::array();
  for (auto v : values) {
    RunConfig c = config;
    if (axis == SweepAxis::kRefineK) {
      c.refine_k = v;
    } else {
      if (v == 0) throw ConfigError("per_query_k values must be >= 1");
      c.per_query_k = v;
      c.pool_cap = 0;
    }
    Gateway gateway(make_backend(c), c.audit_log);
    const auto run = run_pipeline(ws.dataset, ws.split.pairs, ws.index, gateway, c);
    const auto m = evaluate(run.results);
    std::array<double, 4> hits{};
    for (auto s : kAllStages) hits[static_cast<std::size_t>(s)] = *hit_rate(run.results, s).value;
    csv += fmt::format("{},{},{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f}\n",
                       axis == SweepAxis::kRefineK ? "k" : "kc", v, run.results.size(), m.at("HR@5"), m.at("HR@10"),
                       m.at("NDCG@5"), m.at("NDCG@10"), m.at("MRR"), hits[0], hits[1], hits[2], hits[3]);
    rows.push_back({{"value", v}, {"HR@10", m.at("HR@10")}, {"hit_initial", hits[0]}, {"hit_merged", hits[3]}});
  }
  json summary{{"kind", "nextpoi.sweep"},
                {"config", config.to_json()},
                {"config_hash", config.hash()},
                {"axis", axis == SweepAxis::kRefineK ? "k" : "kc"},
                {"rows", rows},
                {"output", csv_path}};
  if (!csv_path.empty()) {
    write_text_file(csv_path, csv);
    write_text_file(csv_path + ".manifest.json", summary.dump(2) + "\n");
  }
  summary["csv"] = csv;
  return summary;
}

}  // namespace nextpoi
