// Command-line front end; talks to the library only through nextpoi.h.
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nextpoi/nextpoi.h"

namespace {

using nlohmann::json;

int exit_code(nextpoi_status s) {
  switch (s) {
    case NEXTPOI_OK: return 0;
    case NEXTPOI_ERR_BACKEND: return 3;
    case NEXTPOI_ERR_INVARIANT: return 4;
    case NEXTPOI_ERR_INTERNAL: return 1;
    default: return 2;  // configuration, input files, data and domain problems
  }
}

struct Owned {
  char* p = nullptr;
  ~Owned() { nextpoi_string_free(p); }
  std::string str() const { return p == nullptr ? std::string() : std::string(p); }
};

struct ConfigHandle {
  nextpoi_config* p = nullptr;
  ~ConfigHandle() { nextpoi_config_free(p); }
};

int fail(nextpoi_status s) {
  std::cerr << "error (" << nextpoi_status_name(s) << "): " << nextpoi_last_error() << "\n";
  return exit_code(s);
}

// Flags shared by every command that needs a run configuration.
struct ConfigFlags {
  std::string config_path;
  std::optional<std::string> dataset, index, raw, format, column_map, filter_mode, backend, base_url, model,
      templates, audit_log, embedder;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> threads, refine_k, predict_k, per_query_k, pool_cap, window, min_user, min_poi, embed_dim;
  std::optional<double> fault_rate, max_bad;
  bool no_profiler = false, no_forecaster = false, no_refine = false, single_agent = false, lenient = false;
  std::vector<std::string> sets;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "Run configuration JSON");
    app->add_option("--dataset", dataset, "Preprocessed dataset (JSONL)");
    app->add_option("--index", index, "Vector index file (built in memory when omitted)");
    app->add_option("--seed", seed, "Seed for every random stream");
    app->add_option("--threads", threads, "Worker threads");
    app->add_option("--backend", backend, "mock | remote | stub")->check(CLI::IsMember({"mock", "remote", "stub"}));
    app->add_option("--base-url", base_url, "OpenAI-compatible base URL for the remote backend");
    app->add_option("--model", model, "Model name for the remote backend");
    app->add_option("--fault-rate", fault_rate, "Injected failure rate for the stub backend");
    app->add_option("--refine-k", refine_k, "Refined candidate set size K (0 disables candidates)");
    app->add_option("--predict-k", predict_k, "Prediction depth k");
    app->add_option("--kc", per_query_k, "Per-query retrieval depth K_C");
    app->add_option("--pool-cap", pool_cap, "Cap on the initial candidate pool (0 = none)");
    app->add_option("--window", window, "Current trajectory length L");
    app->add_option("--embedder", embedder, "hash | remote")->check(CLI::IsMember({"hash", "remote"}));
    app->add_option("--embed-dim", embed_dim, "Embedding dimension");
    app->add_option("--templates", templates, "Directory overriding the built-in prompt templates");
    app->add_option("--audit-log", audit_log, "Append every LLM exchange to this JSONL file");
    app->add_flag("--no-profiler", no_profiler, "Ablation: empty profile/pattern contexts");
    app->add_flag("--no-forecaster", no_forecaster, "Ablation: no candidates, global search");
    app->add_flag("--no-refine", no_refine, "Ablation: predictor sees the initial candidates");
    app->add_flag("--single-agent", single_agent, "Use the base model for every role");
    app->add_flag("--lenient", lenient, "Do not fail on dropped reverse samples");
    app->add_option("--set", sets, "Override any config key: dotted.key=value (value parsed as JSON if possible)");
  }

  void attach_ingest(CLI::App* app) {
    app->add_option("--input", raw, "Raw check-in file")->required();
    app->add_option("--format", format, "tsv_foursquare | csv_generic");
    app->add_option("--column-map", column_map, "Column map JSON for csv_generic");
    app->add_option("--min-user", min_user, "Minimum check-ins per user");
    app->add_option("--min-poi", min_poi, "Minimum check-ins per POI");
    app->add_option("--filter-mode", filter_mode, "iterative | single_pass");
    app->add_option("--max-bad", max_bad, "Abort when more than this fraction of rows is bad");
  }

  json patch() const {
    json p = json::object();
    auto put = [&](const char* key, const auto& opt) {
      if (opt) p[key] = *opt;
    };
    put("dataset_path", dataset);
    put("index_path", index);
    put("raw_path", raw);
    put("input_format", format);
    put("column_map_path", column_map);
    put("filter_mode", filter_mode);
    put("templates_dir", templates);
    put("audit_log", audit_log);
    put("seed", seed);
    put("threads", threads);
    put("refine_k", refine_k);
    put("predict_k", predict_k);
    put("per_query_k", per_query_k);
    put("pool_cap", pool_cap);
    put("window", window);
    put("min_user_checkins", min_user);
    put("min_poi_checkins", min_poi);
    put("max_bad_fraction", max_bad);
    if (backend) p["backend"]["kind"] = *backend;
    if (base_url) p["backend"]["base_url"] = *base_url;
    if (model) p["backend"]["model"] = *model;
    if (fault_rate) p["backend"]["fault_rate"] = *fault_rate;
    if (embedder) p["embedder"]["kind"] = *embedder;
    if (embed_dim) p["embedder"]["dimension"] = *embed_dim;
    if (no_profiler) p["no_profiler"] = true;
    if (no_forecaster) p["no_forecaster"] = true;
    if (no_refine) p["no_refine"] = true;
    if (single_agent) p["single_agent"] = true;
    if (lenient) p["strict"] = false;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw CLI::ValidationError("--set", "expected key=value, got " + s);
      json value;
      try {
        value = json::parse(s.substr(eq + 1));
      } catch (const json::exception&) {
        value = s.substr(eq + 1);
      }
      json* node = &p;
      std::string key = s.substr(0, eq);
      for (std::size_t dot; (dot = key.find('.')) != std::string::npos; key = key.substr(dot + 1))
        node = &(*node)[key.substr(0, dot)];
      (*node)[key] = value;
    }
    return p;
  }

  nextpoi_status make(ConfigHandle& handle) const {
    auto s = config_path.empty() ? nextpoi_config_create(nullptr, &handle.p)
                                 : nextpoi_config_load(config_path.c_str(), &handle.p);
    if (s != NEXTPOI_OK) return s;
    return nextpoi_config_patch(handle.p, patch().dump().c_str());
  }
};

std::vector<std::size_t> parse_values(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const auto v = std::stoull(item, &used);
    if (used != item.size()) throw CLI::ValidationError("--values", "not an integer: " + item);
    out.push_back(v);
  }
  return out;
}

void print_summary(const Owned& summary, const char* text_key = nullptr) {
  if (summary.p == nullptr) return;
  auto j = json::parse(summary.str());
  if (text_key != nullptr && j.contains(text_key)) {
    std::cout << j[text_key].get<std::string>();
    j.erase(text_key);
  }
  std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Next-POI multi-agent pipeline"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(nextpoi_version()));

  ConfigFlags flags;
  std::string out;

  auto* ingest = app.add_subcommand("ingest", "Parse and filter a raw check-in log");
  flags.attach(ingest);
  flags.attach_ingest(ingest);
  ingest->add_option("-o,--out", out, "Output dataset (JSONL)")->required();

  auto* build_index = app.add_subcommand("build-index", "Embed every POI and save the vector index");
  flags.attach(build_index);
  build_index->add_option("-o,--out", out, "Output index file")->required();

  auto* run = app.add_subcommand("run", "Full pipeline plus the paired global-search run");
  flags.attach(run);
  run->add_option("-o,--out-dir", out, "Output directory")->required();

  auto* gen_rrf = app.add_subcommand("gen-rrf", "Reverse-constructed training samples");
  flags.attach(gen_rrf);
  gen_rrf->add_option("-o,--out-dir", out, "Output directory")->required();

  std::string results, expect_hash, eval_config;
  bool force = false;
  auto* evaluate = app.add_subcommand("evaluate", "Ranking metrics for a results file");
  evaluate->add_option("--results", results, "results.jsonl")->required();
  evaluate->add_option("--config", eval_config, "Config whose hash the results must carry");
  evaluate->add_option("--expect-hash", expect_hash, "Config hash the results must carry");
  evaluate->add_flag("--force", force, "Evaluate even if config hashes disagree");
  evaluate->add_option("-o,--out", out, "Write the metrics report here");

  std::string rates, global_results, name = "run";
  auto* analyze = app.add_subcommand("analyze", "Candidate hit rates, posteriors and the error bound");
  analyze->add_option("--rates", rates, "Rates file with one entry per dataset");
  analyze->add_option("--results", results, "Candidate-run results.jsonl");
  analyze->add_option("--global", global_results, "Global-search results.jsonl");
  analyze->add_option("--name", name, "Column name for a run-based report");
  analyze->add_option("-o,--out", out, "Write the report JSON here");

  std::size_t sim_configs = 100, sim_trials = 100000, sim_threads = 1;
  std::uint64_t sim_seed = 0;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo check of the candidate-error algebra");
  simulate->add_option("--configs", sim_configs, "Random configurations");
  simulate->add_option("--trials", sim_trials, "Trials per configuration");
  simulate->add_option("--seed", sim_seed, "Seed");
  simulate->add_option("--threads", sim_threads, "Worker threads");
  simulate->add_option("-o,--out", out, "CSV output");

  std::string values_text = "0,5,10,15,20,25,30,40,50", axis = "k";
  auto* sweep = app.add_subcommand("sweep-k", "Metrics and hit rates across candidate sizes");
  flags.attach(sweep);
  sweep->add_option("--values", values_text, "Comma-separated values");
  sweep->add_option("--axis", axis, "k (refined size) or kc (retrieval depth)")->check(CLI::IsMember({"k", "kc"}));
  sweep->add_option("-o,--out", out, "CSV output")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    Owned summary;
    nextpoi_status s = NEXTPOI_OK;
    ConfigHandle cfg;

    if (*evaluate) {
      std::string expected = expect_hash;
      if (!eval_config.empty()) {
        if ((s = nextpoi_config_load(eval_config.c_str(), &cfg.p)) != NEXTPOI_OK) return fail(s);
        Owned h;
        if ((s = nextpoi_config_hash(cfg.p, &h.p)) != NEXTPOI_OK) return fail(s);
        expected = h.str();
      }
      s = nextpoi_evaluate(results.c_str(), expected.empty() ? nullptr : expected.c_str(), force ? 1 : 0,
                           out.empty() ? nullptr : out.c_str(), &summary.p);
      if (s != NEXTPOI_OK) return fail(s);
      auto j = json::parse(summary.str());
      std::cout << j["table"].get<std::string>();
      return 0;
    }
    if (*analyze) {
      if (!rates.empty()) {
        s = nextpoi_analyze_rates(rates.c_str(), out.empty() ? nullptr : out.c_str(), &summary.p);
      } else if (!results.empty() && !global_results.empty()) {
        s = nextpoi_analyze_runs(results.c_str(), global_results.c_str(), name.c_str(),
                                 out.empty() ? nullptr : out.c_str(), &summary.p);
      } else {
        std::cerr << "analyze needs --rates, or --results together with --global\n";
        return 2;
      }
      if (s != NEXTPOI_OK) return fail(s);
      const auto j = json::parse(summary.str());
      std::cout << j["table"].get<std::string>();
      return 0;
    }
    if (*simulate) {
      s = nextpoi_simulate(sim_configs, sim_trials, sim_seed, sim_threads, out.empty() ? nullptr : out.c_str(),
                           &summary.p);
      if (s != NEXTPOI_OK) return fail(s);
      print_summary(summary);
      return 0;
    }

    if ((s = flags.make(cfg)) != NEXTPOI_OK) return fail(s);
    if (*ingest) {
      s = nextpoi_ingest(cfg.p, out.c_str(), &summary.p);
    } else if (*build_index) {
      s = nextpoi_build_index(cfg.p, out.c_str(), &summary.p);
    } else if (*run) {
      s = nextpoi_run(cfg.p, out.c_str(), &summary.p);
    } else if (*gen_rrf) {
      s = nextpoi_gen_rrf(cfg.p, out.c_str(), &summary.p);
    } else if (*sweep) {
      const auto values = parse_values(values_text);
      s = nextpoi_sweep_k(cfg.p, axis.c_str(), values.data(), values.size(), out.c_str(), &summary.p);
      if (s == NEXTPOI_OK) {
        auto j = json::parse(summary.str());
        std::cout << j["csv"].get<std::string>();
        return 0;
      }
    }
    if (s != NEXTPOI_OK) return fail(s);
    print_summary(summary);
    return 0;
  } catch (const CLI::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
