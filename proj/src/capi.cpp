#include "nextpoi/nextpoi.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <string>

#include "nextpoi/commands.hpp"

struct nextpoi_config {
  nextpoi::RunConfig config;
};

namespace {

thread_local std::string g_last_error;

nextpoi_status status_of(nextpoi::ErrorCode code) {
  switch (code) {
    case nextpoi::ErrorCode::kConfig: return NEXTPOI_ERR_CONFIG;
    case nextpoi::ErrorCode::kBackend: return NEXTPOI_ERR_BACKEND;
    case nextpoi::ErrorCode::kInvariant: return NEXTPOI_ERR_INVARIANT;
    case nextpoi::ErrorCode::kIo: return NEXTPOI_ERR_IO;
    case nextpoi::ErrorCode::kData: return NEXTPOI_ERR_DATA;
    case nextpoi::ErrorCode::kDomain: return NEXTPOI_ERR_DOMAIN;
    default: return NEXTPOI_ERR_INTERNAL;
  }
}

char* dup(const std::string& s) {
  auto* p = static_cast<char*>(std::malloc(s.size() + 1));
  if (p == nullptr) throw std::bad_alloc();
  std::memcpy(p, s.c_str(), s.size() + 1);
  return p;
}

void emit(char** out, const nlohmann::json& j) {
  if (out != nullptr) *out = dup(j.dump(2));
}

std::string str(const char* s) { return s == nullptr ? std::string() : std::string(s); }

template <typename F>
nextpoi_status guarded(F&& f) {
  g_last_error.clear();
  try {
    f();
    return NEXTPOI_OK;
  } catch (const nextpoi::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const nlohmann::json::exception& e) {
    g_last_error = e.what();
    return NEXTPOI_ERR_CONFIG;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return NEXTPOI_ERR_INTERNAL;
  } catch (...) {
    g_last_error = "unknown error";
    return NEXTPOI_ERR_INTERNAL;
  }
}

void require(const void* p, const char* what) {
  if (p == nullptr) throw nextpoi::ConfigError(std::string(what) + " must not be NULL");
}

}  // namespace

extern "C" {

const char* nextpoi_version(void) { return "0.1.0"; }

const char* nextpoi_status_name(nextpoi_status status) {
  switch (status) {
    case NEXTPOI_OK: return "ok";
    case NEXTPOI_ERR_INTERNAL: return "internal error";
    case NEXTPOI_ERR_CONFIG: return "configuration error";
    case NEXTPOI_ERR_BACKEND: return "backend failure";
    case NEXTPOI_ERR_INVARIANT: return "invariant violation";
    case NEXTPOI_ERR_IO: return "i/o error";
    case NEXTPOI_ERR_DATA: return "data error";
    case NEXTPOI_ERR_DOMAIN: return "domain error";
  }
  return "unknown";
}

const char* nextpoi_last_error(void) { return g_last_error.c_str(); }

void nextpoi_string_free(char* s) { std::free(s); }

nextpoi_status nextpoi_config_create(const char* json, nextpoi_config** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    auto cfg = std::make_unique<nextpoi_config>();
    if (json != nullptr) cfg->config = nextpoi::RunConfig::from_json(nlohmann::json::parse(json));
    *out = cfg.release();
  });
}

nextpoi_status nextpoi_config_load(const char* path, nextpoi_config** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(nextpoi::read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
      throw nextpoi::ConfigError(std::string(path) + ": " + e.what());
    }
    auto cfg = std::make_unique<nextpoi_config>();
    cfg->config = nextpoi::RunConfig::from_json(j);
    *out = cfg.release();
  });
}

nextpoi_status nextpoi_config_patch(nextpoi_config* config, const char* json_patch) {
  return guarded([&] {
    require(config, "config");
    require(json_patch, "json_patch");
    auto j = config->config.to_json();
    j.merge_patch(nlohmann::json::parse(json_patch));
    config->config = nextpoi::RunConfig::from_json(j);
  });
}

nextpoi_status nextpoi_config_to_json(const nextpoi_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    emit(out, config->config.to_json());
  });
}

nextpoi_status nextpoi_config_hash(const nextpoi_config* config, char** out) {
  return guarded([&] {
    require(config, "config");
    require(out, "out");
    *out = dup(config->config.hash());
  });
}

void nextpoi_config_free(nextpoi_config* config) { delete config; }

nextpoi_status nextpoi_ingest(const nextpoi_config* config, const char* out_path, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(out_path, "out_path");
    emit(summary_json, nextpoi::cmd_ingest(config->config, out_path));
  });
}

nextpoi_status nextpoi_build_index(const nextpoi_config* config, const char* out_path, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(out_path, "out_path");
    emit(summary_json, nextpoi::cmd_build_index(config->config, out_path));
  });
}

nextpoi_status nextpoi_run(const nextpoi_config* config, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(out_dir, "out_dir");
    emit(summary_json, nextpoi::cmd_run(config->config, out_dir));
  });
}

nextpoi_status nextpoi_gen_rrf(const nextpoi_config* config, const char* out_dir, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(out_dir, "out_dir");
    emit(summary_json, nextpoi::cmd_gen_rrf(config->config, out_dir));
  });
}

nextpoi_status nextpoi_evaluate(const char* results_path, const char* expected_hash, int force, const char* out_path,
                                char** summary_json) {
  return guarded([&] {
    require(results_path, "results_path");
    emit(summary_json, nextpoi::cmd_evaluate(results_path, str(expected_hash), force != 0, str(out_path)));
  });
}

nextpoi_status nextpoi_analyze_runs(const char* candidate_path, const char* global_path, const char* name,
                                    const char* out_path, char** summary_json) {
  return guarded([&] {
    require(candidate_path, "candidate_path");
    require(global_path, "global_path");
    emit(summary_json,
         nextpoi::cmd_analyze_runs(candidate_path, global_path, name == nullptr ? "run" : name, str(out_path)));
  });
}

nextpoi_status nextpoi_analyze_rates(const char* rates_path, const char* out_path, char** summary_json) {
  return guarded([&] {
    require(rates_path, "rates_path");
    emit(summary_json, nextpoi::cmd_analyze_rates(rates_path, str(out_path)));
  });
}

nextpoi_status nextpoi_simulate(size_t configs, size_t trials, uint64_t seed, size_t threads, const char* csv_path,
                                char** summary_json) {
  return guarded([&] {
    nextpoi::SimulateOptions o;
    o.configs = configs;
    o.trials = trials;
    o.seed = seed;
    o.threads = threads == 0 ? 1 : threads;
    emit(summary_json, nextpoi::cmd_simulate(o, str(csv_path)));
  });
}

nextpoi_status nextpoi_sweep_k(const nextpoi_config* config, const char* axis, const size_t* values, size_t n_values,
                               const char* csv_path, char** summary_json) {
  return guarded([&] {
    require(config, "config");
    require(axis, "axis");
    if (n_values > 0) require(values, "values");
    std::vector<std::size_t> v(values, values + n_values);
    emit(summary_json, nextpoi::cmd_sweep_k(config->config, nextpoi::parse_sweep_axis(axis), v, str(csv_path)));
  });
}

nextpoi_status nextpoi_lower_bound(double p_global, double p_in, double p_out, double* out) {
  return guarded([&] {
    require(out, "out");
    *out = nextpoi::lower_bound(p_global, p_in, p_out);
  });
}

}  // extern "C"
