/* C interface to the nextpoi library. All functions return a status code;
 * on failure nextpoi_last_error() describes the problem (thread-local).
 * Strings returned through char** out-parameters are owned by the caller and
 * must be released with nextpoi_string_free(). */
#ifndef NEXTPOI_H
#define NEXTPOI_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NEXTPOI_API __declspec(dllexport)
#else
#define NEXTPOI_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nextpoi_status {
  NEXTPOI_OK = 0,
  NEXTPOI_ERR_INTERNAL = 1,
  NEXTPOI_ERR_CONFIG = 2,
  NEXTPOI_ERR_BACKEND = 3,
  NEXTPOI_ERR_INVARIANT = 4,
  NEXTPOI_ERR_IO = 5,
  NEXTPOI_ERR_DATA = 6,
  NEXTPOI_ERR_DOMAIN = 7
} nextpoi_status;

typedef struct nextpoi_config nextpoi_config;

NEXTPOI_API const char* nextpoi_version(void);
NEXTPOI_API const char* nextpoi_status_name(nextpoi_status status);
NEXTPOI_API const char* nextpoi_last_error(void);
NEXTPOI_API void nextpoi_string_free(char* s);

/* Run configuration. `json` may be NULL for defaults. */
NEXTPOI_API nextpoi_status nextpoi_config_create(const char* json, nextpoi_config** out);
NEXTPOI_API nextpoi_status nextpoi_config_load(const char* path, nextpoi_config** out);
/* Applies a JSON merge patch (RFC 7386) and re-validates. */
NEXTPOI_API nextpoi_status nextpoi_config_patch(nextpoi_config* config, const char* json_patch);
NEXTPOI_API nextpoi_status nextpoi_config_to_json(const nextpoi_config* config, char** out);
NEXTPOI_API nextpoi_status nextpoi_config_hash(const nextpoi_config* config, char** out);
NEXTPOI_API void nextpoi_config_free(nextpoi_config* config);

/* Commands. `summary_json` (may be NULL) receives a JSON summary. */
NEXTPOI_API nextpoi_status nextpoi_ingest(const nextpoi_config* config, const char* out_path, char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_build_index(const nextpoi_config* config, const char* out_path,
                                               char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_run(const nextpoi_config* config, const char* out_dir, char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_gen_rrf(const nextpoi_config* config, const char* out_dir, char** summary_json);
/* `expected_hash` may be NULL; `out_path` may be NULL. */
NEXTPOI_API nextpoi_status nextpoi_evaluate(const char* results_path, const char* expected_hash, int force,
                                            const char* out_path, char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_analyze_runs(const char* candidate_path, const char* global_path, const char* name,
                                                const char* out_path, char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_analyze_rates(const char* rates_path, const char* out_path, char** summary_json);
NEXTPOI_API nextpoi_status nextpoi_simulate(size_t configs, size_t trials, uint64_t seed, size_t threads,
                                            const char* csv_path, char** summary_json);
/* axis: "k" (refine size) or "kc" (per-query retrieval depth). */
NEXTPOI_API nextpoi_status nextpoi_sweep_k(const nextpoi_config* config, const char* axis, const size_t* values,
                                           size_t n_values, const char* csv_path, char** summary_json);

/* Stand-alone formulas. */
NEXTPOI_API nextpoi_status nextpoi_lower_bound(double p_global, double p_in, double p_out, double* out);

#ifdef __cplusplus
}
#endif

#endif /* NEXTPOI_H */
