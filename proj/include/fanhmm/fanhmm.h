/*
 * fanhmm: feedback-augmented non-homogeneous hidden Markov models for
 * categorical panel sequences.
 *
 * C interface. Handles are opaque; every call returns a status code and the
 * message of the last failure on the calling thread is available through
 * fanhmm_last_error(). Configs and results travel as UTF-8 JSON text.
 * Strings returned through char** must be released with fanhmm_string_free.
 */
#ifndef FANHMM_FANHMM_H
#define FANHMM_FANHMM_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(FANHMM_BUILDING_LIBRARY)
#define FANHMM_API __attribute__((visibility("default")))
#else
#define FANHMM_API
#endif

typedef enum fanhmm_status {
  FANHMM_OK = 0,
  FANHMM_ERR_VALIDATION = 1,
  FANHMM_ERR_SHAPE = 2,
  FANHMM_ERR_INVALID_DIMENSION = 3,
  FANHMM_ERR_INVALID_GAMMA = 4,
  FANHMM_ERR_DEGENERATE_PROBABILITY = 5,
  FANHMM_ERR_UNSUPPORTED = 6,
  FANHMM_ERR_IO = 7,
  FANHMM_ERR_NUMERIC = 8,
  FANHMM_ERR_COMPUTE = 9,
  FANHMM_ERR_NULL_ARGUMENT = 10,
  FANHMM_ERR_INTERNAL = 11
} fanhmm_status;

typedef struct fanhmm_dataset fanhmm_dataset;
typedef struct fanhmm_model fanhmm_model;

FANHMM_API const char* fanhmm_version(void);
FANHMM_API const char* fanhmm_status_name(fanhmm_status status);

/* Message of the most recent failure on this thread ("" if none). */
FANHMM_API const char* fanhmm_last_error(void);

FANHMM_API void fanhmm_string_free(char* s);

/* Worker threads for per-sequence compute; 0 selects the hardware count. */
FANHMM_API fanhmm_status fanhmm_set_threads(int threads);

/* ---- datasets ---------------------------------------------------------- */

/* schema_json: {"id","time","response","covariates":[...],"categories":[...],
 * "missing_token"}; NULL uses defaults. */
FANHMM_API fanhmm_status fanhmm_dataset_load(const char* path, const char* schema_json,
                                             fanhmm_dataset** out);
FANHMM_API fanhmm_status fanhmm_dataset_write(const fanhmm_dataset* data, const char* path,
                                              const char* schema_json, int include_states);
/* {"sequences","observations","missing","categories","covariates","max_length"} */
FANHMM_API fanhmm_status fanhmm_dataset_info(const fanhmm_dataset* data, char** json_out);
FANHMM_API void fanhmm_dataset_free(fanhmm_dataset* data);

/* ---- models ------------------------------------------------------------ */

FANHMM_API fanhmm_status fanhmm_model_from_json(const char* json, fanhmm_model** out);
FANHMM_API fanhmm_status fanhmm_model_to_json(const fanhmm_model* model, char** json_out);
FANHMM_API void fanhmm_model_free(fanhmm_model* model);

/* Log-likelihood of data and its penalized value at lambda. */
FANHMM_API fanhmm_status fanhmm_model_loglik(const fanhmm_model* model,
                                             const fanhmm_dataset* data, double lambda,
                                             double* penalized, double* loglik);

/* ---- simulation -------------------------------------------------------- */

/* dgp_json: {"preset": "default"|"null"|"intercept", "N", "T", "T_min",
 * "missing_rate", "seed", "covariates": [...]} or {"model": {...}, ...}.
 * truth_out may be NULL. */
FANHMM_API fanhmm_status fanhmm_simulate(const char* dgp_json, fanhmm_dataset** data_out,
                                         fanhmm_model** truth_out);

/* ---- estimation -------------------------------------------------------- */

/* model_json: {"states", "initial":[...], "transition":[...], "emission":[...]}
 * with terms "x", "x:w", "lag", "x:lag". fit_json: {"method", "lambda",
 * "seed", "starts", ...}. report_out may be NULL. */
FANHMM_API fanhmm_status fanhmm_fit(const fanhmm_dataset* data, const char* model_json,
                                    const char* fit_json, fanhmm_model** model_out,
                                    char** report_out);

/* ---- causal effects ---------------------------------------------------- */

/* plan_json: {"covariates":[...], "values":[...] or [[...],...], "start" (1-based),
 * "horizon", "mode": "recurring"|"atomic", "covariate_autocorrelation"}.
 * Output holds one estimate per horizon 0..horizon. */
FANHMM_API fanhmm_status fanhmm_estimate_do(const fanhmm_model* model,
                                            const fanhmm_dataset* data, const char* plan_json,
                                            char** json_out);
FANHMM_API fanhmm_status fanhmm_ace(const fanhmm_model* model, const fanhmm_dataset* data,
                                    const char* treat_json, const char* control_json,
                                    char** json_out);
/* options_json: {"replicates", "level", "random_starts", "warm_start",
 * "original_data", "seed", "fit": {...}}. */
FANHMM_API fanhmm_status fanhmm_bootstrap(const fanhmm_model* model, const fanhmm_dataset* data,
                                          const char* treat_json, const char* control_json,
                                          const char* options_json, char** json_out);

/* ---- experiments ------------------------------------------------------- */

/* config_json: {"simulate": {...}, "experiment": {...}, "fit": {...}} */
FANHMM_API fanhmm_status fanhmm_experiment_multistart(const char* config_json, char** json_out);
FANHMM_API fanhmm_status fanhmm_experiment_coverage(const char* config_json, char** json_out);

/* ---- configs ----------------------------------------------------------- */

/* Checks a run config without fitting: data columns, duplicate keys, model
 * terms, plans and option ranges. Paths are resolved against base_dir when
 * relative (NULL: current directory). */
FANHMM_API fanhmm_status fanhmm_validate_config(const char* config_json, const char* base_dir,
                                                char** json_out);

#ifdef __cplusplus
}
#endif

#endif
