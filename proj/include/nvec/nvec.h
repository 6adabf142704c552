/*===- nvec.h - C interface to the vectorization toolkit -------------------===*/
/*
 * Every function returns an nvec_status. On failure nvec_last_error() holds a
 * message for the calling thread until its next call into the library.
 * Strings handed out through `char **` parameters are owned by the caller
 * and released with nvec_string_free(). Configuration and results cross the
 * boundary as JSON text.
 */
#ifndef NVEC_NVEC_H
#define NVEC_NVEC_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define NVEC_API __declspec(dllexport)
#else
#define NVEC_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum nvec_status {
  NVEC_OK = 0,
  NVEC_E_INVALID_ARGUMENT = 1,
  NVEC_E_SYNTAX = 2,
  NVEC_E_DIM_MISMATCH = 3,
  NVEC_E_EMPTY_BATCH = 4,
  NVEC_E_SCHEMA = 5,
  NVEC_E_STALE_NEST = 6,
  NVEC_E_ALREADY_INJECTED = 7,
  NVEC_E_NO_PRAGMA_FOUND = 8,
  NVEC_E_NON_POSITIVE_TIME = 9,
  NVEC_E_BACKEND_UNAVAILABLE = 10,
  NVEC_E_BASELINE_COMPILE_FAILED = 11,
  NVEC_E_COMPILER_NOT_FOUND = 12,
  NVEC_E_COMPILE_ERROR = 13,
  NVEC_E_RUN_TIMEOUT = 14,
  NVEC_E_TEMPLATE_INSTANTIATION_FAILED = 15,
  NVEC_E_MISSING_ORACLE_RESULT = 16,
  NVEC_E_EMPTY_MODEL = 17,
  NVEC_E_MISSING_MODEL = 18,
  NVEC_E_IO = 19,
  NVEC_E_INTERNAL = 100
} nvec_status;

typedef struct nvec_source nvec_source;
typedef struct nvec_env nvec_env;
typedef struct nvec_dataset nvec_dataset;
typedef struct nvec_model nvec_model;

NVEC_API const char *nvec_version(void);
NVEC_API const char *nvec_status_name(nvec_status status);
NVEC_API const char *nvec_last_error(void);
NVEC_API void nvec_string_free(char *s);

/*===-- Sources, loop nests and pragmas ----------------------------------===*/

NVEC_API nvec_status nvec_source_open(const char *path, nvec_source **out);
/* `path` only labels nest ids; nothing is read from disk. */
NVEC_API nvec_status nvec_source_from_text(const char *path, const char *text,
                                           nvec_source **out);
NVEC_API void nvec_source_free(nvec_source *src);
NVEC_API nvec_status nvec_source_nest_count(const nvec_source *src, size_t *out);
/* JSON array of {nest_id, file, line, depth, embed_snippet}, plus a
 * "warnings" list for skipped loops, as {"nests": [...], "warnings": [...]}. */
NVEC_API nvec_status nvec_source_nests_json(const nvec_source *src, char **json);
NVEC_API nvec_status nvec_inject(const nvec_source *src, size_t nest, int vf, int if_,
                                 char **text);
NVEC_API nvec_status nvec_remove_pragma(const nvec_source *src, size_t nest, char **text);

/*===-- Environment ------------------------------------------------------===*/

/* `config_json` may be NULL for defaults (sim backend). `cache_path` may be
 * NULL for an in-memory cache; otherwise measurements persist as JSON lines. */
NVEC_API nvec_status nvec_env_create(const char *config_json, const char *cache_path,
                                     nvec_env **out);
NVEC_API void nvec_env_free(nvec_env *env);
/* {t_baseline, t_candidate, status, reward} */
NVEC_API nvec_status nvec_env_evaluate(nvec_env *env, const nvec_source *src, size_t nest,
                                       int vf, int if_, char **json);

/*===-- Datasets and oracle labels ---------------------------------------===*/

NVEC_API nvec_status nvec_dataset_generate(const char *out_dir, int count, uint64_t seed,
                                           double train_fraction, nvec_dataset **out);
NVEC_API nvec_status nvec_dataset_load(const char *manifest_path, nvec_dataset **out);
NVEC_API void nvec_dataset_free(nvec_dataset *ds);
/* {root, count, seed, train, test, families: {id: n}, duplicates} */
NVEC_API nvec_status nvec_dataset_summary_json(const nvec_dataset *ds, char **json);

/* Brute-forces every program of `split` ("train", "test" or "all") and writes
 * JSON-lines labels to `labels_path`. `summary_json` receives the optimum
 * histogram {total, counts: [{vf, if, count, percent}], mode: {vf, if}}. */
NVEC_API nvec_status nvec_bruteforce(nvec_env *env, const nvec_dataset *ds, const char *split,
                                     const char *labels_path, char **summary_json);

/*===-- Models -----------------------------------------------------------===*/

/* Fresh checkpoint: vocabulary from the dataset's train split, actions from
 * the environment's grid. `train_config_json` may be NULL for defaults. */
NVEC_API nvec_status nvec_model_init(const nvec_dataset *ds, const nvec_env *env,
                                     const char *train_config_json, nvec_model **out);
NVEC_API nvec_status nvec_model_load(const char *path, nvec_model **out);
NVEC_API nvec_status nvec_model_save(const nvec_model *model, const char *path);
NVEC_API void nvec_model_free(nvec_model *model);

/* Receives one JSON object per PPO batch. */
typedef void (*nvec_batch_fn)(const char *batch_json, void *user);

/* Trains in place on the train split. `log_csv` receives the per-batch log,
 * `summary_json` {steps, batches, final_reward_mean}; either may be NULL. */
NVEC_API nvec_status nvec_train(nvec_model *model, nvec_env *env, const nvec_dataset *ds,
                                const char *train_config_json, nvec_batch_fn on_batch,
                                void *user, char **log_csv, char **summary_json);

/* Greedy (vf, if) for one nest. */
NVEC_API nvec_status nvec_predict(const nvec_model *model, const nvec_source *src, size_t nest,
                                  int *vf, int *if_);
/* Code vector of one nest as a JSON array. */
NVEC_API nvec_status nvec_code_vector_json(const nvec_model *model, const nvec_source *src,
                                           size_t nest, char **json);

/*===-- Benchmarks -------------------------------------------------------===*/

/* Runs the methods named in `bench_config_json` ({methods, random_trials,
 * best_of, seed, k, tree: {...}, supervised: {...}}) over the test split.
 * nns/tree/supervised are fitted on train-split labels from `labels_path` over
 * the model's frozen code vectors; bruteforce uses test-split labels.
 * `model` and `labels_path` may be NULL when no requested method needs them.
 * `baselines_json` (nullable) receives the fitted comparison models. */
NVEC_API nvec_status nvec_bench(nvec_env *env, const nvec_dataset *ds, const nvec_model *model,
                                const char *labels_path, const char *bench_config_json,
                                char **report_json, char **baselines_json);

/* RL versus end-to-end supervised test geomean as a function of compilations.
 * `config_json`: {budgets: [...], train: {...}, supervised: {...}}. Returns
 * `report_json` with the points merged into its "efficiency" list. */
NVEC_API nvec_status nvec_efficiency(nvec_env *env, const nvec_dataset *ds,
                                     const char *config_json, const char *report_json_in,
                                     char **report_json);

NVEC_API nvec_status nvec_report_render(const char *report_json, char **text);
NVEC_API nvec_status nvec_report_csv(const char *report_json, char **bench_csv,
                                     char **efficiency_csv);

#ifdef __cplusplus
}
#endif

#endif /* NVEC_NVEC_H */
