#ifndef POSTKIT_POSTKIT_H
#define POSTKIT_POSTKIT_H

#include <stddef.h>
#include <stdint.h>

#if defined(PK_BUILDING_LIBRARY)
#define PK_API __attribute__((visibility("default")))
#else
#define PK_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum pk_status {
  PK_OK = 0,
  PK_ERR_INVALID_ARGUMENT = 1,
  PK_ERR_IO = 2,
  PK_ERR_MALFORMED_HEADER = 3,
  PK_ERR_OVERLAPPING_OFFSETS = 4,
  PK_ERR_TRUNCATED_PAYLOAD = 5,
  PK_ERR_NON_FINITE_VALUE = 6,
  PK_ERR_INCOMPATIBLE_CHECKPOINTS = 7,
  PK_ERR_ZERO_WEIGHT_SUM = 8,
  PK_ERR_INVALID_DENSITY = 9,
  PK_ERR_PROBABILITY_OUT_OF_RANGE = 10,
  PK_ERR_INVALID_CONSENSUS_K = 11,
  PK_ERR_SYNTAX = 12,
  PK_ERR_UNKNOWN_METHOD = 13,
  PK_ERR_DUPLICATE_NODE_ID = 14,
  PK_ERR_UNKNOWN_FIELD = 15,
  PK_ERR_INVALID_RECIPE = 16,
  PK_ERR_MISSING_INPUT = 17,
  PK_ERR_BUDGET_INFEASIBLE = 18,
  PK_ERR_RATIO_SUM_INVALID = 19,
  PK_ERR_OUT_OF_RANGE = 20,
  PK_ERR_EMPTY_CORPUS = 21,
  PK_ERR_SINGLE_LABEL = 22,
  PK_ERR_EMPTY_TEXT = 23,
  PK_ERR_NOT_ENOUGH_RESPONSES = 24,
  PK_ERR_OUT_OF_MEMORY = 98,
  PK_ERR_INTERNAL = 99
} pk_status;

/* Error name such as "TruncatedPayload". Never NULL. */
PK_API const char* pk_status_name(pk_status status);
/* Message of the last failing call on this thread; "" after a success. */
PK_API const char* pk_last_error(void);
PK_API const char* pk_version(void);
/* Releases strings returned through char** out-parameters. */
PK_API void pk_string_free(char* s);

/* Checkpoints */

typedef struct pk_checkpoint pk_checkpoint;

typedef enum pk_dtype { PK_F32 = 0, PK_F16 = 1, PK_BF16 = 2 } pk_dtype;

PK_API pk_status pk_checkpoint_new(pk_checkpoint** out);
PK_API pk_status pk_checkpoint_load(const char* path, int allow_nonfinite, pk_checkpoint** out);
PK_API pk_status pk_checkpoint_save(const pk_checkpoint* ckpt, const char* path);
PK_API void pk_checkpoint_free(pk_checkpoint* ckpt);

/* Adds or replaces a tensor; values are rounded to `dtype`. */
PK_API pk_status pk_checkpoint_put_f32(pk_checkpoint* ckpt, const char* name, pk_dtype dtype,
                                       const uint64_t* shape, size_t ndim, const float* values);
/* Copies a tensor widened to float. With out == NULL only *numel is set. */
PK_API pk_status pk_checkpoint_get_f32(const pk_checkpoint* ckpt, const char* name, float* out,
                                       size_t capacity, size_t* numel);
PK_API pk_status pk_checkpoint_set_metadata(pk_checkpoint* ckpt, const char* key,
                                            const char* value);
PK_API size_t pk_checkpoint_tensor_count(const pk_checkpoint* ckpt);
/* Lowercase hex SHA-256 of the canonical serialization. */
PK_API pk_status pk_checkpoint_digest(const pk_checkpoint* ckpt, char** out_hex);
/* {"digest","tensors":[{"name","dtype","shape","numel"}],"metadata"} */
PK_API pk_status pk_checkpoint_describe(const pk_checkpoint* ckpt, char** out_json);
/* Report JSON; *ok is 1 when names, shapes and dtypes all agree. */
PK_API pk_status pk_checkpoint_compat(const pk_checkpoint* const* ckpts, size_t n, int* ok,
                                      char** out_json);

/* Merging */

typedef struct pk_merge_params {
  const double* weights; /* n_weights == 0 means 1 for every input */
  size_t n_weights;
  const double* densities; /* n_densities == 0 means `density` for every input */
  size_t n_densities;
  double density;
  double lambda;
  double epsilon;
  double tall_threshold;
  int consensus_k;
  uint64_t seed;
  int normalize;
  unsigned jobs;
} pk_merge_params;

PK_API void pk_merge_params_init(pk_merge_params* params);
/* Comma-separated list of method names. */
PK_API const char* pk_merge_methods(void);
PK_API int pk_merge_method_known(const char* method);
/* `base` may be NULL only for "linear". */
PK_API pk_status pk_merge(const char* method, const pk_checkpoint* base,
                          const pk_checkpoint* const* models, size_t n_models,
                          const pk_merge_params* params, pk_checkpoint** out);

/* Recipes */

PK_API pk_status pk_recipe_validate(const char* recipe_path, int* ok, char** out_report_json);
PK_API pk_status pk_recipe_order(const char* recipe_path, char** out_json);
PK_API pk_status pk_recipe_execute(const char* recipe_path, const char* workdir, unsigned jobs,
                                   char** out_manifest_json);

/* Planning */

typedef struct pk_schedule {
  double total;
  double warmup_fraction;
  double decay_fraction;
  double eta_max;
  double eta_min;
  int cosine_decay;
} pk_schedule;

typedef struct pk_optimizer {
  double beta1;
  double beta2;
  double eps;
  double weight_decay;
} pk_optimizer;

PK_API void pk_schedule_init(pk_schedule* schedule);
PK_API void pk_optimizer_init(pk_optimizer* optimizer);
/* Whole token counts in plain or scientific notation ("200e9"). */
PK_API pk_status pk_parse_token_count(const char* text, uint64_t* out);
PK_API pk_status pk_schedule_lr(const pk_schedule* schedule, double t, double* out);
/* ratios: SEA, EN, CODE. */
PK_API pk_status pk_plan_mix(const char* sources_json, const double ratios[3], uint64_t budget,
                             char** out_json);
PK_API pk_status pk_train_config(const char* sources_json, const double ratios[3],
                                 uint64_t budget, const pk_schedule* schedule,
                                 const pk_optimizer* optimizer, char** out_json);

/* Language identification and filtering */

typedef struct pk_langid pk_langid;

/* Trains on {"text","lang"} lines read from `path`. buckets == 0 uses the default. */
PK_API pk_status pk_langid_train_jsonl(const char* path, uint32_t buckets, pk_langid** out);
PK_API void pk_langid_free(pk_langid* model);
PK_API pk_status pk_langid_predict(const pk_langid* model, const char* text, char** out_label,
                                   double* out_confidence);

typedef struct pk_filter_options {
  const char* const* langs;
  size_t n_langs;
  double tau;
  int check_metadata;
  int check_classifier;
  int strip_html;
  unsigned jobs;
} pk_filter_options;

PK_API void pk_filter_options_init(pk_filter_options* opts);
/* Paths may be "-" for standard input / output. */
PK_API pk_status pk_filter_jsonl(const pk_langid* model, const pk_filter_options* opts,
                                 const char* in_path, const char* out_path,
                                 char** out_stats_json);

/* BPE */

typedef struct pk_bpe pk_bpe;

PK_API pk_status pk_bpe_learn(const char* corpus, size_t len, size_t target_merges,
                              pk_bpe** out);
PK_API pk_status pk_bpe_load(const char* path, pk_bpe** out);
PK_API pk_status pk_bpe_save(const pk_bpe* model, const char* path);
PK_API void pk_bpe_free(pk_bpe* model);
PK_API size_t pk_bpe_merge_count(const pk_bpe* model);
/* Tokens as a JSON array of strings. */
PK_API pk_status pk_bpe_tokenize(const pk_bpe* model, const char* text, size_t len,
                                 double dropout_p, uint64_t seed, char** out_json);

/* Preferences */

typedef struct pk_simpo_params {
  double beta;
  double gamma;
} pk_simpo_params;

PK_API void pk_simpo_params_init(pk_simpo_params* params);
PK_API pk_status pk_simpo_loss(const double* chosen, size_t n_chosen, const double* rejected,
                               size_t n_rejected, const pk_simpo_params* params, double* loss);
/* Writes n_chosen and n_rejected gradient entries. */
PK_API pk_status pk_simpo_grad(const double* chosen, size_t n_chosen, const double* rejected,
                               size_t n_rejected, const pk_simpo_params* params,
                               double* grad_chosen, double* grad_rejected);
PK_API pk_status pk_pairs_jsonl(const char* in_path, const char* out_path, size_t* n_pairs);
PK_API pk_status pk_simpo_eval_jsonl(const char* in_path, const pk_simpo_params* params,
                                     unsigned jobs, char** out_stats_json);

#ifdef __cplusplus
}
#endif

#endif
