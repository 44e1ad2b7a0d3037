/* C interface to the pruning library. All handles are opaque; every call
 * returns a status code and, on failure, records a message readable with
 * harp_last_error() on the calling thread. */
#ifndef HARP_HARP_H
#define HARP_HARP_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define HARP_API __declspec(dllexport)
#else
#define HARP_API __attribute__((visibility("default")))
#endif

typedef enum harp_status {
  HARP_OK = 0,
  HARP_ERR_RUNTIME = 1,
  HARP_ERR_CONFIG = 2,
  HARP_ERR_DIVERGENCE = 3,
  HARP_ERR_IO = 4,
  HARP_ERR_FORMAT = 5,
  HARP_ERR_ARGUMENT = 6
} harp_status;

typedef struct harp_config harp_config;
typedef struct harp_dataset harp_dataset;
typedef struct harp_model harp_model;

/* Message for the last failed call on this thread; never NULL. */
HARP_API const char* harp_last_error(void);
HARP_API const char* harp_version(void);

HARP_API harp_status harp_config_new(harp_config** out);
HARP_API void harp_config_free(harp_config* cfg);
HARP_API harp_status harp_config_load(harp_config* cfg, const char* path);
HARP_API harp_status harp_config_set(harp_config* cfg, const char* key, const char* value);
/* Canonical key = value text; *len excludes the terminator. Caller frees with harp_string_free. */
HARP_API harp_status harp_config_dump(const harp_config* cfg, char** text, size_t* len);
HARP_API harp_status harp_config_hash(const harp_config* cfg, uint64_t* out);
HARP_API harp_status harp_config_validate(const harp_config* cfg);
/* 1 if run.seed was given explicitly. */
HARP_API int harp_config_has_seed(const harp_config* cfg);
HARP_API void harp_string_free(char* s);

/* Progress lines go to stderr when verbose is nonzero. */
HARP_API void harp_set_verbose(int verbose);

HARP_API harp_status harp_dataset_load(const harp_config* cfg, harp_dataset** out);
HARP_API void harp_dataset_free(harp_dataset* data);
HARP_API harp_status harp_dataset_sizes(const harp_dataset* data, size_t* train, size_t* test);

HARP_API harp_status harp_model_load(const char* path, harp_model** out);
HARP_API void harp_model_free(harp_model* model);
HARP_API harp_status harp_model_save(const harp_model* model, const char* path);
HARP_API harp_status harp_model_layer_count(const harp_model* model, size_t* out);
/* Preserved fraction of prunable weights under the installed masks. */
HARP_API harp_status harp_model_global_rate(const harp_model* model, double* out);
/* Writes argmax labels for n samples laid out as the model's input shape. */
HARP_API harp_status harp_model_predict(const harp_model* model, const double* inputs, size_t n, int* labels);

/* Stages. Output checkpoints are written to the given paths. */
HARP_API harp_status harp_pretrain(const harp_config* cfg, const harp_dataset* data, const char* out_ckpt);
HARP_API harp_status harp_prune(const harp_config* cfg, const harp_dataset* data, const char* in_ckpt,
                                const char* out_ckpt, const char* curve_csv);
HARP_API harp_status harp_finetune(const harp_config* cfg, const harp_dataset* data, const char* in_ckpt,
                                   const char* out_ckpt);
HARP_API harp_status harp_eval(const harp_config* cfg, const harp_dataset* data, const char* ckpt,
                               const char* metrics_csv);
/* All three stages plus eval; writes checkpoints and reports into out_dir. */
HARP_API harp_status harp_run(const harp_config* cfg, const harp_dataset* data, const char* out_dir);
HARP_API harp_status harp_sweep(const harp_config* cfg, const harp_dataset* data, const char* out_dir);

/* source: uniform, erk, lamp, or harp (read from the checkpoint's masks). */
HARP_API harp_status harp_strategy_export(const harp_config* cfg, const char* ckpt, const char* source,
                                          const char* out_csv);
/* Joins harp, uniform, erk and lamp tables for the checkpoint's network. */
HARP_API harp_status harp_strategy_compare(const harp_config* cfg, const char* ckpt, const char* out_csv);
HARP_API harp_status harp_histogram_export(const harp_config* cfg, const char* ckpt, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif
