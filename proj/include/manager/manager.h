/* SPDX-License-Identifier: Apache-2.0 */
/* C interface of the manager library. Every call returns an mgr_status;
 * on failure mgr_last_error() describes the error of the calling thread.
 * String outputs use (buf, cap, needed): at most cap bytes including the
 * terminator are written, and *needed receives the full length + 1. */
#ifndef MANAGER_MANAGER_H
#define MANAGER_MANAGER_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define MGR_API __attribute__((visibility("default")))
#else
#define MGR_API
#endif

typedef enum mgr_status {
  MGR_OK = 0,
  MGR_ERR_DIMENSION = 1,
  MGR_ERR_DOMAIN = 2,
  MGR_ERR_INDEX = 3,
  MGR_ERR_CONTRACT = 4,
  MGR_ERR_CONFIG = 5,
  MGR_ERR_FORMAT = 6,
  MGR_ERR_IO = 7,
  MGR_ERR_NUMERIC = 8,
  MGR_ERR_UNKNOWN = 9
} mgr_status;

typedef struct mgr_config mgr_config;
typedef struct mgr_model mgr_model;

typedef struct mgr_train_summary {
  size_t steps;
  double first_loss;
  double last_loss;
  double initial_eval_loss;
  double final_eval_loss;
} mgr_train_summary;

typedef void (*mgr_step_callback)(size_t step, double loss, double lr, void* user);

/* Any field may be NULL. A non-finite loss writes the last-step parameters
 * and any gradients to dump_path (default "nan_dump.mgrt") before failing. */
typedef struct mgr_train_options {
  const char* checkpoint_path;
  const char* curve_csv;
  const char* dump_path;
  mgr_step_callback on_step;
  void* user;
} mgr_train_options;

typedef struct mgr_gradcheck_summary {
  size_t checked;
  size_t failed;
  double max_relative_error;
  char worst_parameter[128];
} mgr_gradcheck_summary;

MGR_API const char* mgr_last_error(void);
MGR_API const char* mgr_status_name(mgr_status status);
MGR_API const char* mgr_build_id(void);

MGR_API mgr_status mgr_config_create(mgr_config** out);
MGR_API mgr_status mgr_config_load(const char* path, mgr_config** out);
MGR_API mgr_status mgr_config_set(mgr_config* config, const char* key, const char* value);
MGR_API mgr_status mgr_config_get(const mgr_config* config, const char* key, char* buf, size_t cap, size_t* needed);
/* Applies MANAGER_* environment variables. */
MGR_API mgr_status mgr_config_apply_env(mgr_config* config);
MGR_API mgr_status mgr_config_serialize(const mgr_config* config, char* buf, size_t cap, size_t* needed);
MGR_API void mgr_config_destroy(mgr_config* config);

MGR_API mgr_status mgr_model_create(const mgr_config* config, mgr_model** out);
MGR_API mgr_status mgr_model_load(const char* path, mgr_model** out);
MGR_API mgr_status mgr_model_save(const mgr_model* model, const char* path);
MGR_API void mgr_model_destroy(mgr_model* model);
MGR_API mgr_status mgr_model_config(const mgr_model* model, char* buf, size_t cap, size_t* needed);
MGR_API mgr_status mgr_model_param_count(const mgr_model* model, size_t* out);
/* Flattened task logits of the first `pairs` held-out pairs. */
MGR_API mgr_status mgr_model_eval_logits(const mgr_model* model, size_t pairs, double* buf, size_t cap,
                                         size_t* needed);
MGR_API mgr_status mgr_model_eval_loss(const mgr_model* model, double* out);

/* Trains in place; options may be NULL. */
MGR_API mgr_status mgr_train(mgr_model* model, const mgr_train_options* options, mgr_train_summary* summary);
/* Writes the metric CSVs and manifest.json into out_dir. */
MGR_API mgr_status mgr_diagnose(const mgr_model* model, size_t samples, const char* out_dir);
MGR_API mgr_status mgr_gradcheck(const mgr_model* model, double step, double threshold,
                                 mgr_gradcheck_summary* summary);
/* Runs every oracle property; log receives one line per property. */
MGR_API mgr_status mgr_oracle_suite(uint64_t seed, size_t* passed, size_t* failed, char* log, size_t cap,
                                    size_t* needed);

#ifdef __cplusplus
}
#endif

#endif /* MANAGER_MANAGER_H */
