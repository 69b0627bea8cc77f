// Copyright 2026 The denseflow-cpp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/* C interface to the denseflow library. Every function returns a df_status;
 * on failure df_last_error() describes the problem for the calling thread.
 * Strings returned through char** out-parameters are owned by the caller and
 * released with df_free_string. */

#ifndef DENSEFLOW_H
#define DENSEFLOW_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DF_API __declspec(dllexport)
#else
#define DF_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum df_status {
  DF_OK = 0,
  DF_ERR_USAGE = 1,   /* bad arguments or configuration */
  DF_ERR_DATA = 2,    /* unreadable or malformed files, shape mismatches */
  DF_ERR_NUMERIC = 3, /* non-finite values, divergence */
  DF_ERR_VERIFY = 4,  /* a verification check failed */
  DF_ERR_INTERNAL = 5
} df_status;

typedef struct df_model df_model;
typedef struct df_dataset df_dataset;

typedef struct df_step_log {
  int64_t step;
  int32_t epoch;
  double lr;
  double bpd;
  double grad_norm;
  double min_invconv;
  double min_coupling_scale;
} df_step_log;

typedef void (*df_step_fn)(const df_step_log* log, void* user);
typedef void (*df_check_fn)(const char* name, int passed, const char* detail, double seconds, void* user);

DF_API const char* df_version(void);
DF_API const char* df_last_error(void);
DF_API void df_free_string(char* s);

/* Configuration. `preset` may be NULL (library defaults); `text` may be NULL
 * or INI overrides applied on top of the preset. */
DF_API df_status df_config_resolve(const char* preset, const char* text, char** out_config);
/* Names of the built-in presets, one per line. */
DF_API df_status df_config_presets(char** out_names);
/* Parameter census and shape trace of a resolved configuration. */
DF_API df_status df_config_plan(const char* config, char** out_plan);

/* Models (32-bit). */
DF_API df_status df_model_create(const char* config, df_model** out);
DF_API df_status df_model_load(const char* path, df_model** out);
DF_API df_status df_model_save(const df_model* model, const char* path);
DF_API df_status df_model_config(const df_model* model, char** out_config);
DF_API df_status df_model_info(const df_model* model, char** out_plan);
DF_API void df_model_free(df_model* model);

/* Datasets. */
DF_API df_status df_dataset_read(const char* path, df_dataset** out);
DF_API df_status df_dataset_write(const df_dataset* data, const char* path);
DF_API df_status df_dataset_synth(int64_t n, int32_t height, int32_t width, int32_t channels, uint64_t seed,
                                  df_dataset** out);
/* Raw u8 planar (NCHW) file. */
DF_API df_status df_dataset_from_planar(const char* path, int64_t n, int32_t channels, int32_t height,
                                        int32_t width, df_dataset** out);
DF_API df_status df_dataset_shape(const df_dataset* data, int64_t* n, int32_t* channels, int32_t* height,
                                  int32_t* width);
/* Copies image `index` as interleaved HWC bytes into `out` (height*width*channels). */
DF_API df_status df_dataset_image(const df_dataset* data, int64_t index, uint8_t* out, size_t size);
DF_API void df_dataset_free(df_dataset* data);

/* Trains a fresh model from `config`, or resumes from the checkpoint at
 * `resume_path`, whose stored configuration is used with `config` (if not
 * NULL) applied as overrides to its [train] and [eval] settings. The final
 * state is written to `out_path`. `on_step`, if set, sees every
 * [train] log_every-th step and the final one. */
DF_API df_status df_train(const char* config, const df_dataset* data, const char* out_path, const char* resume_path,
                          df_step_fn on_step, void* user);

/* Evaluation report as text, or JSON when `json` is nonzero. */
DF_API df_status df_evaluate(df_model* model, const df_dataset* data, int32_t mc_samples, uint64_t seed, int json,
                             char** out_report);

DF_API df_status df_sample(const df_model* model, int32_t n, double temperature, uint64_t seed, df_dataset** out);

/* Runs the property suite; returns DF_ERR_VERIFY when any check fails. */
DF_API df_status df_verify(int32_t trials, uint64_t seed, df_check_fn on_check, void* user, int32_t* failed);

#ifdef __cplusplus
}
#endif

#endif /* DENSEFLOW_H */
