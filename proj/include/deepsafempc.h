/*
 Copyright 2026 The deepsafempc Authors

 Licensed under the Apache License, Version 2.0 (the "License");
 you may not use this file except in compliance with the License.
 You may obtain a copy of the License at

      https://www.apache.org/licenses/LICENSE-2.0

 Unless required by applicable law or agreed to in writing, software
 distributed under the License is distributed on an "AS IS" BASIS,
 WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 See the License for the specific language governing permissions and
 limitations under the License.
*/

/* C interface to the deepsafempc library. Objects are opaque handles owned by
 * the caller and released with the matching *_free function. Every function
 * returns a dsm_status; on failure dsm_last_error() describes the cause. */

#ifndef DEEPSAFEMPC_H_
#define DEEPSAFEMPC_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define DSM_API __declspec(dllexport)
#else
#define DSM_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

/* Values 0, 2, 3 and 4 double as the command-line exit codes. */
typedef enum dsm_status {
  DSM_OK = 0,
  DSM_ERR_ARGUMENT = 1,         /* null handle, bad buffer length */
  DSM_ERR_CONFIG = 2,           /* invalid or unreadable configuration */
  DSM_ERR_MISSING_ARTIFACT = 3, /* checkpoint absent, unreadable or unwritable output */
  DSM_ERR_NUMERICAL = 4         /* solver, training or shape failure */
} dsm_status;

typedef struct dsm_config dsm_config;
typedef struct dsm_filter dsm_filter;

typedef struct dsm_filter_info {
  int sqp_iters;
  double kkt_residual;
  double merit_final;
  int converged; /* 1 when the KKT tolerance was met */
  int fallback;  /* 1 when the clamped policy action was returned unchanged */
} dsm_filter_info;

DSM_API const char* dsm_version(void);

/* Message of the last failure on the calling thread; empty when none. */
DSM_API const char* dsm_last_error(void);

/* Releases strings returned through char** out-parameters. */
DSM_API void dsm_string_free(char* s);

/* preset: "cheetah2", "ant2" or "swimmer2". */
DSM_API dsm_status dsm_config_default(const char* preset, dsm_config** out);
DSM_API dsm_status dsm_config_load(const char* path, dsm_config** out);
DSM_API dsm_status dsm_config_parse(const char* toml_text, dsm_config** out);
DSM_API void dsm_config_free(dsm_config* config);
DSM_API dsm_status dsm_config_to_toml(const dsm_config* config, char** out);
DSM_API dsm_status dsm_config_set_seed(dsm_config* config, uint64_t seed);
DSM_API dsm_status dsm_config_set_single_thread(dsm_config* config, int enabled);
DSM_API dsm_status dsm_config_set_output_dir(dsm_config* config, const char* dir);
DSM_API dsm_status dsm_config_output_dir(const dsm_config* config, char** out);
DSM_API dsm_status dsm_config_eval_episodes(const dsm_config* config, int* episodes);
DSM_API dsm_status dsm_config_dims(const dsm_config* config, size_t* state_dim, size_t* action_dim);

/* Full training run. summary_json may be NULL; otherwise receives the
 * training summary document. */
DSM_API dsm_status dsm_train(const dsm_config* config, char** summary_json);

/* Paired off/on evaluation over `episodes` seeds. */
DSM_API dsm_status dsm_compare(const dsm_config* config, const char* checkpoint_dir, int episodes,
                               char** summary_json);

/* One-step prediction error curve; max_error may be NULL. */
DSM_API dsm_status dsm_pred_error(const dsm_config* config, const char* checkpoint_dir,
                                  double* max_error);

/* Safety filter around a predictor checkpoint, using the config's MPC options
 * and environment bounds. */
DSM_API dsm_status dsm_filter_create(const dsm_config* config, const char* predictor_path,
                                     dsm_filter** out);
DSM_API void dsm_filter_free(dsm_filter* filter);
/* state: state_dim values; action and out_action: action_dim values; info may be NULL. */
DSM_API dsm_status dsm_filter_apply(dsm_filter* filter, const double* state, size_t state_len,
                                    const double* action, size_t action_len, double* out_action,
                                    dsm_filter_info* info);

#ifdef __cplusplus
}
#endif

#endif /* DEEPSAFEMPC_H_ */
