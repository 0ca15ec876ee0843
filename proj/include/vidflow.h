/* Copyright (c) 2026 The vidflow Authors
 * SPDX-License-Identifier: Apache-2.0
 *
 * C interface to the vidflow core. Every function returns a vf_status; on
 * failure vf_last_error() describes the most recent error on the calling
 * thread. Handles are opaque and released with their *_free function
 * (passing NULL is allowed).
 */
#ifndef VIDFLOW_H_
#define VIDFLOW_H_

#include <stddef.h>
#include <stdint.h>

#if defined(VIDFLOW_BUILDING)
#define VF_API __attribute__((visibility("default")))
#else
#define VF_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum vf_status {
  VF_OK = 0,
  VF_ERR_RUNTIME = 1,  /* numeric failures and anything unclassified */
  VF_ERR_USAGE = 2,    /* invalid arguments to this API */
  VF_ERR_CONFIG = 3,
  VF_ERR_IO = 4,
  VF_ERR_PROTOCOL = 5, /* wire format, network and server errors */
  VF_ERR_CONTRACT = 6, /* violated preconditions, e.g. gsb with s + b = 0 */
  VF_ERR_SHAPE = 7
} vf_status;

typedef struct vf_config vf_config;
typedef struct vf_report vf_report;
typedef struct vf_server vf_server;
typedef struct vf_client vf_client;
typedef struct vf_batch vf_batch;

VF_API const char* vf_version(void);
/* Message of the last failed call on this thread; "" after a success. */
VF_API const char* vf_last_error(void);
VF_API const char* vf_status_name(vf_status status);

/* ---- configuration */

VF_API vf_status vf_config_preset(const char* preset, vf_config** out);
VF_API vf_status vf_config_load(const char* path, vf_config** out);
/* Applies INI text ([section] / key = value). Unknown keys fail. */
VF_API vf_status vf_config_apply_ini(vf_config* config, const char* ini_text);
VF_API vf_status vf_config_set(vf_config* config, const char* section, const char* key, const char* value);
/* Writes the full config as INI. *needed receives the size including the
 * terminating NUL; a too-small buffer yields VF_ERR_USAGE. */
VF_API vf_status vf_config_to_ini(const vf_config* config, char* buffer, size_t capacity, size_t* needed);
VF_API void vf_config_free(vf_config* config);

/* ---- reports: named scalar results of a workflow */

VF_API size_t vf_report_size(const vf_report* report);
VF_API const char* vf_report_name(const vf_report* report, size_t index);
VF_API double vf_report_value(const vf_report* report, size_t index);
/* VF_ERR_USAGE when the name is absent. */
VF_API vf_status vf_report_get(const vf_report* report, const char* name, double* value);
VF_API void vf_report_free(vf_report* report);

/* ---- workflows. Artifacts go to run_dir: config.ini, metrics.csv,
 * timing.csv and model.ckpt where a model is produced. */

/* Dispatches on the preset: toy2d, vae-adapt, stage1..3, sft, rlhf. */
VF_API vf_status vf_train(const vf_config* config, const char* run_dir, vf_report** out);
/* Draws n samples from a checkpoint into a CSV file. */
VF_API vf_status vf_sample(const vf_config* config, const char* checkpoint, size_t n, const char* out_csv);
VF_API vf_status vf_rlhf(const vf_config* config, const char* run_dir, vf_report** out);
/* Writes the procedural fixture corpus into dir. */
VF_API vf_status vf_write_fixture_corpus(const char* dir);
/* Curates corpus_dir into a JSONL manifest. */
VF_API vf_status vf_curate(const char* corpus_dir, const char* manifest_path, vf_report** out);
VF_API vf_status vf_bench_parallel(uint64_t seed, const char* out_csv, vf_report** out);

VF_API vf_status vf_eval_gsb(double good, double same, double bad, double* out);
/* W2 between two sample CSV files. */
VF_API vf_status vf_eval_w2_files(const char* csv_a, const char* csv_b, uint64_t seed, double* out);

/* ---- encode server */

/* dataset_json may be NULL for the built-in toy dataset. */
VF_API vf_status vf_server_start(const char* bind, const char* dataset_json, uint64_t seed, uint32_t world_size,
                                 vf_server** out);
VF_API vf_status vf_server_port(const vf_server* server, uint16_t* port);
VF_API vf_status vf_server_requests(const vf_server* server, uint64_t* count);
VF_API void vf_server_free(vf_server* server);
/* Offline mode: frames for steps [first, first + steps) and every rank. */
VF_API vf_status vf_spool_write(const char* dir, const char* dataset_json, uint64_t seed, uint32_t world_size,
                                uint64_t first_step, uint64_t steps);

VF_API vf_status vf_client_connect(const char* host, uint16_t port, uint32_t timeout_ms, vf_client** out);
VF_API vf_status vf_client_fetch(vf_client* client, uint64_t step, uint32_t rank, vf_batch** out);
VF_API void vf_client_free(vf_client* client);

VF_API uint64_t vf_batch_step(const vf_batch* batch);
VF_API uint32_t vf_batch_rank(const vf_batch* batch);
VF_API uint16_t vf_batch_bucket(const vf_batch* batch);
/* Latents [B, T', C, H', W']: writes up to capacity dims, *rank receives 5. */
VF_API vf_status vf_batch_latent_shape(const vf_batch* batch, size_t* dims, size_t capacity, size_t* rank);
VF_API const double* vf_batch_latents(const vf_batch* batch, size_t* count);
VF_API const uint64_t* vf_batch_sample_ids(const vf_batch* batch, size_t* count);
VF_API void vf_batch_free(vf_batch* batch);

#ifdef __cplusplus
}
#endif

#endif /* VIDFLOW_H_ */
