/* dub.h
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 * C interface to the discrete-unit back-translation pipeline. A pipeline
 * handle carries one experiment configuration; stages read and write
 * artifacts under the configured output directory. Status codes double as
 * process exit codes: 0 success, 1 validation, 2 I/O, 3 numeric failure.
 */

#ifndef DUB_H_
#define DUB_H_

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum dub_status {
  DUB_OK = 0,
  DUB_ERR_VALIDATION = 1,
  DUB_ERR_IO = 2,
  DUB_ERR_NUMERIC = 3
} dub_status;

typedef struct dub_pipeline dub_pipeline;

const char* dub_version(void);

/* config_path may be NULL for built-in defaults; .toml and .json are
 * accepted. On failure *out is NULL and the status tells why. */
dub_status dub_pipeline_open(const char* config_path, dub_pipeline** out);

void dub_pipeline_close(dub_pipeline* p);

/* Message for the most recent failing call on this handle. The pointer is
 * valid until the next call on the same handle. */
const char* dub_pipeline_last_error(const dub_pipeline* p);

/* Message for the most recent failing handle-less call (open, evaluate)
 * on this thread. */
const char* dub_last_error(void);

/* Dotted-path config override, e.g. ("train.max_steps", "3000") or
 * ("bt_decode.method", "topk"). Values parse as TOML/JSON scalars; bare
 * words become strings. */
dub_status dub_pipeline_set(dub_pipeline* p, const char* key, const char* value);

/* Root seed override; takes precedence over the config file. */
dub_status dub_pipeline_set_seed(dub_pipeline* p, uint64_t seed);

/* Runs one stage:
 *   gen-world | extract-units | learn-vocab | train-u2tt | train-t2ut |
 *   generate-bt | dub-run | report
 */
dub_status dub_pipeline_run(dub_pipeline* p, const char* stage);

/* Standalone metric between two line-aligned files. metric is "bleu"
 * (whitespace-tokenized text) or "uer" (space-joined unit ids). */
dub_status dub_evaluate_files(const char* hyp_path, const char* ref_path, const char* metric,
                              double* out_value);

#ifdef __cplusplus
} /* extern "C" */
#endif

#endif /* DUB_H_ */
