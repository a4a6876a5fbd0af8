/* Copyright 2026 The qreform Authors.
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
 */

/* C interface of libqreform. Every function returns a qr_status; on failure
 * qr_last_error() describes the problem for the calling thread. Strings
 * returned through char** are owned by the caller and released with
 * qr_string_free. */

#ifndef QREFORM_QREFORM_H_
#define QREFORM_QREFORM_H_

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define QR_API __declspec(dllexport)
#else
#define QR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum qr_status {
  QR_OK = 0,
  QR_ERR_INTERNAL = 1,
  QR_ERR_CONFIG = 2,
  QR_ERR_DATA = 3,
  QR_ERR_NUMERIC = 4
} qr_status;

typedef struct qr_config qr_config;
typedef struct qr_experiment qr_experiment;

QR_API const char* qr_version(void);
QR_API const char* qr_last_error(void);
QR_API void qr_string_free(char* s);

/* ---- configuration ---- */

/* preset: "desk" or "full"; NULL means "desk". */
QR_API qr_status qr_config_default(const char* preset, qr_config** out);
QR_API qr_status qr_config_load(const char* path, qr_config** out);
QR_API qr_status qr_config_parse(const char* json, qr_config** out);
QR_API qr_status qr_config_to_json(const qr_config* cfg, char** out);
/* Replaces the seed list with a single seed. */
QR_API qr_status qr_config_set_seed(qr_config* cfg, uint64_t seed);
QR_API qr_status qr_config_set_threads(qr_config* cfg, size_t threads);
/* Reads corpus.jsonl, train/dev/test.tsv and qrels.tsv from dir instead of
 * generating synthetic data. */
QR_API qr_status qr_config_set_data_dir(qr_config* cfg, const char* dir);
/* Comma-separated arm names, e.g. "BM25,RL-N-Sub". */
QR_API qr_status qr_config_set_arms(qr_config* cfg, const char* arms);
QR_API void qr_config_free(qr_config* cfg);

/* ---- whole runs ---- */

/* Writes the synthetic corpus, query splits, qrels and synonym table. */
QR_API qr_status qr_synth(const qr_config* cfg, uint64_t seed, const char* out_dir);
/* Every configured seed and arm into out_dir/seed-<s>/ plus summary.tsv. */
QR_API qr_status qr_run_all(const qr_config* cfg, const char* out_dir);
/* Variance of RL-RNN and RL-N-Sub over n_seeds training seeds; writes
 * stability.tsv and stability.json. */
QR_API qr_status qr_stability(const qr_config* cfg, size_t n_seeds, const char* out_dir);

/* Scores a run file (qid, doc_id, rank, score) against qrels (qid, doc_id).
 * recall_ks is a comma-separated list of cutoffs, e.g. "10,40". Only
 * queries in the run count unless complete is nonzero, in which case
 * queries missing from the run score 0. Writes metrics.tsv and metrics.json
 * into out_dir. */
QR_API qr_status qr_trec_eval(const char* qrels_path, const char* run_path, const char* recall_ks,
                              int complete, const char* out_dir);

/* ---- one dataset, one seed ---- */

QR_API qr_status qr_experiment_create(const qr_config* cfg, uint64_t seed, qr_experiment** out);
QR_API void qr_experiment_free(qr_experiment* exp);
/* Corpus and index statistics as JSON. */
QR_API qr_status qr_experiment_stats(const qr_experiment* exp, char** out_json);
/* Runs the comma-separated arms (NULL: the configured ones) and writes the
 * report files to out_dir. Returns the code of the first failed arm. */
QR_API qr_status qr_experiment_run(qr_experiment* exp, const char* arms, const char* out_dir);
/* Trains an arm's agents and saves them as <name>.bin / <name>.json. */
QR_API qr_status qr_experiment_train_agents(qr_experiment* exp, const char* arm, const char* dir);
/* Loads every agent saved in dir into the experiment's cache. */
QR_API qr_status qr_experiment_load_agents(qr_experiment* exp, const char* dir);
/* JSON-lines AgentResult log of an arm for "train", "dev" or "test". */
QR_API qr_status qr_experiment_log(qr_experiment* exp, const char* arm, const char* split,
                                   const char* path);
/* Trains the aggregator on a log; writes model_path and model_path.json.
 * The loss curve is returned as a JSON array when out_loss is not NULL. */
QR_API qr_status qr_experiment_train_aggregator(qr_experiment* exp, const char* log_path,
                                                const char* model_path, char** out_loss);
/* Aggregates a log with a trained model; variant is one of product,
 * rank_only, relevance_only, count_rank, concat_features. Writes run.tsv
 * and metrics.json into out_dir. */
QR_API qr_status qr_experiment_evaluate(qr_experiment* exp, const char* log_path,
                                        const char* model_path, const char* variant,
                                        const char* out_dir);
/* RM3 term distribution of one query as term <TAB> probability, the `limit`
 * most probable terms. */
QR_API qr_status qr_experiment_rm3_trace(qr_experiment* exp, const char* qid, size_t limit,
                                         const char* path);
/* qid <TAB> subset for a strategy: random, bagging, kmeans-Q, kmeans-A,
 * kmeans-QA. */
QR_API qr_status qr_experiment_write_partition(qr_experiment* exp, const char* strategy,
                                               const char* path);
/* Random, kmeans-Q, kmeans-A and kmeans-QA partitions; writes
 * partition.tsv. */
QR_API qr_status qr_experiment_partition_study(qr_experiment* exp, const char* out_dir);

#ifdef __cplusplus
}
#endif

#endif /* QREFORM_QREFORM_H_ */
