#ifndef SYNTHRANK_SYNTHRANK_H
#define SYNTHRANK_SYNTHRANK_H

/*
 * C interface to the synthrank library.
 *
 * Every fallible call returns an sr_status; on failure a description is
 * available from sr_last_error() on the same thread until the next call.
 * Handles are opaque and owned by the caller (free with the matching
 * sr_*_free). Strings returned through char** are freed with sr_string_free.
 * Optional string arguments accept NULL.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define SR_API __declspec(dllexport)
#else
#define SR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

#define SR_ABI_VERSION 1

typedef enum sr_status {
  SR_OK = 0,
  SR_ERR_INVALID_ARGUMENT = 1,
  SR_ERR_PARSE = 2,
  SR_ERR_DUPLICATE_ID = 3,
  SR_ERR_IO = 4,
  SR_ERR_NOT_FOUND = 5,
  SR_ERR_STATE = 6,
  SR_ERR_TRANSPORT = 7,
  SR_ERR_NUMERIC = 8,
  SR_ERR_CONFIG = 9,
  SR_ERR_STAGE = 10,
  SR_ERR_BUSY = 11,
  SR_ERR_INTERNAL = 99
} sr_status;

SR_API int sr_abi_version(void);
SR_API const char* sr_status_name(sr_status status);
/* Message of the last failed call on this thread; "" if none. */
SR_API const char* sr_last_error(void);
/* For a failed pipeline stage, the stage kind to rerun; "" otherwise. */
SR_API const char* sr_last_error_stage(void);
SR_API void sr_string_free(char* s);
/* "trace", "debug", "info", "warn", "error", "off". */
SR_API sr_status sr_set_log_level(const char* level);

/* ---- corpus and BM25 ---------------------------------------------------- */

typedef struct sr_corpus sr_corpus;
typedef struct sr_retriever sr_retriever;
typedef struct sr_hits sr_hits;

typedef struct sr_bm25_options {
  double k1;
  double b;
  size_t stage1_k;
  int remove_stopwords;
  unsigned threads;
} sr_bm25_options;

SR_API void sr_bm25_options_init(sr_bm25_options* options);

/* format: "jsonl" or "tsv". */
SR_API sr_status sr_corpus_load(const char* path, const char* format, sr_corpus** out);
SR_API size_t sr_corpus_size(const sr_corpus* corpus);
SR_API void sr_corpus_free(sr_corpus* corpus);

SR_API sr_status sr_retriever_build(const sr_corpus* corpus, const sr_bm25_options* options,
                                    sr_retriever** out);
SR_API sr_status sr_retriever_save(const sr_retriever* retriever, const char* path);
SR_API sr_status sr_retriever_load(const char* path, sr_retriever** out);
SR_API int sr_retriever_two_stage(const sr_retriever* retriever);
SR_API void sr_retriever_free(sr_retriever* retriever);

SR_API sr_status sr_retriever_search(const sr_retriever* retriever, const char* query, size_t k,
                                     sr_hits** out);
SR_API size_t sr_hits_count(const sr_hits* hits);
SR_API const char* sr_hits_doc_id(const sr_hits* hits, size_t i);
SR_API double sr_hits_score(const sr_hits* hits, size_t i);
SR_API void sr_hits_free(sr_hits* hits);

/* ---- query generation and filtering ------------------------------------- */

typedef struct sr_generation_options {
  const char* endpoint;     /* http(s) URL; NULL when offline_file is set */
  const char* api_key;      /* bearer credential, may be NULL */
  const char* offline_file; /* pre-generated queries, JSONL */
  const char* examples_file; /* JSON array of 3 {"document", "query"} objects */
  size_t num_queries;
  uint64_t seed;
  unsigned max_in_flight;
  int max_retries;
  int retry_backoff_ms;
  int timeout_seconds;
} sr_generation_options;

SR_API void sr_generation_options_init(sr_generation_options* options);

/* Writes generated queries for documents of the corpus to out_path. */
SR_API sr_status sr_generate(const sr_corpus* corpus, const sr_generation_options* options,
                             const char* out_path, size_t* produced, size_t* discarded);

/* Keeps the top `fraction` of a generated-query file by average log-prob. */
SR_API sr_status sr_filter(const char* in_path, double fraction, const char* out_path,
                           size_t* kept, size_t* total);

/* ---- ranker ------------------------------------------------------------- */

typedef struct sr_model sr_model;

typedef struct sr_train_options {
  size_t epochs;
  size_t dim;
  unsigned hash_bits;
  double head_lr;
  double base_lr;
  double weight_decay;
  size_t accum_steps;
  size_t negatives;
  size_t negative_pool_depth;
  double warmup_fraction;
  double init_scale;
  int remove_stopwords;
} sr_train_options;

typedef struct sr_train_stats {
  size_t instances;
  size_t optimizer_steps;
  size_t skipped_queries;
  double final_epoch_loss;
} sr_train_stats;

SR_API void sr_train_options_init(sr_train_options* options);

SR_API sr_status sr_model_load(const char* path, sr_model** out);
SR_API sr_status sr_model_save(const sr_model* model, const char* path);
SR_API sr_status sr_model_score(const sr_model* model, const char* query, const char* doc_text,
                                double* out);
SR_API void sr_model_free(sr_model* model);

/* Trains on a generated-query file; init may be NULL for a fresh model. */
SR_API sr_status sr_train(const sr_corpus* corpus, const sr_retriever* retriever,
                          const char* queries_path, const sr_train_options* options,
                          uint64_t seed, const sr_model* init, sr_model** out,
                          sr_train_stats* stats);

/* ---- consistency checking ----------------------------------------------- */

typedef struct sr_check_options {
  size_t k;
  size_t pool_depth;
  unsigned threads;
} sr_check_options;

SR_API void sr_check_options_init(sr_check_options* options);

/* Writes every query with its pass/fail flag to out_path. */
SR_API sr_status sr_check(const sr_corpus* corpus, const sr_retriever* retriever,
                          const char* queries_path, const sr_model* checker,
                          const sr_check_options* options, const char* out_path, size_t* passed,
                          size_t* total);

/* Continues training `init` on the passing rows of a checked-query file. */
SR_API sr_status sr_finetune(const sr_corpus* corpus, const sr_retriever* retriever,
                             const char* checked_path, const sr_model* init,
                             const sr_train_options* options, uint64_t seed, sr_model** out,
                             sr_train_stats* stats);

typedef struct sr_collection_input {
  const char* name;
  const sr_corpus* corpus;
  const sr_retriever* retriever;
  const char* queries_path;
} sr_collection_input;

SR_API sr_status sr_pretrain_all(const sr_collection_input* collections, size_t count,
                                 const sr_train_options* options, uint64_t seed, sr_model** out,
                                 sr_train_stats* stats);

/* ---- runs and evaluation ------------------------------------------------ */

/* BM25 top-depth per query, re-ranked by the model (BM25 order if model is NULL). */
SR_API sr_status sr_rerank(const sr_corpus* corpus, const sr_retriever* retriever,
                           const char* queries_path, const sr_model* model, size_t depth,
                           const char* tag, const char* out_run_path);

typedef struct sr_scores sr_scores;

/* metric: "mrr", "map", or "ndcg@K". */
SR_API sr_status sr_evaluate(const char* run_path, const char* qrels_path, const char* metric,
                             sr_scores** out);
SR_API size_t sr_scores_count(const sr_scores* scores);
SR_API size_t sr_scores_excluded(const sr_scores* scores);
SR_API const char* sr_scores_query_id(const sr_scores* scores, size_t i);
SR_API double sr_scores_value(const sr_scores* scores, size_t i);
SR_API double sr_scores_mean(const sr_scores* scores);
SR_API void sr_scores_free(sr_scores* scores);

/* Per-query mean over seeds; every query must appear in every seed. */
SR_API sr_status sr_seed_average(const sr_scores* const* per_seed, size_t count, sr_scores** out);

typedef struct sr_ttest {
  double t_statistic;
  double p_value;
  double threshold;
  double mean_difference;
  size_t n;
  int significant;
  int degenerate;
} sr_ttest;

/* threshold <= 0 selects the default for the query count. */
SR_API sr_status sr_paired_t_test(const sr_scores* a, const sr_scores* b, double threshold,
                                  sr_ttest* out);

SR_API sr_status sr_aggregate_gains(const double* model, const double* baseline, size_t count,
                                    double* average_gain, size_t* wins);

/*
 * Evaluates one system (its per-seed runs) against a baseline run on each
 * metric: seed-averaged means, paired t-test, gain over baseline. Writes a
 * JSON report when report_path is set and returns the text table.
 */
SR_API sr_status sr_eval_report(const char* qrels_path, const char* const* metrics,
                                size_t metric_count, const char* baseline_run,
                                const char* const* run_paths, size_t run_count,
                                double threshold, const char* report_path, char** table);

/* ---- pipeline ----------------------------------------------------------- */

typedef struct sr_config sr_config;

SR_API sr_status sr_config_load(const char* path, sr_config** out);
/* Sets output_dir, overriding the config file. */
SR_API sr_status sr_config_set_output_dir(sr_config* config, const char* dir);
SR_API sr_status sr_config_set_seeds(sr_config* config, const uint64_t* seeds, size_t count);
SR_API sr_status sr_config_to_json(const sr_config* config, char** out);
SR_API void sr_config_free(sr_config* config);

typedef struct sr_recipe_options {
  int force;
  const char* only_stage;
} sr_recipe_options;

/* recipe: "inpars", "inpars_light", "all_domain", "eval_only". */
SR_API sr_status sr_run_recipe(const sr_config* config, const char* recipe,
                               const sr_recipe_options* options, char** table);

#ifdef __cplusplus
}
#endif

#endif /* SYNTHRANK_SYNTHRANK_H */
