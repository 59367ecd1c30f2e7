#include "synthrank/synthrank.h"

#include <spdlog/spdlog.h>

#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <new>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>
#include <vector>

#include "synthrank/bm25.hpp"
#include "synthrank/consistency.hpp"
#include "synthrank/corpus.hpp"
#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"
#include "synthrank/pipeline.hpp"
#include "synthrank/ranker.hpp"
#include "synthrank/synth_gen.hpp"

namespace sr = synthrank;

struct sr_corpus {
  sr::Corpus corpus;
};
struct sr_retriever {
  sr::Bm25Retriever retriever;
};
struct sr_hits {
  std::vector<sr::ScoredDoc> docs;
};
struct sr_model {
  sr::RankerParams params;
};
struct sr_scores {
  sr::PerQueryScores scores;
  std::vector<std::pair<std::string, double>> ordered;

  explicit sr_scores(sr::PerQueryScores s) : scores(std::move(s)) {
    ordered.assign(scores.values.begin(), scores.values.end());
  }
};
struct sr_config {
  sr::PipelineConfig config;
};

namespace {

thread_local std::string g_last_error;
thread_local std::string g_last_stage;

sr_status set_error(sr_status status, const std::string& message, const std::string& stage = {}) {
  g_last_error = message;
  g_last_stage = stage;
  return status;
}

template <typename Fn>
sr_status guarded(Fn&& fn) {
  g_last_error.clear();
  g_last_stage.clear();
  try {
    fn();
    return SR_OK;
  } catch (const sr::StageError& e) {
    return set_error(SR_ERR_STAGE, e.what(), e.stage());
  } catch (const sr::Error& e) {
    return set_error(static_cast<sr_status>(e.code()), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return set_error(SR_ERR_IO, e.what());
  } catch (const std::bad_alloc&) {
    return set_error(SR_ERR_INTERNAL, "out of memory");
  } catch (const std::exception& e) {
    return set_error(SR_ERR_INTERNAL, e.what());
  } catch (...) {
    return set_error(SR_ERR_INTERNAL, "unknown error");
  }
}

void require(bool ok, const char* what) {
  if (!ok) throw sr::Error(sr::ErrorCode::kInvalidArgument, what);
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.data(), s.size() + 1);
  return out;
}

sr::TrainConfig to_train_config(const sr_train_options* o) {
  sr::TrainConfig c;
  if (o == nullptr) return c;
  c.epochs = o->epochs;
  c.model.dim = o->dim;
  c.model.hash_bits = o->hash_bits;
  c.model.init_scale = o->init_scale;
  c.model.tokenizer.remove_stopwords = o->remove_stopwords != 0;
  c.optimizer.head_lr = o->head_lr;
  c.optimizer.embedding_lr = o->base_lr;
  c.optimizer.weight_decay = o->weight_decay;
  c.accumulation_steps = o->accum_steps;
  c.negatives = o->negatives;
  c.negative_pool_depth = o->negative_pool_depth;
  c.warmup_fraction = o->warmup_fraction;
  return c;
}

void fill_stats(const sr::TrainResult& r, sr_train_stats* stats) {
  if (stats == nullptr) return;
  stats->instances = r.instances;
  stats->optimizer_steps = r.optimizer_steps;
  stats->skipped_queries = r.skipped_queries;
  stats->final_epoch_loss = r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back();
}

std::vector<sr::FewShotExample> read_examples(const char* path) {
  std::ifstream in(path);
  if (!in) throw sr::Error(sr::ErrorCode::kIo, std::string("cannot open examples file ") + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw sr::Error(sr::ErrorCode::kParse, std::string("examples file: ") + e.what());
  }
  if (!j.is_array()) throw sr::Error(sr::ErrorCode::kParse, "examples file must hold a JSON array");
  std::vector<sr::FewShotExample> out;
  for (const auto& e : j) {
    if (!e.is_object() || !e.contains("document") || !e.contains("query") ||
        !e["document"].is_string() || !e["query"].is_string()) {
      throw sr::Error(sr::ErrorCode::kParse, "each example needs string 'document' and 'query'");
    }
    out.push_back({e["document"].get<std::string>(), e["query"].get<std::string>()});
  }
  return out;
}

}  // namespace

extern "C" {

int sr_abi_version(void) { return SR_ABI_VERSION; }

const char* sr_status_name(sr_status status) {
  switch (status) {
    case SR_OK: return "ok";
    case SR_ERR_INVALID_ARGUMENT: return "invalid argument";
    case SR_ERR_PARSE: return "parse error";
    case SR_ERR_DUPLICATE_ID: return "duplicate id";
    case SR_ERR_IO: return "i/o error";
    case SR_ERR_NOT_FOUND: return "not found";
    case SR_ERR_STATE: return "invalid state";
    case SR_ERR_TRANSPORT: return "transport error";
    case SR_ERR_NUMERIC: return "numeric error";
    case SR_ERR_CONFIG: return "config error";
    case SR_ERR_STAGE: return "stage failure";
    case SR_ERR_BUSY: return "busy";
    case SR_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* sr_last_error(void) { return g_last_error.c_str(); }
const char* sr_last_error_stage(void) { return g_last_stage.c_str(); }
void sr_string_free(char* s) { std::free(s); }

sr_status sr_set_log_level(const char* level) {
  return guarded([&] {
    require(level != nullptr, "level is null");
    const auto lvl = spdlog::level::from_str(level);
    if (lvl == spdlog::level::off && std::strcmp(level, "off") != 0) {
      throw sr::Error(sr::ErrorCode::kInvalidArgument, std::string("unknown log level ") + level);
    }
    spdlog::set_level(lvl);
  });
}

void sr_bm25_options_init(sr_bm25_options* o) {
  if (o == nullptr) return;
  const sr::RetrieverOptions d;
  o->k1 = d.bm25.k1;
  o->b = d.bm25.b;
  o->stage1_k = d.stage1_k;
  o->remove_stopwords = d.tokenizer.remove_stopwords ? 1 : 0;
  o->threads = d.threads;
}

sr_status sr_corpus_load(const char* path, const char* format, sr_corpus** out) {
  return guarded([&] {
    require(path && out, "path and out are required");
    *out = nullptr;
    const auto fmt = sr::parse_corpus_format(format ? format : "jsonl");
    *out = new sr_corpus{sr::ingest_corpus(path, fmt)};
  });
}

size_t sr_corpus_size(const sr_corpus* corpus) { return corpus ? corpus->corpus.size() : 0; }
void sr_corpus_free(sr_corpus* corpus) { delete corpus; }

sr_status sr_retriever_build(const sr_corpus* corpus, const sr_bm25_options* options,
                             sr_retriever** out) {
  return guarded([&] {
    require(corpus && out, "corpus and out are required");
    *out = nullptr;
    sr::RetrieverOptions o;
    if (options) {
      o.bm25.k1 = options->k1;
      o.bm25.b = options->b;
      o.stage1_k = options->stage1_k;
      o.tokenizer.remove_stopwords = options->remove_stopwords != 0;
      o.threads = options->threads;
    }
    *out = new sr_retriever{sr::Bm25Retriever(corpus->corpus, o)};
  });
}

sr_status sr_retriever_save(const sr_retriever* retriever, const char* path) {
  return guarded([&] {
    require(retriever && path, "retriever and path are required");
    retriever->retriever.save(path);
  });
}

sr_status sr_retriever_load(const char* path, sr_retriever** out) {
  return guarded([&] {
    require(path && out, "path and out are required");
    *out = nullptr;
    *out = new sr_retriever{sr::Bm25Retriever::load(path)};
  });
}

int sr_retriever_two_stage(const sr_retriever* retriever) {
  return retriever && retriever->retriever.two_stage() ? 1 : 0;
}
void sr_retriever_free(sr_retriever* retriever) { delete retriever; }

sr_status sr_retriever_search(const sr_retriever* retriever, const char* query, size_t k,
                              sr_hits** out) {
  return guarded([&] {
    require(retriever && query && out, "retriever, query and out are required");
    *out = nullptr;
    *out = new sr_hits{retriever->retriever.retrieve(query, k)};
  });
}

size_t sr_hits_count(const sr_hits* hits) { return hits ? hits->docs.size() : 0; }
const char* sr_hits_doc_id(const sr_hits* hits, size_t i) {
  return hits && i < hits->docs.size() ? hits->docs[i].doc_id.c_str() : nullptr;
}
double sr_hits_score(const sr_hits* hits, size_t i) {
  return hits && i < hits->docs.size() ? hits->docs[i].score : 0.0;
}
void sr_hits_free(sr_hits* hits) { delete hits; }

void sr_generation_options_init(sr_generation_options* o) {
  if (o == nullptr) return;
  const sr::GenerationOptions d;
  *o = sr_generation_options{};
  o->num_queries = d.num_queries;
  o->seed = d.seed;
  o->max_in_flight = d.max_in_flight;
  o->max_retries = d.max_retries;
  o->retry_backoff_ms = d.retry_backoff_ms;
  o->timeout_seconds = 120;
}

sr_status sr_generate(const sr_corpus* corpus, const sr_generation_options* options,
                      const char* out_path, size_t* produced, size_t* discarded) {
  return guarded([&] {
    require(corpus && options && out_path, "corpus, options and out_path are required");
    std::vector<sr::GeneratedQuery> queries;
    std::size_t n_discarded = 0;
    if (options->offline_file) {
      queries = sr::read_generated_queries(options->offline_file);
      for (const auto& q : queries) {
        if (!corpus->corpus.ordinal_of(q.source_doc_id)) {
          throw sr::Error(sr::ErrorCode::kNotFound,
                          "offline query source \"" + q.source_doc_id + "\" is not in the corpus");
        }
      }
    } else {
      require(options->endpoint != nullptr, "an endpoint or an offline file is required");
      require(options->examples_file != nullptr, "an examples file is required for live generation");
      const sr::PromptTemplate tmpl(read_examples(options->examples_file));
      sr::HttpGenerationClient client(
          options->endpoint,
          options->api_key ? std::optional<std::string>(options->api_key) : std::nullopt,
          options->timeout_seconds);
      sr::GenerationOptions g;
      g.num_queries = options->num_queries;
      g.seed = options->seed;
      g.max_in_flight = options->max_in_flight;
      g.max_retries = options->max_retries;
      g.retry_backoff_ms = options->retry_backoff_ms;
      auto result = sr::generate_queries(corpus->corpus, tmpl, client, g);
      queries = std::move(result.queries);
      n_discarded = result.discarded;
    }
    sr::write_generated_queries(queries, out_path);
    if (produced) *produced = queries.size();
    if (discarded) *discarded = n_discarded;
  });
}

sr_status sr_filter(const char* in_path, double fraction, const char* out_path, size_t* kept,
                    size_t* total) {
  return guarded([&] {
    require(in_path && out_path, "in_path and out_path are required");
    const auto all = sr::read_generated_queries(in_path);
    const auto top = sr::filter_top_fraction(all, fraction);
    sr::write_generated_queries(top, out_path);
    if (kept) *kept = top.size();
    if (total) *total = all.size();
  });
}

void sr_train_options_init(sr_train_options* o) {
  if (o == nullptr) return;
  const sr::TrainConfig d;
  o->epochs = d.epochs;
  o->dim = d.model.dim;
  o->hash_bits = d.model.hash_bits;
  o->head_lr = d.optimizer.head_lr;
  o->base_lr = d.optimizer.embedding_lr;
  o->weight_decay = d.optimizer.weight_decay;
  o->accum_steps = d.accumulation_steps;
  o->negatives = d.negatives;
  o->negative_pool_depth = d.negative_pool_depth;
  o->warmup_fraction = d.warmup_fraction;
  o->init_scale = d.model.init_scale;
  o->remove_stopwords = d.model.tokenizer.remove_stopwords ? 1 : 0;
}

sr_status sr_model_load(const char* path, sr_model** out) {
  return guarded([&] {
    require(path && out, "path and out are required");
    *out = nullptr;
    *out = new sr_model{sr::RankerParams::load(std::filesystem::path(path))};
  });
}

sr_status sr_model_save(const sr_model* model, const char* path) {
  return guarded([&] {
    require(model && path, "model and path are required");
    model->params.save(std::filesystem::path(path));
  });
}

sr_status sr_model_score(const sr_model* model, const char* query, const char* doc_text,
                         double* out) {
  return guarded([&] {
    require(model && query && doc_text && out, "model, query, doc_text and out are required");
    *out = sr::score(model->params, query, sr::Document{"", std::nullopt, doc_text});
  });
}

void sr_model_free(sr_model* model) { delete model; }

sr_status sr_train(const sr_corpus* corpus, const sr_retriever* retriever,
                   const char* queries_path, const sr_train_options* options, uint64_t seed,
                   const sr_model* init, sr_model** out, sr_train_stats* stats) {
  return guarded([&] {
    require(corpus && retriever && queries_path && out,
            "corpus, retriever, queries_path and out are required");
    *out = nullptr;
    const auto queries = sr::read_generated_queries(queries_path);
    const std::vector<sr::TrainingSource> sources{
        {&corpus->corpus, &retriever->retriever, sr::to_training_queries(queries)}};
    auto result = sr::train_single_seed(sources, to_train_config(options), seed,
                                        init ? &init->params : nullptr);
    fill_stats(result, stats);
    *out = new sr_model{std::move(result.params)};
  });
}

void sr_check_options_init(sr_check_options* o) {
  if (o == nullptr) return;
  const sr::ConsistencyConfig d;
  o->k = d.k;
  o->pool_depth = d.pool_depth;
  o->threads = d.threads;
}

sr_status sr_check(const sr_corpus* corpus, const sr_retriever* retriever,
                   const char* queries_path, const sr_model* checker,
                   const sr_check_options* options, const char* out_path, size_t* passed,
                   size_t* total) {
  return guarded([&] {
    require(corpus && retriever && queries_path && checker && out_path,
            "corpus, retriever, queries_path, checker and out_path are required");
    sr::ConsistencyConfig config;
    if (options) config = {options->k, options->pool_depth, options->threads};
    const auto queries = sr::read_generated_queries(queries_path);
    const sr::RankerScorer scorer(checker->params);
    const auto flags =
        sr::check_queries(queries, scorer, corpus->corpus, retriever->retriever, config);
    std::vector<sr::CheckedQuery> rows;
    std::size_t n = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      rows.push_back({queries[i], flags[i]});
      n += flags[i] ? 1 : 0;
    }
    sr::write_checked_queries(rows, out_path);
    if (passed) *passed = n;
    if (total) *total = queries.size();
  });
}

sr_status sr_finetune(const sr_corpus* corpus, const sr_retriever* retriever,
                      const char* checked_path, const sr_model* init,
                      const sr_train_options* options, uint64_t seed, sr_model** out,
                      sr_train_stats* stats) {
  return guarded([&] {
    require(corpus && retriever && checked_path && init && out,
            "corpus, retriever, checked_path, init and out are required");
    *out = nullptr;
    std::vector<sr::GeneratedQuery> passed;
    for (auto& row : sr::read_checked_queries(checked_path)) {
      if (row.passed) passed.push_back(std::move(row.query));
    }
    auto result = sr::finetune_on_checked(init->params, passed, corpus->corpus,
                                          retriever->retriever, to_train_config(options), seed);
    fill_stats(result, stats);
    *out = new sr_model{std::move(result.params)};
  });
}

sr_status sr_pretrain_all(const sr_collection_input* collections, size_t count,
                          const sr_train_options* options, uint64_t seed, sr_model** out,
                          sr_train_stats* stats) {
  return guarded([&] {
    require(collections && count > 0 && out, "at least one collection and out are required");
    *out = nullptr;
    std::vector<sr::CollectionData> data;
    for (size_t i = 0; i < count; ++i) {
      const auto& c = collections[i];
      require(c.corpus && c.retriever && c.queries_path, "collection input is incomplete");
      data.push_back({c.name ? c.name : "collection-" + std::to_string(i), &c.corpus->corpus,
                      &c.retriever->retriever, sr::read_generated_queries(c.queries_path)});
    }
    auto result = sr::all_domain_pretrain(data, to_train_config(options), seed);
    fill_stats(result, stats);
    *out = new sr_model{std::move(result.params)};
  });
}

sr_status sr_rerank(const sr_corpus* corpus, const sr_retriever* retriever,
                    const char* queries_path, const sr_model* model, size_t depth,
                    const char* tag, const char* out_run_path) {
  return guarded([&] {
    require(corpus && retriever && queries_path && out_run_path,
            "corpus, retriever, queries_path and out_run_path are required");
    const auto queries = sr::read_queries(queries_path);
    const std::string name = tag ? tag : (model ? "rerank" : "bm25");
    sr::RunSet run;
    if (model) {
      const sr::RankerScorer scorer(model->params);
      run = sr::rerank(scorer, retriever->retriever, corpus->corpus, queries, depth, name);
    } else {
      run = sr::bm25_run(retriever->retriever, queries, depth, name);
    }
    sr::write_run(run, name, out_run_path);
  });
}

sr_status sr_evaluate(const char* run_path, const char* qrels_path, const char* metric,
                      sr_scores** out) {
  return guarded([&] {
    require(run_path && qrels_path && metric && out, "run, qrels, metric and out are required");
    *out = nullptr;
    *out = new sr_scores(
        sr::evaluate_metric(sr::read_run(run_path), sr::read_qrels(qrels_path), metric));
  });
}

size_t sr_scores_count(const sr_scores* s) { return s ? s->ordered.size() : 0; }
size_t sr_scores_excluded(const sr_scores* s) { return s ? s->scores.excluded : 0; }
const char* sr_scores_query_id(const sr_scores* s, size_t i) {
  return s && i < s->ordered.size() ? s->ordered[i].first.c_str() : nullptr;
}
double sr_scores_value(const sr_scores* s, size_t i) {
  return s && i < s->ordered.size() ? s->ordered[i].second : 0.0;
}
double sr_scores_mean(const sr_scores* s) { return s ? s->scores.mean() : 0.0; }
void sr_scores_free(sr_scores* s) { delete s; }

sr_status sr_seed_average(const sr_scores* const* per_seed, size_t count, sr_scores** out) {
  return guarded([&] {
    require(per_seed && count > 0 && out, "at least one score set and out are required");
    *out = nullptr;
    std::vector<std::uint64_t> seeds;
    for (size_t i = 0; i < count; ++i) seeds.push_back(i);
    sr::SeedRunSet cells(per_seed[0]->scores.metric, seeds);
    for (size_t i = 0; i < count; ++i) {
      require(per_seed[i] != nullptr, "null score set");
      cells.add(i, per_seed[i]->scores);
    }
    *out = new sr_scores(sr::seed_average(cells));
  });
}

sr_status sr_paired_t_test(const sr_scores* a, const sr_scores* b, double threshold,
                           sr_ttest* out) {
  return guarded([&] {
    require(a && b && out, "a, b and out are required");
    const double th =
        threshold > 0.0 ? threshold : sr::default_significance_threshold(a->scores.values.size());
    const auto r = sr::paired_t_test(a->scores, b->scores, th);
    *out = sr_ttest{r.t_statistic, r.p_value, r.threshold, r.mean_difference,
                    r.n,           r.significant ? 1 : 0, r.degenerate ? 1 : 0};
  });
}

sr_status sr_aggregate_gains(const double* model, const double* baseline, size_t count,
                             double* average_gain, size_t* wins) {
  return guarded([&] {
    require(model && baseline && count > 0, "model and baseline values are required");
    sr::ResultTable m, b;
    for (size_t i = 0; i < count; ++i) {
      m[{std::to_string(i), ""}] = model[i];
      b[{std::to_string(i), ""}] = baseline[i];
    }
    const auto g = sr::aggregate_gains(m, b);
    if (average_gain) *average_gain = g.average_gain;
    if (wins) *wins = g.wins;
  });
}

sr_status sr_eval_report(const char* qrels_path, const char* const* metrics, size_t metric_count,
                         const char* baseline_run, const char* const* run_paths, size_t run_count,
                         double threshold, const char* report_path, char** table) {
  return guarded([&] {
    require(qrels_path && metrics && metric_count > 0 && baseline_run,
            "qrels, metrics and a baseline run are required");
    require(run_count == 0 || run_paths != nullptr, "run paths are missing");
    sr::CollectionRuns col;
    col.name = "runs";
    col.qrels = qrels_path;
    col.baseline_run = baseline_run;
    for (size_t i = 0; i < metric_count; ++i) col.metrics.emplace_back(metrics[i]);
    if (run_count > 0) {
      sr::SystemRuns sys{"system", {}, {}};
      for (size_t i = 0; i < run_count; ++i) {
        sys.seeds.push_back(i);
        sys.runs.emplace_back(run_paths[i]);
      }
      col.systems.push_back(std::move(sys));
    }
    const auto report = sr::build_report(
        "eval", std::span<const sr::CollectionRuns>(&col, 1),
        threshold > 0.0 ? std::optional<double>(threshold) : std::nullopt);
    if (report_path) {
      std::ofstream out(report_path, std::ios::binary | std::ios::trunc);
      if (!out) throw sr::Error(sr::ErrorCode::kIo, std::string("cannot write ") + report_path);
      out << report.json;
    }
    if (table) *table = dup_string(report.table);
  });
}

sr_status sr_config_load(const char* path, sr_config** out) {
  return guarded([&] {
    require(path && out, "path and out are required");
    *out = nullptr;
    *out = new sr_config{sr::load_config(path)};
  });
}

sr_status sr_config_set_output_dir(sr_config* config, const char* dir) {
  return guarded([&] {
    require(config && dir && *dir, "config and a non-empty dir are required");
    config->config.output_dir = std::filesystem::absolute(dir).lexically_normal();
  });
}

sr_status sr_config_set_seeds(sr_config* config, const uint64_t* seeds, size_t count) {
  return guarded([&] {
    require(config && seeds && count > 0, "config and a non-empty seed list are required");
    auto copy = config->config;
    copy.seeds.assign(seeds, seeds + count);
    copy.validate();
    config->config = std::move(copy);
  });
}

sr_status sr_config_to_json(const sr_config* config, char** out) {
  return guarded([&] {
    require(config && out, "config and out are required");
    *out = dup_string(sr::config_to_json(config->config));
  });
}

void sr_config_free(sr_config* config) { delete config; }

sr_status sr_run_recipe(const sr_config* config, const char* recipe,
                        const sr_recipe_options* options, char** table) {
  return guarded([&] {
    require(config && recipe, "config and recipe are required");
    sr::RecipeOptions o;
    if (options) {
      o.force = options->force != 0;
      if (options->only_stage && *options->only_stage) o.only_stage = options->only_stage;
    }
    const auto outcome = sr::run_recipe(config->config, sr::parse_recipe(recipe), o);
    if (table) *table = dup_string(outcome.table);
  });
}

}  // extern "C"
