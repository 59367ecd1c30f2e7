// Command-line front end. Talks to the library only through the C API.

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "synthrank/synthrank.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitStage = 3;

struct Failure : std::runtime_error {
  Failure(int code, const std::string& what) : std::runtime_error(what), exit_code(code) {}
  int exit_code;
};

void check(sr_status status, const char* action) {
  if (status == SR_OK) return;
  std::string msg = std::string(action) + ": " + sr_status_name(status) + ": " + sr_last_error();
  const char* stage = sr_last_error_stage();
  if (stage && *stage) msg += std::string(" [stage ") + stage + "]";
  const bool config = status == SR_ERR_CONFIG || status == SR_ERR_INVALID_ARGUMENT;
  throw Failure(config ? kExitConfig : kExitStage, msg);
}

template <typename T, void (*Free)(T*)>
struct Deleter {
  void operator()(T* p) const { Free(p); }
};
using Corpus = std::unique_ptr<sr_corpus, Deleter<sr_corpus, sr_corpus_free>>;
using Retriever = std::unique_ptr<sr_retriever, Deleter<sr_retriever, sr_retriever_free>>;
using Model = std::unique_ptr<sr_model, Deleter<sr_model, sr_model_free>>;
using Scores = std::unique_ptr<sr_scores, Deleter<sr_scores, sr_scores_free>>;
using Config = std::unique_ptr<sr_config, Deleter<sr_config, sr_config_free>>;
using CString = std::unique_ptr<char, Deleter<char, sr_string_free>>;

Corpus load_corpus(const std::string& path, const std::string& format) {
  sr_corpus* c = nullptr;
  check(sr_corpus_load(path.c_str(), format.c_str(), &c), "loading corpus");
  return Corpus(c);
}

Retriever load_index(const std::string& path) {
  sr_retriever* r = nullptr;
  check(sr_retriever_load(path.c_str(), &r), "loading index");
  return Retriever(r);
}

Model load_model(const std::string& path) {
  sr_model* m = nullptr;
  check(sr_model_load(path.c_str(), &m), "loading model");
  return Model(m);
}

// "{seed}" in the path is replaced; a fixed path only works for one seed.
std::string seed_path(const std::string& pattern, std::uint64_t seed, std::size_t seed_count) {
  const auto pos = pattern.find("{seed}");
  if (pos == std::string::npos) {
    if (seed_count > 1) throw Failure(kExitConfig, "--out must contain {seed} when several seeds are given");
    return pattern;
  }
  std::string out = pattern;
  out.replace(pos, 6, std::to_string(seed));
  return out;
}

std::string metric_name(const std::string& metric, int k) {
  if (metric == "ndcg") return "ndcg@" + std::to_string(k);
  return metric;
}

void add_training_flags(CLI::App* cmd, sr_train_options& t, std::vector<std::uint64_t>& seeds) {
  cmd->add_option("--seeds", seeds, "training seeds")->delimiter(',');
  cmd->add_option("--epochs", t.epochs, "passes over the training queries");
  cmd->add_option("--dim", t.dim, "embedding dimension");
  cmd->add_option("--hash-bits", t.hash_bits, "log2 of the hashed feature space");
  cmd->add_option("--head-lr", t.head_lr, "learning rate of the scoring head");
  cmd->add_option("--base-lr", t.base_lr, "learning rate of the embeddings");
  cmd->add_option("--accum-steps", t.accum_steps, "instances per optimizer step");
  cmd->add_option("--negatives", t.negatives, "negatives per instance");
  cmd->add_option("--negative-pool", t.negative_pool_depth, "BM25 depth negatives are drawn from");
  cmd->add_option("--weight-decay", t.weight_decay, "decoupled weight decay");
}

void print_stats(const char* what, std::uint64_t seed, const sr_train_stats& s, const std::string& out) {
  std::printf("%s seed %llu: %zu instances, %zu steps, %zu skipped, loss %.6f -> %s\n", what,
              static_cast<unsigned long long>(seed), s.instances, s.optimizer_steps,
              s.skipped_queries, s.final_epoch_loss, out.c_str());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthrank: synthetic-query training and evaluation of a compact re-ranker"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error, off");

  std::string corpus_path, format = "jsonl", index_path, out_path, queries_path;
  auto add_corpus = [&](CLI::App* cmd) {
    cmd->add_option("--corpus", corpus_path, "corpus file")->required();
    cmd->add_option("--format", format, "jsonl or tsv");
  };

  // index
  sr_bm25_options bm25;
  sr_bm25_options_init(&bm25);
  bool stopwords = false;
  auto* index = app.add_subcommand("index", "build the BM25 index of a corpus");
  add_corpus(index);
  index->add_option("--out", out_path, "index file")->required();
  index->add_option("--k1", bm25.k1, "BM25 k1");
  index->add_option("--b", bm25.b, "BM25 b");
  index->add_option("--stage1-k", bm25.stage1_k, "first-stage depth of two-stage retrieval");
  index->add_flag("--remove-stopwords", stopwords, "drop stopwords when tokenizing");
  index->add_option("--threads", bm25.threads, "indexing threads");

  // generate
  sr_generation_options gen;
  sr_generation_options_init(&gen);
  std::string endpoint, offline_file, examples_file;
  auto* generate = app.add_subcommand("generate", "generate synthetic queries");
  add_corpus(generate);
  generate->add_option("--out", out_path, "generated query file")->required();
  auto* endpoint_opt = generate->add_option("--endpoint", endpoint, "generation endpoint URL");
  auto* offline_opt = generate->add_option("--offline-file", offline_file, "pre-generated queries");
  endpoint_opt->excludes(offline_opt);
  generate->add_option("--examples", examples_file, "JSON file with the 3 prompt examples");
  generate->add_option("--num-queries", gen.num_queries, "documents to prompt with");
  generate->add_option("--seed", gen.seed, "document sampling seed");
  generate->add_option("--max-in-flight", gen.max_in_flight, "concurrent requests");
  generate->add_option("--max-retries", gen.max_retries, "retries per request");

  // filter
  double keep_fraction = 0.10;
  std::string in_path;
  auto* filter = app.add_subcommand("filter", "keep the top fraction by average log-probability");
  filter->add_option("--in", in_path, "generated query file")->required();
  filter->add_option("--out", out_path, "filtered query file")->required();
  filter->add_option("--keep-fraction", keep_fraction, "fraction kept");

  // train / finetune / pretrain-all
  sr_train_options train_opts;
  sr_train_options_init(&train_opts);
  std::vector<std::uint64_t> seeds{1};
  std::string init_path, checked_path;
  auto* train = app.add_subcommand("train", "train the ranker on generated queries");
  add_corpus(train);
  train->add_option("--index", index_path, "index file")->required();
  train->add_option("--queries", queries_path, "generated or filtered query file")->required();
  train->add_option("--out", out_path, "model file; {seed} is replaced per seed")->required();
  train->add_option("--init", init_path, "continue from this model");
  add_training_flags(train, train_opts, seeds);

  auto* finetune = app.add_subcommand("finetune", "fine-tune a model on consistency-checked queries");
  add_corpus(finetune);
  finetune->add_option("--index", index_path, "index file")->required();
  finetune->add_option("--checked", checked_path, "checked query file")->required();
  finetune->add_option("--init", init_path, "model to start from; {seed} is replaced")->required();
  finetune->add_option("--out", out_path, "model file; {seed} is replaced per seed")->required();
  add_training_flags(finetune, train_opts, seeds);

  std::vector<std::string> corpora, indexes, query_files, names;
  auto* pretrain = app.add_subcommand("pretrain-all", "pretrain on the unfiltered queries of all collections");
  pretrain->add_option("--corpus", corpora, "corpus file, once per collection")->required();
  pretrain->add_option("--format", format, "jsonl or tsv");
  pretrain->add_option("--index", indexes, "index file, once per collection")->required();
  pretrain->add_option("--queries", query_files, "generated query file, once per collection")->required();
  pretrain->add_option("--name", names, "collection name, once per collection");
  pretrain->add_option("--out", out_path, "model file; {seed} is replaced per seed")->required();
  add_training_flags(pretrain, train_opts, seeds);

  // check
  sr_check_options check_opts;
  sr_check_options_init(&check_opts);
  std::string checker_path;
  auto* check_cmd = app.add_subcommand("check", "consistency-check generated queries");
  add_corpus(check_cmd);
  check_cmd->add_option("--index", index_path, "index file")->required();
  check_cmd->add_option("--queries", queries_path, "generated query file")->required();
  check_cmd->add_option("--checker-model", checker_path, "model that re-ranks the pool")->required();
  check_cmd->add_option("--k", check_opts.k, "pass if the source is in the top k");
  check_cmd->add_option("--pool-depth", check_opts.pool_depth, "BM25 candidates re-ranked");
  check_cmd->add_option("--threads", check_opts.threads, "worker threads");
  check_cmd->add_option("--out", out_path, "checked query file")->required();

  // rerank
  std::size_t depth = 100;
  std::string model_path, tag;
  auto* rerank = app.add_subcommand("rerank", "re-rank BM25 candidates and write a TREC run");
  add_corpus(rerank);
  rerank->add_option("--index", index_path, "index file")->required();
  rerank->add_option("--queries", queries_path, "query file (TSV or JSONL)")->required();
  rerank->add_option("--model", model_path, "ranker model; plain BM25 when omitted");
  rerank->add_option("--rerank-k,--depth", depth, "candidates per query");
  rerank->add_option("--tag", tag, "run tag");
  rerank->add_option("--out", out_path, "run file")->required();

  // eval / significance
  std::vector<std::string> runs, metrics{"ndcg"};
  std::string qrels_path, baseline_run, report_path;
  int cutoff = 10;
  double threshold = 0.0;
  auto add_eval_flags = [&](CLI::App* cmd) {
    cmd->add_option("--run", runs, "run file; several are treated as seeds of one system")->required();
    cmd->add_option("--qrels", qrels_path, "relevance judgments")->required();
    cmd->add_option("--metric", metrics, "mrr, map, ndcg, or ndcg@K");
    cmd->add_option("--k", cutoff, "cutoff for ndcg");
    cmd->add_option("--threshold", threshold, "significance level (default by query count)");
    cmd->add_option("--report", report_path, "JSON report path");
  };
  auto* eval = app.add_subcommand("eval", "evaluate runs");
  add_eval_flags(eval);
  eval->add_option("--baseline-run", baseline_run, "baseline run for significance and gains");
  auto* significance = app.add_subcommand("significance", "paired t-test of runs against a baseline");
  add_eval_flags(significance);
  significance->add_option("--baseline-run", baseline_run, "baseline run")->required();

  // run-recipe
  std::string config_path, recipe = "inpars_light", output_dir, only_stage;
  std::vector<std::uint64_t> recipe_seeds;
  bool force = false;
  auto* run_recipe = app.add_subcommand("run-recipe", "run an end-to-end recipe from a config file");
  run_recipe->add_option("--config", config_path, "pipeline config (JSON)")->required();
  run_recipe->add_option("--recipe", recipe, "inpars, inpars_light, all_domain, eval_only");
  run_recipe->add_option("--output-dir", output_dir, "override the config's output_dir");
  run_recipe->add_option("--seeds", recipe_seeds, "override the config's seeds")->delimiter(',');
  run_recipe->add_option("--stage", only_stage, "run only this stage");
  run_recipe->add_flag("--force", force, "ignore stage manifests");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    check(sr_set_log_level(log_level.c_str()), "setting log level");

    if (*index) {
      bm25.remove_stopwords = stopwords ? 1 : 0;
      auto corpus = load_corpus(corpus_path, format);
      sr_retriever* r = nullptr;
      check(sr_retriever_build(corpus.get(), &bm25, &r), "building index");
      Retriever retriever(r);
      check(sr_retriever_save(retriever.get(), out_path.c_str()), "saving index");
      std::printf("indexed %zu documents%s -> %s\n", sr_corpus_size(corpus.get()),
                  sr_retriever_two_stage(retriever.get()) ? " (two-stage)" : "", out_path.c_str());
    } else if (*generate) {
      auto corpus = load_corpus(corpus_path, format);
      if (!endpoint.empty()) gen.endpoint = endpoint.c_str();
      if (!offline_file.empty()) gen.offline_file = offline_file.c_str();
      if (!examples_file.empty()) gen.examples_file = examples_file.c_str();
      gen.api_key = std::getenv("SYNTHRANK_API_KEY");
      if (!gen.endpoint && !gen.offline_file) {
        throw Failure(kExitConfig, "generate needs --endpoint or --offline-file");
      }
      std::size_t produced = 0, discarded = 0;
      check(sr_generate(corpus.get(), &gen, out_path.c_str(), &produced, &discarded), "generating");
      std::printf("%zu queries written, %zu discarded -> %s\n", produced, discarded, out_path.c_str());
    } else if (*filter) {
      std::size_t kept = 0, total = 0;
      check(sr_filter(in_path.c_str(), keep_fraction, out_path.c_str(), &kept, &total), "filtering");
      std::printf("kept %zu of %zu -> %s\n", kept, total, out_path.c_str());
    } else if (*train || *finetune) {
      auto corpus = load_corpus(corpus_path, format);
      auto retriever = load_index(index_path);
      for (const auto seed : seeds) {
        const auto out = seed_path(out_path, seed, seeds.size());
        sr_model* m = nullptr;
        sr_train_stats stats{};
        if (*train) {
          Model init = init_path.empty() ? Model() : load_model(seed_path(init_path, seed, seeds.size()));
          check(sr_train(corpus.get(), retriever.get(), queries_path.c_str(), &train_opts, seed,
                         init.get(), &m, &stats),
                "training");
        } else {
          auto init = load_model(seed_path(init_path, seed, seeds.size()));
          check(sr_finetune(corpus.get(), retriever.get(), checked_path.c_str(), init.get(),
                            &train_opts, seed, &m, &stats),
                "fine-tuning");
        }
        Model model(m);
        check(sr_model_save(model.get(), out.c_str()), "saving model");
        print_stats(*train ? "train" : "finetune", seed, stats, out);
      }
    } else if (*pretrain) {
      if (indexes.size() != corpora.size() || query_files.size() != corpora.size() ||
          (!names.empty() && names.size() != corpora.size())) {
        throw Failure(kExitConfig, "--corpus, --index, --queries (and --name) must repeat equally");
      }
      std::vector<Corpus> cs;
      std::vector<Retriever> rs;
      std::vector<sr_collection_input> inputs;
      for (std::size_t i = 0; i < corpora.size(); ++i) {
        cs.push_back(load_corpus(corpora[i], format));
        rs.push_back(load_index(indexes[i]));
        inputs.push_back({names.empty() ? corpora[i].c_str() : names[i].c_str(), cs.back().get(),
                          rs.back().get(), query_files[i].c_str()});
      }
      for (const auto seed : seeds) {
        const auto out = seed_path(out_path, seed, seeds.size());
        sr_model* m = nullptr;
        sr_train_stats stats{};
        check(sr_pretrain_all(inputs.data(), inputs.size(), &train_opts, seed, &m, &stats),
              "pretraining");
        Model model(m);
        check(sr_model_save(model.get(), out.c_str()), "saving model");
        print_stats("pretrain-all", seed, stats, out);
      }
    } else if (*check_cmd) {
      auto corpus = load_corpus(corpus_path, format);
      auto retriever = load_index(index_path);
      auto checker = load_model(checker_path);
      std::size_t passed = 0, total = 0;
      check(sr_check(corpus.get(), retriever.get(), queries_path.c_str(), checker.get(),
                     &check_opts, out_path.c_str(), &passed, &total),
            "checking");
      std::printf("%zu of %zu queries passed -> %s\n", passed, total, out_path.c_str());
    } else if (*rerank) {
      auto corpus = load_corpus(corpus_path, format);
      auto retriever = load_index(index_path);
      Model model = model_path.empty() ? Model() : load_model(model_path);
      check(sr_rerank(corpus.get(), retriever.get(), queries_path.c_str(), model.get(), depth,
                      tag.empty() ? nullptr : tag.c_str(), out_path.c_str()),
            "re-ranking");
      std::printf("run written -> %s\n", out_path.c_str());
    } else if (*eval || *significance) {
      std::vector<std::string> names_m;
      for (const auto& m : metrics) names_m.push_back(metric_name(m, cutoff));
      if (!baseline_run.empty()) {
        std::vector<const char*> mp, rp;
        for (const auto& m : names_m) mp.push_back(m.c_str());
        for (const auto& r : runs) rp.push_back(r.c_str());
        char* table = nullptr;
        check(sr_eval_report(qrels_path.c_str(), mp.data(), mp.size(), baseline_run.c_str(),
                             rp.data(), rp.size(), threshold,
                             report_path.empty() ? nullptr : report_path.c_str(), &table),
              "evaluating");
        CString owned(table);
        std::fputs(table, stdout);
      }
      for (const auto& m : names_m) {
        std::vector<Scores> per_run;
        for (const auto& r : runs) {
          sr_scores* s = nullptr;
          check(sr_evaluate(r.c_str(), qrels_path.c_str(), m.c_str(), &s), "evaluating");
          per_run.emplace_back(s);
          if (*eval) {
            std::printf("%s\t%s\t%.4f\t(%zu queries, %zu excluded)\n", m.c_str(), r.c_str(),
                        sr_scores_mean(s), sr_scores_count(s), sr_scores_excluded(s));
          }
        }
        if (baseline_run.empty()) {
          if (per_run.size() > 1) {
            std::vector<const sr_scores*> ptrs;
            for (const auto& s : per_run) ptrs.push_back(s.get());
            sr_scores* avg = nullptr;
            check(sr_seed_average(ptrs.data(), ptrs.size(), &avg), "seed averaging");
            Scores owned(avg);
            std::printf("%s\tseed average\t%.4f\n", m.c_str(), sr_scores_mean(avg));
          }
          continue;
        }
        if (*significance) {
          std::vector<const sr_scores*> ptrs;
          for (const auto& s : per_run) ptrs.push_back(s.get());
          sr_scores* avg = nullptr;
          check(sr_seed_average(ptrs.data(), ptrs.size(), &avg), "seed averaging");
          Scores system(avg);
          sr_scores* b = nullptr;
          check(sr_evaluate(baseline_run.c_str(), qrels_path.c_str(), m.c_str(), &b), "evaluating baseline");
          Scores base(b);
          sr_ttest t{};
          check(sr_paired_t_test(system.get(), base.get(), threshold, &t), "t-test");
          std::printf("%s\tn=%zu\tmean_diff=%.6f\tt=%.6f\tp=%.6g\tthreshold=%.3g\t%s\n", m.c_str(),
                      t.n, t.mean_difference, t.t_statistic, t.p_value, t.threshold,
                      t.significant ? "significant" : "not significant");
        }
      }
    } else if (*run_recipe) {
      sr_config* c = nullptr;
      check(sr_config_load(config_path.c_str(), &c), "loading config");
      Config config(c);
      if (!output_dir.empty()) check(sr_config_set_output_dir(c, output_dir.c_str()), "output dir");
      if (!recipe_seeds.empty()) {
        check(sr_config_set_seeds(c, recipe_seeds.data(), recipe_seeds.size()), "seeds");
      }
      sr_recipe_options opts{force ? 1 : 0, only_stage.empty() ? nullptr : only_stage.c_str()};
      char* table = nullptr;
      check(sr_run_recipe(c, recipe.c_str(), &opts, &table), "running recipe");
      CString owned(table);
      std::fputs(table, stdout);
    }
  } catch (const Failure& f) {
    std::fprintf(stderr, "error: %s\n", f.what());
    return f.exit_code;
  }
  return 0;
}
