// Exercises the shared library through its C header only.
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "synthrank/synthrank.h"

namespace fs = std::filesystem;

namespace {

struct Dir {
  fs::path path;
  Dir() {
    path = fs::temp_directory_path() / ("sr-capi-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~Dir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

void put(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

// Twenty topics: doc t0 mentions the key terms once, t1 repeats two of them.
void write_collection(const Dir& d) {
  std::string corpus, gen, queries, qrels;
  for (int t = 0; t < 20; ++t) {
    const auto k = "k" + std::to_string(t);
    corpus += "r" + std::to_string(t) + "\tfiller words " + k + "a " + k + "b " + k + "c more filler\n";
    corpus += "s" + std::to_string(t) + "\t" + k + "a " + k + "b " + k + "a " + k + "b\n";
    gen += "{\"source_doc_id\": \"r" + std::to_string(t) + "\", \"text\": \"" + k + "a " + k + "b " + k +
           "c\", \"token_logprobs\": [-0." + std::to_string(1 + t % 9) + "]}\n";
    queries += "q" + std::to_string(t) + "\t" + k + "a " + k + "b " + k + "c\n";
    qrels += "q" + std::to_string(t) + " 0 r" + std::to_string(t) + " 1\n";
  }
  put(d / "corpus.tsv", corpus);
  put(d / "gen.jsonl", gen);
  put(d / "queries.tsv", queries);
  put(d / "qrels.txt", qrels);
}

}  // namespace

TEST_CASE("status reporting") {
  CHECK(sr_abi_version() == SR_ABI_VERSION);
  CHECK(std::string(sr_status_name(SR_ERR_BUSY)) == "busy");
  CHECK(std::string(sr_status_name(SR_OK)) == "ok");
  sr_corpus* c = nullptr;
  CHECK(sr_corpus_load("/nonexistent/x.tsv", "tsv", &c) == SR_ERR_IO);
  CHECK(c == nullptr);
  CHECK(std::strlen(sr_last_error()) > 0);
  CHECK(sr_corpus_load("/nonexistent/x.tsv", "xml", &c) == SR_ERR_INVALID_ARGUMENT);
  CHECK(sr_corpus_load(nullptr, "tsv", &c) == SR_ERR_INVALID_ARGUMENT);
  CHECK(sr_set_log_level("loud") == SR_ERR_INVALID_ARGUMENT);
  CHECK(sr_set_log_level("warn") == SR_OK);
  CHECK(std::string(sr_last_error()).empty());
}

TEST_CASE("parse errors carry the line") {
  Dir d;
  put(d / "bad.tsv", "a\tok\nb\tx\ty\tz\n");
  sr_corpus* c = nullptr;
  CHECK(sr_corpus_load((d / "bad.tsv").c_str(), "tsv", &c) == SR_ERR_PARSE);
  CHECK(std::string(sr_last_error()).find(":2:") != std::string::npos);
}

TEST_CASE("index, train, check, fine-tune, re-rank, evaluate") {
  Dir d;
  write_collection(d);
  sr_corpus* corpus = nullptr;
  REQUIRE(sr_corpus_load((d / "corpus.tsv").c_str(), "tsv", &corpus) == SR_OK);
  CHECK(sr_corpus_size(corpus) == 40);

  sr_bm25_options bo;
  sr_bm25_options_init(&bo);
  CHECK(bo.k1 == 0.9);
  CHECK(bo.b == 0.4);
  sr_retriever* r = nullptr;
  REQUIRE(sr_retriever_build(corpus, &bo, &r) == SR_OK);
  CHECK(sr_retriever_two_stage(r) == 0);
  REQUIRE(sr_retriever_save(r, (d / "idx.srret").c_str()) == SR_OK);
  sr_retriever* r2 = nullptr;
  REQUIRE(sr_retriever_load((d / "idx.srret").c_str(), &r2) == SR_OK);

  sr_hits* hits = nullptr;
  REQUIRE(sr_retriever_search(r2, "k3a k3b k3c", 10, &hits) == SR_OK);
  REQUIRE(sr_hits_count(hits) == 2);
  const std::string top = sr_hits_doc_id(hits, 0);
  CHECK((top == "r3" || top == "s3"));
  CHECK(sr_hits_score(hits, 0) >= sr_hits_score(hits, 1));
  sr_hits_free(hits);

  size_t kept = 0, total = 0;
  REQUIRE(sr_filter((d / "gen.jsonl").c_str(), 0.1, (d / "filt.jsonl").c_str(), &kept, &total) == SR_OK);
  CHECK(kept == 2);
  CHECK(total == 20);

  sr_generation_options go;
  sr_generation_options_init(&go);
  go.offline_file = nullptr;
  size_t produced = 0, discarded = 0;
  CHECK(sr_generate(corpus, &go, (d / "x.jsonl").c_str(), &produced, &discarded) != SR_OK);

  sr_train_options to;
  sr_train_options_init(&to);
  CHECK(to.head_lr == 2e-4);
  CHECK(to.base_lr == 2e-5);
  CHECK(to.accum_steps == 16);
  CHECK(to.negatives == 3);
  to.epochs = 5;
  to.dim = 8;
  to.hash_bits = 12;
  to.head_lr = to.base_lr = 0.05;
  to.negative_pool_depth = 100;
  // Each query's BM25 pool has only 2 documents, fewer than 3 negatives + positive.
  sr_model* model = nullptr;
  sr_train_stats st{};
  CHECK(sr_train(corpus, r, (d / "gen.jsonl").c_str(), &to, 1, nullptr, &model, &st) ==
        SR_ERR_INVALID_ARGUMENT);
  to.negatives = 1;
  REQUIRE(sr_train(corpus, r, (d / "gen.jsonl").c_str(), &to, 1, nullptr, &model, &st) == SR_OK);
  CHECK(st.instances == 100);
  CHECK(st.optimizer_steps == 10);
  CHECK(std::isfinite(st.final_epoch_loss));
  REQUIRE(sr_model_save(model, (d / "m.model").c_str()) == SR_OK);
  sr_model* loaded = nullptr;
  REQUIRE(sr_model_load((d / "m.model").c_str(), &loaded) == SR_OK);
  double s1 = 0, s2 = 0;
  REQUIRE(sr_model_score(model, "k1a", "k1a k1b", &s1) == SR_OK);
  REQUIRE(sr_model_score(loaded, "k1a", "k1a k1b", &s2) == SR_OK);
  CHECK(s1 == s2);

  sr_check_options co;
  sr_check_options_init(&co);
  CHECK(co.k == 3);
  co.k = 1;
  size_t passed = 0;
  REQUIRE(sr_check(corpus, r, (d / "gen.jsonl").c_str(), model, &co, (d / "checked.jsonl").c_str(),
                   &passed, &total) == SR_OK);
  CHECK(total == 20);
  CHECK(passed <= total);
  sr_model* tuned = nullptr;
  REQUIRE(sr_finetune(corpus, r, (d / "checked.jsonl").c_str(), model, &to, 1, &tuned, &st) == SR_OK);

  const std::string gen = d / "gen.jsonl";
  sr_collection_input in{"c", corpus, r, gen.c_str()};
  sr_model* pre = nullptr;
  REQUIRE(sr_pretrain_all(&in, 1, &to, 2, &pre, &st) == SR_OK);
  CHECK(st.instances == 100);

  REQUIRE(sr_rerank(corpus, r, (d / "queries.tsv").c_str(), nullptr, 100, "bm25", (d / "bm25.run").c_str()) == SR_OK);
  REQUIRE(sr_rerank(corpus, r, (d / "queries.tsv").c_str(), tuned, 100, "m", (d / "m.run").c_str()) == SR_OK);

  sr_scores* base = nullptr;
  sr_scores* sys = nullptr;
  sr_scores* bad = nullptr;
  REQUIRE(sr_evaluate((d / "bm25.run").c_str(), (d / "qrels.txt").c_str(), "mrr", &base) == SR_OK);
  REQUIRE(sr_evaluate((d / "m.run").c_str(), (d / "qrels.txt").c_str(), "mrr", &sys) == SR_OK);
  CHECK(sr_scores_count(base) == 20);
  CHECK(sr_scores_excluded(base) == 0);
  CHECK(sr_scores_mean(base) > 0.0);
  CHECK(std::string(sr_scores_query_id(base, 0)) == "q0");
  CHECK(sr_scores_value(base, 0) > 0.0);
  CHECK(sr_evaluate((d / "m.run").c_str(), (d / "qrels.txt").c_str(), "p@5", &bad) == SR_ERR_INVALID_ARGUMENT);
  CHECK(bad == nullptr);

  sr_ttest tt{};
  REQUIRE(sr_paired_t_test(sys, base, 0.0, &tt) == SR_OK);
  CHECK(tt.threshold == 0.05);
  CHECK(tt.n == 20);
  sr_ttest rev{};
  REQUIRE(sr_paired_t_test(base, sys, 0.0, &rev) == SR_OK);
  CHECK(rev.t_statistic == -tt.t_statistic);

  const sr_scores* seeds[] = {base, sys};
  sr_scores* avg = nullptr;
  REQUIRE(sr_seed_average(seeds, 2, &avg) == SR_OK);
  CHECK(sr_scores_mean(avg) == doctest::Approx((sr_scores_mean(base) + sr_scores_mean(sys)) / 2));

  const double model_vals[] = {0.6, 0.3}, base_vals[] = {0.5, 0.4};
  double gain = 0;
  size_t wins = 0;
  REQUIRE(sr_aggregate_gains(model_vals, base_vals, 2, &gain, &wins) == SR_OK);
  CHECK(gain == doctest::Approx((1.2 + 0.75) / 2));
  CHECK(wins == 1);

  const char* metrics[] = {"mrr", "ndcg@10"};
  const std::string mrun = d / "m.run";
  const char* runs[] = {mrun.c_str()};
  char* table = nullptr;
  REQUIRE(sr_eval_report((d / "qrels.txt").c_str(), metrics, 2, (d / "bm25.run").c_str(), runs, 1, 0.0,
                         (d / "report.json").c_str(), &table) == SR_OK);
  CHECK(std::string(table).find("ndcg@10") != std::string::npos);
  CHECK(fs::exists(d / "report.json"));
  sr_string_free(table);

  sr_scores_free(avg);
  sr_scores_free(base);
  sr_scores_free(sys);
  sr_model_free(pre);
  sr_model_free(tuned);
  sr_model_free(loaded);
  sr_model_free(model);
  sr_retriever_free(r2);
  sr_retriever_free(r);
  sr_corpus_free(corpus);
}

TEST_CASE("config and recipe through the C API") {
  Dir d;
  write_collection(d);
  put(d / "cfg.json",
      R"({"schema_version": 1, "output_dir": "out", "seeds": [1],
          "collections": [{"name": "c", "corpus": "corpus.tsv", "format": "tsv",
                           "queries": "queries.tsv", "qrels": "qrels.txt", "metrics": ["mrr"]}]})");
  sr_config* cfg = nullptr;
  REQUIRE(sr_config_load((d / "cfg.json").c_str(), &cfg) == SR_OK);
  REQUIRE(sr_config_set_output_dir(cfg, (d / "elsewhere").c_str()) == SR_OK);
  const uint64_t seeds[] = {4, 5};
  REQUIRE(sr_config_set_seeds(cfg, seeds, 2) == SR_OK);
  CHECK(sr_config_set_seeds(cfg, seeds, 0) == SR_ERR_INVALID_ARGUMENT);
  char* json = nullptr;
  REQUIRE(sr_config_to_json(cfg, &json) == SR_OK);
  CHECK(std::string(json).find("elsewhere") != std::string::npos);
  sr_string_free(json);

  char* table = nullptr;
  CHECK(sr_run_recipe(cfg, "inpars", nullptr, &table) == SR_ERR_CONFIG);
  CHECK(sr_run_recipe(cfg, "bogus", nullptr, &table) == SR_ERR_CONFIG);
  REQUIRE(sr_run_recipe(cfg, "eval_only", nullptr, &table) == SR_OK);
  CHECK(std::string(table).find("BM25") != std::string::npos);
  sr_string_free(table);
  CHECK(fs::exists(d / "elsewhere/report.json"));

  fs::remove(d / "elsewhere/index/c.srret");
  sr_recipe_options opts{0, "eval"};
  CHECK(sr_run_recipe(cfg, "eval_only", &opts, &table) == SR_ERR_STAGE);
  CHECK(std::string(sr_last_error_stage()) == "index");
  sr_config_free(cfg);

  put(d / "bad.json", R"({"schema_version": 1, "output_dir": "o", "collections": [], "extra": 1})");
  CHECK(sr_config_load((d / "bad.json").c_str(), &cfg) == SR_ERR_CONFIG);
}
