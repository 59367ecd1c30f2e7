#include <doctest.h>

#include <fmt/format.h>
#include <unistd.h>

#include <nlohmann/json.hpp>
#include <set>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"
#include "synthrank/pipeline.hpp"
#include "toy_data.hpp"

using namespace synthrank;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ToyWorkspace {
  testing::TempDir dir;
  testing::ToyCollection toy = testing::separable_toy(17, 40, 80, 10);

  ToyWorkspace() { testing::write_toy_files(toy, dir / "data"); }

  json config_json(const std::vector<std::uint64_t>& seeds = {1, 2}) const {
    auto j = json::parse(testing::toy_config_json(dir / "data", dir / "out", seeds));
    j["training"]["epochs"] = 3;
    return j;
  }
  PipelineConfig config(const json& j) const { return parse_config(j.dump(), dir.path()); }
  PipelineConfig config() const { return config(config_json()); }
};

std::string read(const fs::path& p) { return testing::read_file(p); }

}  // namespace

TEST_CASE("config parsing and validation") {
  ToyWorkspace ws;
  auto j = ws.config_json();
  const auto c = ws.config(j);
  CHECK(c.seeds == std::vector<std::uint64_t>{1, 2});
  CHECK(c.training.epochs == 3);
  CHECK(c.training.optimizer.head_lr == 0.05);
  CHECK(c.training.optimizer.embedding_lr == 0.05);
  CHECK(c.consistency.k == 3);
  CHECK(c.collections.at(0).query_set == "toy");
  CHECK(c.collections.at(0).metrics == std::vector<std::string>{"ndcg@10", "mrr"});
  CHECK(c.query_set("toy").keep_fraction == 0.10);
  CHECK_NOTHROW(c.validate());

  const auto again = parse_config(config_to_json(c), "/");
  CHECK(config_to_json(again) == config_to_json(c));

  auto expect_config_error = [&](json bad, const std::string& needle) {
    try {
      ws.config(bad).validate();
      FAIL("expected a config error");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kConfig);
      CHECK_MESSAGE(std::string(e.what()).find(needle) != std::string::npos, e.what());
    }
  };
  auto bad = j;
  bad["bm25"]["k3"] = 1;
  expect_config_error(bad, "k3");
  bad = j;
  bad["schema_version"] = 2;
  expect_config_error(bad, "schema_version");
  bad = j;
  bad["seeds"] = json::array();
  expect_config_error(bad, "seeds");
  bad = j;
  bad["rerank_depth"] = 5000;
  expect_config_error(bad, "rerank_depth");
  bad = j;
  bad["collections"][0]["metrics"] = {"p@5"};
  expect_config_error(bad, "p@5");
  bad = j;
  bad["collections"][0]["qrels"] = "missing.txt";
  expect_config_error(bad, "missing.txt");
  bad = j;
  bad["query_sets"][0].erase("offline_file");
  expect_config_error(bad, "offline_file");
  bad = j;
  bad["query_sets"][0]["collection"] = "nope";
  expect_config_error(bad, "nope");
  bad = j;
  bad["training"]["epochs"] = "three";
  expect_config_error(bad, "epochs");
  CHECK_THROWS_AS(parse_config("{", "/"), Error);
}

TEST_CASE("relative paths resolve against the config directory") {
  ToyWorkspace ws;
  auto j = ws.config_json();
  j["collections"][0]["corpus"] = "data/corpus.jsonl";
  j["output_dir"] = "out";
  testing::write_file(ws.dir / "cfg.json", j.dump());
  const auto c = load_config(ws.dir / "cfg.json");
  CHECK(c.collections[0].corpus == ws.dir / "data/corpus.jsonl");
  CHECK(c.output_dir == ws.dir / "out");
}

TEST_CASE("recipe names") {
  CHECK(parse_recipe("inpars-light") == Recipe::kInparsLight);
  CHECK(parse_recipe("all_domain") == Recipe::kAllDomain);
  CHECK(recipe_name(Recipe::kEvalOnly) == "eval_only");
  CHECK_THROWS_AS(parse_recipe("fast"), Error);
}

TEST_CASE("re-ranking examples") {
  const Corpus corpus({{"a", std::nullopt, "x y"}, {"b", std::nullopt, "x"}, {"c", std::nullopt, "x z z"},
                       {"d", std::nullopt, "unrelated"}});
  const Bm25Retriever retriever(corpus, {});
  const std::vector<QueryRecord> queries{{"q1", "x", std::nullopt}, {"q2", "nothing", std::nullopt}};

  const auto base = bm25_run(retriever, queries, 100);
  REQUIRE(base.at("q1").size() == 3);
  CHECK(base.at("q2").empty());

  // Constant scores: order collapses to doc id.
  const auto constant = rerank(testing::ConstantScorer{}, retriever, corpus, queries, 100);
  const auto& list = constant.at("q1");
  REQUIRE(list.size() == 3);
  CHECK(list[0].doc_id == "a");
  CHECK(list[1].doc_id == "b");
  CHECK(list[2].doc_id == "c");
  CHECK(list[2].rank == 3);

  // Depth bounds the candidate set.
  const auto shallow = rerank(testing::ConstantScorer{}, retriever, corpus, queries, 2);
  CHECK(shallow.at("q1").size() == 2);
  std::set<std::string> top2{base.at("q1")[0].doc_id, base.at("q1")[1].doc_id};
  CHECK(top2.count(shallow.at("q1")[0].doc_id));
  CHECK(top2.count(shallow.at("q1")[1].doc_id));
}

TEST_CASE("a scorer that reproduces BM25 leaves the run unchanged") {
  const auto toy = testing::separable_toy(3, 20, 10, 5);
  const Bm25Retriever retriever(toy.corpus, {});
  struct Bm25Scorer : Scorer {
    const Bm25Retriever* r;
    const Corpus* c;
    double score(std::string_view q, const Document& d) const override {
      return r->score(q, *c->ordinal_of(d.doc_id));
    }
  } scorer;
  scorer.r = &retriever;
  scorer.c = &toy.corpus;
  const auto a = bm25_run(retriever, toy.eval_queries, 100);
  const auto b = rerank(scorer, retriever, toy.corpus, toy.eval_queries, 100);
  REQUIRE(a.size() == b.size());
  for (const auto& [qid, list] : a) {
    REQUIRE(list.size() == b.at(qid).size());
    for (std::size_t i = 0; i < list.size(); ++i) CHECK(list[i].doc_id == b.at(qid)[i].doc_id);
  }
}

TEST_CASE("eval_only with an external run") {
  ToyWorkspace ws;
  const auto ideal_run = ws.dir / "ideal.run";
  std::string text;
  for (const auto& q : ws.toy.eval_queries) {
    for (const auto& [doc, grade] : ws.toy.qrels.judgments().at(q.query_id)) {
      if (grade > 0) text += q.query_id + " Q0 " + doc + " 1 1.0 ideal\n";
    }
  }
  testing::write_file(ideal_run, text);
  auto j = ws.config_json();
  j["collections"][0]["external_run"] = ideal_run.string();
  j.erase("query_sets");
  j["collections"][0].erase("query_set");
  const auto out = run_recipe(ws.config(j), Recipe::kEvalOnly);
  const auto report = json::parse(read(out.report_json));
  const auto& m = report["collections"]["toy"]["ndcg@10"];
  CHECK(m["external_run"]["mean"].get<double>() == 1.0);
  CHECK(m["bm25"]["mean"].get<double>() < 1.0);
  CHECK(m["external_run"]["significant"].get<bool>());
  CHECK(out.table.find("external_run") != std::string::npos);
}

TEST_CASE("inpars_light with an oracle checker keeps every query; reruns reuse stages") {
  ToyWorkspace ws;
  const auto cfg = ws.config();
  const testing::OracleScorer oracle(ws.toy.synthetic);
  RecipeOptions opts;
  opts.checker = &oracle;
  const auto first = run_recipe(cfg, Recipe::kInparsLight, opts);
  CHECK_FALSE(first.executed.empty());

  const auto generated = read_generated_queries(cfg.output_dir / "generated/toy.jsonl");
  CHECK(generated.size() == ws.toy.synthetic.size());
  for (const auto seed : cfg.seeds) {
    const auto checked = read_checked_queries(cfg.output_dir / fmt::format("seed-{}/checked/toy.jsonl", seed));
    REQUIRE(checked.size() == generated.size());
    for (std::size_t i = 0; i < checked.size(); ++i) {
      CHECK(checked[i].passed);
      CHECK(checked[i].query.text == generated[i].text);
    }
  }
  CHECK(read_generated_queries(cfg.output_dir / "filtered/toy.jsonl").size() == 8);

  // Second run: nothing but the injected-checker stages recompute.
  const auto model = cfg.output_dir / "seed-1/models/toy.inpars_light.model";
  const auto before = read(model);
  const auto second = run_recipe(cfg, Recipe::kInparsLight, opts);
  for (const auto& id : second.executed) CHECK_MESSAGE(id.rfind("check/", 0) == 0, id);
  CHECK(read(model) == before);
  const auto report = json::parse(read(second.report_json));
  CHECK(report["collections"]["toy"]["ndcg@10"].contains("inpars_light"));
  CHECK(report["gains"].contains("inpars"));
}

TEST_CASE("determinism, missing upstream artifacts, and the output lock") {
  ToyWorkspace ws;
  auto j = ws.config_json({3});
  const auto cfg = ws.config(j);
  run_recipe(cfg, Recipe::kInpars);
  const auto run = cfg.output_dir / "seed-3/runs/inpars/toy.run";
  const auto model = cfg.output_dir / "seed-3/models/toy.inpars.model";
  const auto run_bytes = read(run), model_bytes = read(model);

  j["output_dir"] = (ws.dir / "out2").string();
  const auto cfg2 = ws.config(j);
  run_recipe(cfg2, Recipe::kInpars);
  CHECK(read(cfg2.output_dir / "seed-3/runs/inpars/toy.run") == run_bytes);
  CHECK(read(cfg2.output_dir / "seed-3/models/toy.inpars.model") == model_bytes);

  // Upstream artifact removed: a restricted rerun names the stage to redo.
  fs::remove(cfg.output_dir / "filtered/toy.jsonl");
  RecipeOptions only_train;
  only_train.only_stage = "train";
  only_train.force = true;
  try {
    run_recipe(cfg, Recipe::kInpars, only_train);
    FAIL("expected StageError");
  } catch (const StageError& e) {
    CHECK(e.stage() == "filter");
  }
  // An unrestricted rerun regenerates it and reproduces the same outputs.
  run_recipe(cfg, Recipe::kInpars);
  CHECK(read(run) == run_bytes);

  // A live lock holder blocks the directory; a dead one is cleared.
  testing::write_file(cfg.output_dir / ".lock", std::to_string(::getpid()) + "\n");
  try {
    run_recipe(cfg, Recipe::kInpars);
    FAIL("expected busy");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kBusy);
  }
  testing::write_file(cfg.output_dir / ".lock", "999999999\n");
  CHECK_NOTHROW(run_recipe(cfg, Recipe::kInpars));
  CHECK_FALSE(fs::exists(cfg.output_dir / ".lock"));
}

TEST_CASE("report building") {
  testing::TempDir dir;
  testing::write_file(dir / "qrels.txt", "q1 0 a 1\nq2 0 b 1\nq3 0 c 1\n");
  testing::write_file(dir / "base.run", "q1 Q0 x 1 2 t\nq1 Q0 a 2 1 t\nq2 Q0 b 1 1 t\nq3 Q0 x 1 2 t\nq3 Q0 c 2 1 t\n");
  testing::write_file(dir / "s1.run", "q1 Q0 a 1 2 t\nq2 Q0 b 1 1 t\nq3 Q0 c 1 2 t\n");
  testing::write_file(dir / "s2.run", "q1 Q0 a 1 2 t\nq2 Q0 x 1 2 t\nq2 Q0 b 2 1 t\nq3 Q0 c 1 2 t\n");
  std::vector<CollectionRuns> cols{{"c", dir / "qrels.txt", {"mrr"}, dir / "base.run",
                                    {{"sys", {1, 2}, {dir / "s1.run", dir / "s2.run"}}}}};
  const auto rep = build_report("test", cols);
  const auto j = json::parse(rep.json);
  CHECK(j["collections"]["c"]["mrr"]["bm25"]["mean"].get<double>() == doctest::Approx(2.0 / 3.0));
  // Seed average: q1 1, q2 0.75, q3 1.
  CHECK(j["collections"]["c"]["mrr"]["sys"]["mean"].get<double>() == doctest::Approx(2.75 / 3.0));
  CHECK(j["collections"]["c"]["mrr"]["sys"].contains("p"));
  CHECK(j["gains"]["sys"]["wins"].get<int>() == 1);
  CHECK(rep.table.find("sys") != std::string::npos);

  cols[0].systems[0].runs.pop_back();
  CHECK_THROWS(build_report("test", cols));
}
