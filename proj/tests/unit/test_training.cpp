#include <doctest.h>

#include <fmt/format.h>

#include <cmath>
#include <set>

#include "synthrank/error.hpp"
#include "synthrank/ranker.hpp"
#include "toy_data.hpp"

using namespace synthrank;

namespace {

TrainConfig tiny_config() {
  TrainConfig c;
  c.model.dim = 8;
  c.model.hash_bits = 12;
  c.optimizer.head_lr = 0.05;
  c.optimizer.embedding_lr = 0.05;
  c.epochs = 2;
  return c;
}

std::vector<TrainingQuery> toy_queries(const testing::ToyCollection& toy) {
  std::vector<TrainingQuery> out;
  for (const auto& q : toy.synthetic) out.push_back({q.text, q.source_doc_id});
  return out;
}

}  // namespace

TEST_CASE("negative sampling excludes the positive and never repeats") {
  std::vector<std::string> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(fmt::format("d{}", i));
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto negs = sample_negatives(pool, "d3", 3, rng);
    REQUIRE(negs);
    CHECK(negs->size() == 3);
    CHECK(std::set<std::string>(negs->begin(), negs->end()).size() == 3);
    CHECK(std::find(negs->begin(), negs->end(), "d3") == negs->end());
  }
  CHECK_FALSE(sample_negatives(std::vector<std::string>{"a", "b", "c"}, "a", 3, rng));
  CHECK(sample_negatives(std::vector<std::string>{"a", "b", "c"}, "z", 3, rng));
}

TEST_CASE("negative sampling is uniform over the pool") {
  // Each of the 9 non-positive ids is drawn with probability 3/9 per call.
  std::vector<std::string> pool;
  for (int i = 0; i < 10; ++i) pool.push_back(fmt::format("d{}", i));
  Rng rng(77);
  const int draws = 30000;
  std::map<std::string, int> hits;
  int both = 0;
  for (int t = 0; t < draws; ++t) {
    auto negs = *sample_negatives(pool, "d0", 3, rng);
    for (const auto& n : negs) ++hits[n];
    const auto has = [&](const char* id) { return std::find(negs.begin(), negs.end(), id) != negs.end(); };
    both += has("d1") && has("d2");
  }
  const double p = 3.0 / 9.0;
  const double sd = std::sqrt(draws * p * (1 - p));
  CHECK(hits.size() == 9);
  for (const auto& [id, c] : hits) CHECK(std::abs(c - draws * p) < 5 * sd);
  // P(d1 and d2 both chosen) = C(7,1) / C(9,3) = 1/12.
  const double q = 1.0 / 12.0;
  CHECK(std::abs(both - draws * q) < 5 * std::sqrt(draws * q * (1 - q)));
}

TEST_CASE("optimizer step count follows the accumulation window") {
  const auto toy = testing::separable_toy(3, 40, 50, 10);
  const Bm25Retriever retriever(toy.corpus, {});
  auto cfg = tiny_config();
  cfg.negative_pool_depth = 100;
  const auto queries = toy_queries(toy);
  for (std::size_t accum : {1u, 7u, 16u, 50u, 64u}) {
    cfg.accumulation_steps = accum;
    const std::vector<TrainingSource> src{{&toy.corpus, &retriever, queries}};
    const auto r = train_single_seed(src, cfg, 1);
    const std::size_t n = queries.size() - r.skipped_queries;
    CHECK(r.instances == cfg.epochs * n);
    CHECK(r.optimizer_steps == cfg.epochs * ((n + accum - 1) / accum));
    CHECK(r.epoch_losses.size() == cfg.epochs);
  }
}

TEST_CASE("training is deterministic per seed and lowers the loss") {
  const auto toy = testing::separable_toy(5, 60, 120, 10);
  const Bm25Retriever retriever(toy.corpus, {});
  auto cfg = tiny_config();
  cfg.epochs = 8;
  cfg.negative_pool_depth = 100;
  const auto queries = toy_queries(toy);
  const std::vector<std::uint64_t> seeds{1, 2};
  const auto a = train(toy.corpus, queries, retriever, cfg, seeds, 1);
  const auto b = train(toy.corpus, queries, retriever, cfg, seeds, 2);
  REQUIRE(a.size() == 2);
  CHECK(a[0].params == b[0].params);
  CHECK(a[1].params == b[1].params);
  CHECK_FALSE(a[0].params == a[1].params);
  CHECK(a[0].epoch_losses.back() < a[0].epoch_losses.front());
  CHECK(a[0].params.all_finite());
}

TEST_CASE("continuing from a checkpoint starts from its parameters") {
  const auto toy = testing::separable_toy(5, 30, 40, 5);
  const Bm25Retriever retriever(toy.corpus, {});
  auto cfg = tiny_config();
  cfg.negative_pool_depth = 100;
  const std::vector<TrainingSource> src{{&toy.corpus, &retriever, toy_queries(toy)}};
  const auto first = train_single_seed(src, cfg, 4);
  const auto cont = train_single_seed(src, cfg, 4, &first.params);
  CHECK(cont.params.seed() == first.params.seed());
  CHECK_FALSE(cont.params == first.params);
  CHECK(cont.params.materialized_count() >= first.params.materialized_count());
}

TEST_CASE("queries without enough negatives are skipped") {
  const Corpus corpus({{"a", std::nullopt, "apple"}, {"b", std::nullopt, "apple pie"},
                       {"c", std::nullopt, "banana"}, {"d", std::nullopt, "cherry"},
                       {"e", std::nullopt, "apple cherry banana"}});
  const Bm25Retriever retriever(corpus, {});
  auto cfg = tiny_config();
  cfg.negative_pool_depth = 10;
  const std::vector<TrainingQuery> qs{{"apple", "a"}, {"banana cherry apple pie", "b"}};
  const std::vector<TrainingSource> src{{&corpus, &retriever, qs}};
  const auto r = train_single_seed(src, cfg, 1);
  CHECK(r.skipped_queries == 1);
  CHECK(r.instances == cfg.epochs);

  const std::vector<TrainingSource> none{{&corpus, &retriever, {{"apple", "a"}}}};
  CHECK_THROWS_AS(train_single_seed(none, cfg, 1), Error);
  const std::vector<TrainingSource> missing{{&corpus, &retriever, {{"apple", "zz"}}}};
  CHECK_THROWS_AS(train_single_seed(missing, cfg, 1), Error);
  CHECK_THROWS_AS(train_single_seed({}, cfg, 1), Error);
  cfg.negative_pool_depth = 3;
  CHECK_THROWS_AS(cfg.validate(), Error);
}
