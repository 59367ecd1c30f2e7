#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"

using namespace synthrank;

namespace {

RankedList ranked(const std::string& qid, std::vector<std::string> docs) {
  RankedList out;
  for (std::size_t i = 0; i < docs.size(); ++i) {
    out.push_back({qid, docs[i], static_cast<int>(i + 1), 10.0 - static_cast<double>(i), "t"});
  }
  return out;
}

}  // namespace

TEST_CASE("hand-computed values") {
  Qrels qrels;
  qrels.add({"q", "a", 0});
  qrels.add({"q", "b", 2});
  qrels.add({"q", "c", 1});
  RunSet run;
  run["q"] = ranked("q", {"a", "b", "x", "c"});
  CHECK(mrr(run, qrels).values.at("q") == 0.5);
  CHECK(mean_average_precision(run, qrels).values.at("q") == doctest::Approx((0.5 + 0.5) / 2));
  const double dcg = 2 / std::log2(3.0) + 1 / std::log2(5.0);
  const double idcg = 2 + 1 / std::log2(3.0);
  CHECK(ndcg_at_k(run, qrels, 10).values.at("q") == doctest::Approx(dcg / idcg).epsilon(1e-14));
  CHECK(ndcg_at_k(run, qrels, 2).values.at("q") ==
        doctest::Approx((2 / std::log2(3.0)) / idcg).epsilon(1e-14));
}

TEST_CASE("query inclusion rules") {
  Qrels qrels;
  qrels.add({"judged", "a", 1});
  qrels.add({"zeros", "a", 0});
  RunSet run;
  run["judged"] = ranked("judged", {"b", "a"});
  run["zeros"] = ranked("zeros", {"a"});
  run["unjudged"] = ranked("unjudged", {"a"});
  const auto m = mrr(run, qrels);
  CHECK(m.values.size() == 2);
  CHECK(m.excluded == 1);
  CHECK(m.values.at("zeros") == 0.0);
  const auto ap = mean_average_precision(run, qrels);
  CHECK(ap.values.size() == 1);
  CHECK(ap.excluded == 2);
  CHECK(ndcg_at_k(run, qrels, 10).values.at("zeros") == 0.0);
  CHECK(m.mean() == doctest::Approx(0.25));
  CHECK(PerQueryScores{}.mean() == 0.0);
}

TEST_CASE("duplicates count once") {
  Qrels qrels;
  qrels.add({"q", "a", 1});
  RunSet run;
  run["q"] = ranked("q", {"a", "a", "a"});
  CHECK(ndcg_at_k(run, qrels, 10).values.at("q") == 1.0);
  CHECK(mean_average_precision(run, qrels).values.at("q") == 1.0);
}

TEST_CASE("random instances against definitional oracles") {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    const auto inst = testing::random_metric_instance(rng);
    for (const std::string metric : {"mrr", "map", "ndcg@10", "ndcg@3"}) {
      const std::size_t k = metric == "ndcg@3" ? 3 : 10;
      const auto want = testing::metric_oracle(metric.substr(0, 4) == "ndcg" ? "ndcg" : metric,
                                               inst.run, inst.qrels, k);
      const auto got = evaluate_metric(inst.run, inst.qrels, metric);
      REQUIRE(got.values.size() == want.size());
      for (const auto& [qid, v] : want) CHECK(std::abs(got.values.at(qid) - v) <= 1e-9);
      CHECK(got.excluded == inst.run.size() - want.size());
    }
  }
}

TEST_CASE("metric names") {
  CHECK(evaluate_metric({}, {}, "ndcg@20").metric == "ndcg@20");
  for (const char* bad : {"ndcg@", "ndcg@0", "ndcg@x", "p@10", "MRR"}) {
    CHECK_THROWS_AS(evaluate_metric({}, {}, bad), Error);
  }
}

TEST_CASE("bad rank sequences are rejected") {
  RunSet run;
  run["q"] = ranked("q", {"a", "b"});
  run["q"][1].rank = 3;
  Qrels qrels;
  qrels.add({"q", "a", 1});
  CHECK_THROWS_AS(mrr(run, qrels), Error);
}
