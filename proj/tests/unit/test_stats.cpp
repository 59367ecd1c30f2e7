#include <doctest.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <nlohmann/json.hpp>
#include <numbers>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"
#include "synthrank/random.hpp"

using namespace synthrank;

namespace {

PerQueryScores scores(const std::vector<double>& v, const std::string& prefix = "q") {
  PerQueryScores s;
  s.metric = "m";
  for (std::size_t i = 0; i < v.size(); ++i) s.values[prefix + std::to_string(i)] = v[i];
  return s;
}

}  // namespace

TEST_CASE("incomplete beta closed forms") {
  for (double x : {0.0, 0.1, 0.37, 0.5, 0.9, 1.0}) {
    for (double a : {0.5, 1.0, 2.5, 7.0}) {
      CHECK(regularized_incomplete_beta(a, 1.0, x) == doctest::Approx(std::pow(x, a)).epsilon(1e-13));
      CHECK(regularized_incomplete_beta(1.0, a, x) ==
            doctest::Approx(1 - std::pow(1 - x, a)).epsilon(1e-13));
    }
  }
  for (double a : {0.5, 3.0, 40.0}) {
    CHECK(regularized_incomplete_beta(a, a, 0.5) == doctest::Approx(0.5).epsilon(1e-13));
  }
  CHECK_THROWS_AS(regularized_incomplete_beta(0.0, 1.0, 0.5), Error);
  CHECK_THROWS_AS(regularized_incomplete_beta(1.0, 1.0, 1.5), Error);
}

TEST_CASE("student t tails for one and two degrees of freedom") {
  for (double t : {0.0, 0.3, 1.0, 2.5, 10.0, -4.0}) {
    CHECK(student_t_two_sided_p(t, 1) ==
          doctest::Approx(1 - 2 * std::atan(std::abs(t)) / std::numbers::pi).epsilon(1e-12));
    CHECK(student_t_two_sided_p(t, 2) ==
          doctest::Approx(1 - std::abs(t) / std::sqrt(2 + t * t)).epsilon(1e-12));
  }
  CHECK(student_t_two_sided_p(std::numeric_limits<double>::infinity(), 5) == 0.0);
  CHECK_THROWS_AS(student_t_two_sided_p(1.0, 0.0), Error);
}

TEST_CASE("paired t-test matches the high-precision fixtures") {
  std::ifstream in(std::string(SYNTHRANK_FIXTURES) + "/ttest_reference.json");
  REQUIRE(in);
  const auto cases = nlohmann::json::parse(in);
  REQUIRE(cases.size() == 20);
  for (const auto& c : cases) {
    const auto a = scores(c["a"].get<std::vector<double>>());
    const auto b = scores(c["b"].get<std::vector<double>>());
    const auto r = paired_t_test(a, b, 0.05);
    CHECK(std::abs(r.t_statistic - c["t"].get<double>()) <= 1e-6);
    CHECK(std::abs(r.p_value - c["p"].get<double>()) <= 1e-6);
    CHECK(r.significant == (r.p_value < 0.05));
    CHECK(r.n == a.values.size());
  }
}

TEST_CASE("swapping sides negates t and keeps p") {
  Rng rng(12);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> x, y;
    const std::size_t n = 2 + uniform_below(rng, 60);
    for (std::size_t i = 0; i < n; ++i) {
      x.push_back(uniform01(rng));
      y.push_back(uniform01(rng));
    }
    const auto ab = paired_t_test(scores(x), scores(y), 0.05);
    const auto ba = paired_t_test(scores(y), scores(x), 0.05);
    CHECK(ab.t_statistic == -ba.t_statistic);
    CHECK(ab.p_value == ba.p_value);
  }
}

TEST_CASE("zero-variance differences") {
  const auto same = paired_t_test(scores({0.1, 0.5, 0.9}), scores({0.1, 0.5, 0.9}), 0.05);
  CHECK(same.degenerate);
  CHECK(same.t_statistic == 0.0);
  CHECK(same.p_value == 1.0);
  CHECK_FALSE(same.significant);

  const auto win = paired_t_test(scores({1.0, 1.0, 1.0}), scores({0.5, 0.5, 0.5}), 0.05);
  CHECK(win.degenerate);
  CHECK(win.t_statistic == std::numeric_limits<double>::infinity());
  CHECK(win.p_value == 0.0);
  CHECK(win.significant);
}

TEST_CASE("t-test input validation") {
  CHECK_THROWS_AS(paired_t_test(scores({1}), scores({0}), 0.05), Error);
  CHECK_THROWS_AS(paired_t_test(scores({1, 2}), scores({0, 1}, "x"), 0.05), Error);
  CHECK_THROWS_AS(paired_t_test(scores({1, 2}), scores({0, 1, 2}), 0.05), Error);
  CHECK_THROWS_AS(paired_t_test(scores({1, 2}), scores({0, 1}), 0.0), Error);
  CHECK_THROWS_AS(paired_t_test(scores({1, 2}), scores({0, 1}), 1.0), Error);
  CHECK(default_significance_threshold(1000) == 0.05);
  CHECK(default_significance_threshold(1001) == 0.01);
}

TEST_CASE("seed averaging") {
  SeedRunSet set("ndcg@10", {1, 2, 3});
  set.add(1, scores({0.1, 0.4}));
  set.add(2, scores({0.2, 0.5}));
  set.set("q0", 3, 0.6);
  CHECK_THROWS_AS(seed_average(set), Error);
  try {
    seed_average(set);
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kNotFound);
    CHECK(std::string(e.what()).find("q1") != std::string::npos);
  }
  set.set("q1", 3, 0.0);
  const auto avg = seed_average(set);
  CHECK(avg.metric == "ndcg@10");
  CHECK(avg.values.at("q0") == doctest::Approx(0.3));
  CHECK(avg.values.at("q1") == doctest::Approx(0.3));
  CHECK_THROWS_AS(set.set("q0", 9, 0.1), Error);
  CHECK_THROWS_AS(SeedRunSet("m", {}), Error);
  CHECK_THROWS_AS(SeedRunSet("m", {1, 1}), Error);
}

TEST_CASE("gains and wins") {
  ResultTable base{{{"a", "m"}, 0.5}, {{"b", "m"}, 0.2}, {{"c", "m"}, 0.4}};
  ResultTable model{{{"a", "m"}, 0.6}, {{"b", "m"}, 0.2}, {{"c", "m"}, 0.3}};
  const auto g = aggregate_gains(model, base);
  CHECK(g.average_gain == doctest::Approx((1.2 + 1.0 + 0.75) / 3));
  CHECK(g.wins == 1);
  CHECK(g.ratios.at({"c", "m"}) == doctest::Approx(0.75));
  CHECK_THROWS_AS(aggregate_gains({}, {}), Error);
  ResultTable partial{{{"a", "m"}, 0.6}};
  CHECK_THROWS_AS(aggregate_gains(partial, base), Error);
  ResultTable zero{{{"a", "m"}, 0.0}};
  CHECK_THROWS_AS(aggregate_gains(partial, zero), Error);
}

TEST_CASE("results table layout") {
  const std::vector<std::pair<std::string, ResultTable>> rows{
      {"bm25", {{{"robust04", "ndcg@20"}, 0.4}, {{"nq", "ndcg@10"}, 0.3}}},
      {"ranker", {{{"robust04", "ndcg@20"}, 0.51234}}}};
  const auto text = format_results_table(rows, {{{"ranker", {"robust04", "ndcg@20"}}, "*"}});
  CHECK(text ==
        "                nq    robust04\n"
        "           ndcg@10     ndcg@20\n"
        "bm25        0.3000      0.4000\n"
        "ranker           -     *0.5123\n");
}
