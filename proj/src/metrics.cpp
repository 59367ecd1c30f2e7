#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <unordered_set>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"

namespace synthrank {

namespace {

// Grades in rank order; a document listed twice only counts the first time.
std::vector<int> ranked_grades(const RankedList& list, const Qrels& qrels,
                               std::string_view query_id) {
  std::vector<int> grades;
  grades.reserve(list.size());
  std::unordered_set<std::string_view> seen;
  for (const auto& e : list) {
    grades.push_back(seen.insert(e.doc_id).second ? qrels.grade(query_id, e.doc_id) : 0);
  }
  return grades;
}

PerQueryScores evaluate(const RunSet& run, const Qrels& qrels, std::string name,
                        const std::function<std::optional<double>(const std::string&,
                                                                  const std::vector<int>&)>& fn) {
  PerQueryScores out;
  out.metric = std::move(name);
  for (const auto& [qid, list] : run) {
    validate_ranked_list(qid, list);
    if (!qrels.judged(qid)) {
      ++out.excluded;
      continue;
    }
    if (auto v = fn(qid, ranked_grades(list, qrels, qid))) {
      out.values.emplace(qid, *v);
    } else {
      ++out.excluded;
    }
  }
  if (out.excluded > 0) {
    spdlog::debug("{}: {} run queries excluded (unjudged or no relevant documents)", out.metric,
                  out.excluded);
  }
  return out;
}

}  // namespace

double PerQueryScores::mean() const {
  if (values.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [qid, v] : values) sum += v;
  return sum / static_cast<double>(values.size());
}

PerQueryScores mrr(const RunSet& run, const Qrels& qrels) {
  return evaluate(run, qrels, "mrr",
                  [](const std::string&, const std::vector<int>& grades) -> std::optional<double> {
                    for (std::size_t r = 0; r < grades.size(); ++r) {
                      if (grades[r] >= 1) return 1.0 / static_cast<double>(r + 1);
                    }
                    return 0.0;
                  });
}

PerQueryScores mean_average_precision(const RunSet& run, const Qrels& qrels) {
  return evaluate(run, qrels, "map",
                  [&](const std::string& qid, const std::vector<int>& grades)
                      -> std::optional<double> {
                    const auto relevant = qrels.relevant_count(qid);
                    if (relevant == 0) return std::nullopt;
                    double sum = 0.0;
                    std::size_t hits = 0;
                    for (std::size_t r = 0; r < grades.size(); ++r) {
                      if (grades[r] < 1) continue;
                      ++hits;
                      sum += static_cast<double>(hits) / static_cast<double>(r + 1);
                    }
                    return sum / static_cast<double>(relevant);
                  });
}

PerQueryScores ndcg_at_k(const RunSet& run, const Qrels& qrels, std::size_t k) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "nDCG cutoff must be >= 1");
  return evaluate(run, qrels, fmt::format("ndcg@{}", k),
                  [&](const std::string& qid, const std::vector<int>& grades)
                      -> std::optional<double> {
                    auto dcg = [k](const std::vector<int>& g) {
                      double sum = 0.0;
                      for (std::size_t r = 0; r < std::min(k, g.size()); ++r) {
                        sum += static_cast<double>(g[r]) / std::log2(static_cast<double>(r + 2));
                      }
                      return sum;
                    };
                    auto ideal = qrels.grades(qid);
                    std::sort(ideal.begin(), ideal.end(), std::greater<>());
                    const double idcg = dcg(ideal);
                    if (idcg <= 0.0) return 0.0;
                    return dcg(grades) / idcg;
                  });
}

PerQueryScores evaluate_metric(const RunSet& run, const Qrels& qrels, std::string_view metric) {
  if (metric == "mrr") return mrr(run, qrels);
  if (metric == "map") return mean_average_precision(run, qrels);
  if (metric.starts_with("ndcg@")) {
    const auto digits = metric.substr(5);
    std::size_t k = 0;
    for (const char c : digits) {
      if (c < '0' || c > '9') {
        k = 0;
        break;
      }
      k = k * 10 + static_cast<std::size_t>(c - '0');
    }
    if (!digits.empty() && k > 0) return ndcg_at_k(run, qrels, k);
  }
  throw Error(ErrorCode::kInvalidArgument,
              "unknown metric '" + std::string(metric) + "' (expected mrr, map, or ndcg@K)");
}

}  // namespace synthrank
