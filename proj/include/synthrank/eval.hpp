#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "synthrank/corpus.hpp"

namespace synthrank {

/// Per-query values of one metric. Queries are evaluated iff they appear in
/// both the run and the qrels (MAP additionally needs at least one relevant
/// document); `excluded` counts run queries that were skipped.
struct PerQueryScores {
  std::string metric;
  std::map<std::string, double, std::less<>> values;
  std::size_t excluded = 0;

  /// Arithmetic mean in query-id order; 0 for an empty set.
  double mean() const;
};

PerQueryScores mrr(const RunSet& run, const Qrels& qrels);
PerQueryScores mean_average_precision(const RunSet& run, const Qrels& qrels);
/// Linear gain, 1/log2(rank + 1) discount; 0 when the ideal DCG is 0.
PerQueryScores ndcg_at_k(const RunSet& run, const Qrels& qrels, std::size_t k);

/// "mrr", "map", or "ndcg@K".
PerQueryScores evaluate_metric(const RunSet& run, const Qrels& qrels, std::string_view metric);

/// Metric values for every (query, seed) cell.
class SeedRunSet {
 public:
  SeedRunSet(std::string metric, std::vector<std::uint64_t> seeds);

  /// Adds every query of one seed's evaluation.
  void add(std::uint64_t seed, const PerQueryScores& scores);
  void set(std::string_view query_id, std::uint64_t seed, double value);

  const std::string& metric() const { return metric_; }
  const std::vector<std::uint64_t>& seeds() const { return seeds_; }
  const std::map<std::pair<std::string, std::uint64_t>, double>& cells() const { return cells_; }

 private:
  std::string metric_;
  std::vector<std::uint64_t> seeds_;
  std::map<std::pair<std::string, std::uint64_t>, double> cells_;
};

/// Per-query mean over seeds. Throws Error(kNotFound) naming the first missing (query, seed).
PerQueryScores seed_average(const SeedRunSet& runs);

struct SignificanceResult {
  double t_statistic = 0.0;
  double p_value = 1.0;
  double threshold = 0.05;
  bool significant = false;
  std::size_t n = 0;
  double mean_difference = 0.0;
  /// Differences have zero variance: t = 0 and p = 1 if they are all zero,
  /// otherwise t = +-inf and p = 0.
  bool degenerate = false;
};

/// 0.01 for query sets larger than 1000, 0.05 otherwise.
double default_significance_threshold(std::size_t query_count);

/// Two-sided paired t-test on a_i - b_i over identical query sets (n >= 2).
SignificanceResult paired_t_test(const PerQueryScores& a, const PerQueryScores& b,
                                 double threshold);

/// Regularized incomplete beta I_x(a, b) by continued fraction.
double regularized_incomplete_beta(double a, double b, double x);
/// P(|T| >= |t|) for Student's t with `dof` degrees of freedom.
double student_t_two_sided_p(double t, double dof);

/// (dataset, metric) -> value.
using ResultTable = std::map<std::pair<std::string, std::string>, double>;

struct GainReport {
  ResultTable ratios;
  double average_gain = 0.0;
  std::size_t wins = 0;
};

/// Ratio model/baseline per cell, their mean, and the count of ratios > 1.
GainReport aggregate_gains(const ResultTable& model, const ResultTable& baseline);

/// Fixed-width text table: one row per system, one column per (dataset, metric).
/// `markers` holds optional per-cell prefixes (e.g. significance labels).
std::string format_results_table(
    const std::vector<std::pair<std::string, ResultTable>>& rows,
    const std::map<std::pair<std::string, std::pair<std::string, std::string>>, std::string>&
        markers = {});

}  // namespace synthrank
