#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"

namespace synthrank {

SeedRunSet::SeedRunSet(std::string metric, std::vector<std::uint64_t> seeds)
    : metric_(std::move(metric)), seeds_(std::move(seeds)) {
  if (seeds_.empty()) throw Error(ErrorCode::kInvalidArgument, "seed list is empty");
  if (std::set<std::uint64_t>(seeds_.begin(), seeds_.end()).size() != seeds_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "seed list has duplicates");
  }
}

void SeedRunSet::add(std::uint64_t seed, const PerQueryScores& scores) {
  for (const auto& [qid, v] : scores.values) set(qid, seed, v);
}

void SeedRunSet::set(std::string_view query_id, std::uint64_t seed, double value) {
  if (std::find(seeds_.begin(), seeds_.end(), seed) == seeds_.end()) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("seed {} is not in the seed list", seed));
  }
  cells_[{std::string(query_id), seed}] = value;
}

PerQueryScores seed_average(const SeedRunSet& runs) {
  std::set<std::string> queries;
  for (const auto& [key, v] : runs.cells()) queries.insert(key.first);
  PerQueryScores out;
  out.metric = runs.metric();
  for (const auto& qid : queries) {
    double sum = 0.0;
    for (const auto seed : runs.seeds()) {
      auto it = runs.cells().find({qid, seed});
      if (it == runs.cells().end()) {
        throw Error(ErrorCode::kNotFound,
                    fmt::format("missing metric value for query {} seed {}", qid, seed));
      }
      sum += it->second;
    }
    out.values.emplace(qid, sum / static_cast<double>(runs.seeds().size()));
  }
  return out;
}

double default_significance_threshold(std::size_t query_count) {
  return query_count > 1000 ? 0.01 : 0.05;
}

namespace {

// Continued fraction for I_x(a, b), modified Lentz; valid for x < (a + 1) / (a + b + 2).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw Error(ErrorCode::kNumeric, "incomplete beta continued fraction did not converge");
}

}  // namespace

double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "incomplete beta needs a, b > 0");
  }
  if (!(x >= 0.0 && x <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "incomplete beta needs x in [0, 1]");
  }
  if (x == 0.0 || x == 1.0) return x;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                           a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, double dof) {
  if (!(dof > 0.0)) throw Error(ErrorCode::kInvalidArgument, "degrees of freedom must be > 0");
  if (std::isnan(t)) throw Error(ErrorCode::kNumeric, "t statistic is NaN");
  if (std::isinf(t)) return 0.0;
  const double x = dof / (dof + t * t);
  return std::clamp(regularized_incomplete_beta(dof / 2.0, 0.5, x), 0.0, 1.0);
}

SignificanceResult paired_t_test(const PerQueryScores& a, const PerQueryScores& b,
                                 double threshold) {
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "significance threshold must be in (0, 1)");
  }
  if (a.values.size() != b.values.size()) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("paired test needs the same queries ({} vs {})", a.values.size(),
                            b.values.size()));
  }
  std::vector<double> diffs;
  diffs.reserve(a.values.size());
  for (const auto& [qid, va] : a.values) {
    auto it = b.values.find(qid);
    if (it == b.values.end()) {
      throw Error(ErrorCode::kInvalidArgument, "query " + qid + " is missing from one side");
    }
    diffs.push_back(va - it->second);
  }
  const std::size_t n = diffs.size();
  if (n < 2) throw Error(ErrorCode::kInvalidArgument, "paired test needs at least 2 queries");

  SignificanceResult r;
  r.n = n;
  r.threshold = threshold;
  double sum = 0.0;
  for (const double d : diffs) sum += d;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (const double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  r.mean_difference = mean;
  if (sd == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 1.0;
    } else {
      r.t_statistic = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p_value = 0.0;
    }
  } else {
    r.t_statistic = mean / (sd / std::sqrt(static_cast<double>(n)));
    r.p_value = student_t_two_sided_p(r.t_statistic, static_cast<double>(n - 1));
  }
  r.significant = r.p_value < threshold;
  return r;
}

GainReport aggregate_gains(const ResultTable& model, const ResultTable& baseline) {
  if (model.empty()) throw Error(ErrorCode::kInvalidArgument, "no results to aggregate");
  if (model.size() != baseline.size()) {
    throw Error(ErrorCode::kInvalidArgument, "model and baseline cover different cells");
  }
  GainReport report;
  double sum = 0.0;
  for (const auto& [cell, value] : model) {
    auto it = baseline.find(cell);
    if (it == baseline.end()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("baseline lacks {}/{}", cell.first, cell.second));
    }
    if (it->second == 0.0) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("baseline value for {}/{} is zero", cell.first, cell.second));
    }
    const double ratio = value / it->second;
    report.ratios.emplace(cell, ratio);
    sum += ratio;
    if (ratio > 1.0) ++report.wins;
  }
  report.average_gain = sum / static_cast<double>(model.size());
  return report;
}

std::string format_results_table(
    const std::vector<std::pair<std::string, ResultTable>>& rows,
    const std::map<std::pair<std::string, std::pair<std::string, std::string>>, std::string>&
        markers) {
  std::vector<std::pair<std::string, std::string>> columns;
  for (const auto& [system, table] : rows) {
    for (const auto& [cell, v] : table) {
      if (std::find(columns.begin(), columns.end(), cell) == columns.end()) columns.push_back(cell);
    }
  }
  std::size_t name_width = 6;
  for (const auto& [system, table] : rows) name_width = std::max(name_width, system.size());

  std::vector<std::size_t> widths;
  for (const auto& [dataset, metric] : columns) {
    widths.push_back(std::max<std::size_t>({10, dataset.size(), metric.size()}));
  }
  std::string out = fmt::format("{:<{}}", "", name_width);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out += fmt::format("  {:>{}}", columns[c].first, widths[c]);
  }
  out += '\n' + fmt::format("{:<{}}", "", name_width);
  for (std::size_t c = 0; c < columns.size(); ++c) {
    out += fmt::format("  {:>{}}", columns[c].second, widths[c]);
  }
  out += '\n';
  for (const auto& [system, table] : rows) {
    out += fmt::format("{:<{}}", system, name_width);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      auto it = table.find(columns[c]);
      std::string cell = "-";
      if (it != table.end()) {
        auto mk = markers.find({system, columns[c]});
        cell = (mk != markers.end() ? mk->second : std::string()) + fmt::format("{:.4f}", it->second);
      }
      out += fmt::format("  {:>{}}", cell, widths[c]);
    }
    out += '\n';
  }
  return out;
}

}  // namespace synthrank
