#pragma once

// Trainable re-ranker: a hashed-feature pooled-embedding model with a linear
// scoring head, trained with InfoNCE on BM25-mined negatives.
//
//   score(q, d) = head . sum_f weight_f * E[f] + bias
//
// Features come from the truncated token streams: query unigrams and document
// unigrams (each group weighted by count / group length), plus exact-match
// indicators for query terms found in the document (weighted by count).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "synthrank/bm25.hpp"
#include "synthrank/corpus.hpp"
#include "synthrank/random.hpp"

namespace synthrank {

struct TruncationLimits {
  std::size_t max_query_tokens = 32;
  std::size_t max_doc_tokens = 477;
};

/// Right-truncates both token streams to their limits.
std::pair<std::vector<std::string>, std::vector<std::string>> truncate_inputs(
    std::span<const std::string> query_tokens, std::span<const std::string> doc_tokens,
    const TruncationLimits& limits = {});

struct RankerConfig {
  std::size_t dim = 64;
  unsigned hash_bits = 20;
  TruncationLimits truncation;
  TokenizerOptions tokenizer;
  double init_scale = 0.1;
  bool zero_head = false;

  void validate() const;
};

enum class FeatureGroup : std::uint8_t { kQuery, kDoc, kMatch };

/// Slot in [0, 2^hash_bits) for a feature; FNV-1a over the group tag and term.
std::uint64_t feature_slot(FeatureGroup group, std::string_view term, unsigned hash_bits);

/// Term-agnostic match feature, counted once per matched query token.
inline constexpr std::string_view kAnyMatchTerm = "\x01*";

struct FeatureVector {
  std::map<std::uint64_t, std::uint32_t> query_counts;
  std::map<std::uint64_t, std::uint32_t> doc_counts;
  std::map<std::uint64_t, std::uint32_t> match_counts;
  std::size_t query_length = 0;
  std::size_t doc_length = 0;

  bool empty() const { return query_counts.empty() && doc_counts.empty() && match_counts.empty(); }
  /// Pooling weight per slot, merged across groups, ascending by slot.
  std::vector<std::pair<std::uint64_t, double>> pooling_weights() const;
};

/// Inputs must already be truncated. An empty query yields an empty vector:
/// without a query there is no interaction to score.
FeatureVector extract_features(std::span<const std::string> query_tokens,
                               std::span<const std::string> doc_tokens, unsigned hash_bits);

/// Model parameters. The embedding table is conceptually dense (2^hash_bits x
/// dim) but rows are materialized on first write; an untouched row equals its
/// seeded initial value times the accumulated weight-decay factor.
class RankerParams {
 public:
  RankerParams(const RankerConfig& config, std::uint64_t seed);

  const RankerConfig& config() const { return config_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t dim() const { return config_.dim; }

  std::span<const double> head() const { return head_; }
  std::span<double> head() { return head_; }
  double bias() const { return bias_; }
  double& bias() { return bias_; }

  /// Current value of an embedding row.
  void row(std::uint64_t slot, std::span<double> out) const;
  /// Mutable row, materialized from its current value if needed.
  std::span<double> materialize(std::uint64_t slot);
  bool is_materialized(std::uint64_t slot) const { return rows_.count(slot) != 0; }
  std::size_t materialized_count() const { return rows_.size(); }
  /// Materialized rows, ascending by slot.
  std::vector<std::uint64_t> materialized_slots() const;

  /// Multiplies every embedding row (materialized or not) by `factor`.
  void scale_embeddings(double factor);
  double embedding_decay() const { return embedding_decay_; }

  bool all_finite() const;

  void save(std::ostream& out) const;
  static RankerParams load(std::istream& in);
  void save(const std::filesystem::path& path) const;
  static RankerParams load(const std::filesystem::path& path);

  friend bool operator==(const RankerParams& a, const RankerParams& b);

 private:
  void initial_row(std::uint64_t slot, std::span<double> out) const;

  RankerConfig config_;
  std::uint64_t seed_ = 0;
  std::vector<double> head_;
  double bias_ = 0.0;
  double embedding_decay_ = 1.0;
  std::unordered_map<std::uint64_t, std::vector<double>> rows_;
};

/// Scores one (query, document) pair. Implementations must be thread-safe.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(std::string_view query_text, const Document& doc) const = 0;
};

/// Tokenize, truncate, featurize for the given model configuration.
FeatureVector featurize(const RankerConfig& config, std::string_view query_text,
                        std::string_view doc_text);

/// Pooled embedding for a feature vector.
std::vector<double> pooled_embedding(const RankerParams& params, const FeatureVector& features);

double score_features(const RankerParams& params, const FeatureVector& features);
double score(const RankerParams& params, std::string_view query_text, const Document& doc);

class RankerScorer : public Scorer {
 public:
  explicit RankerScorer(const RankerParams& params) : params_(&params) {}
  double score(std::string_view query_text, const Document& doc) const override;

 private:
  const RankerParams* params_;
};

/// -log(exp(s_pos) / (exp(s_pos) + sum_j exp(s_neg_j))), max-shifted.
double infonce_loss(double positive_score, std::span<const double> negative_scores);

/// Sparse gradient over head, bias, and the embedding rows that were touched.
struct RankerGradient {
  std::vector<double> head;
  double bias = 0.0;
  std::unordered_map<std::uint64_t, std::vector<double>> rows;

  explicit RankerGradient(std::size_t dim = 0) : head(dim, 0.0) {}
  void add_scaled(const RankerGradient& other, double scale);
  void scale(double factor);
  void clear();
};

struct LossAndGradient {
  double loss = 0.0;
  RankerGradient gradient;
};

/// InfoNCE over one positive (index 0) and its negatives, with the analytic gradient.
LossAndGradient infonce_grad(const RankerParams& params, std::string_view query_text,
                             std::span<const Document* const> docs);
LossAndGradient infonce_grad(const RankerParams& params,
                             std::span<const FeatureVector> features);

/// Piecewise linear: 0 -> base over the first ceil(warmup_fraction * T)
/// steps, then base -> 0 at step T.
class LrSchedule {
 public:
  LrSchedule(double base_lr, std::size_t total_steps, double warmup_fraction = 0.2);

  double base_lr() const { return base_lr_; }
  std::size_t total_steps() const { return total_steps_; }
  std::size_t warmup_steps() const { return warmup_steps_; }
  /// Throws Error(kInvalidArgument) if step > total_steps.
  double at(std::size_t step) const;

 private:
  double base_lr_;
  std::size_t total_steps_;
  std::size_t warmup_steps_;
};

double lr_at_step(const LrSchedule& schedule, std::size_t step);

struct AdamWConfig {
  double head_lr = 2e-4;
  double embedding_lr = 2e-5;
  double weight_decay = 1e-7;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Decoupled-weight-decay Adam with two parameter groups: "head" (head
/// weights and bias) and "embeddings".
class AdamW {
 public:
  explicit AdamW(const AdamWConfig& config) : config_(config) {}

  const AdamWConfig& config() const { return config_; }
  std::size_t steps_taken() const { return steps_; }

  /// One update with each group's lr = group base lr * multiplier.
  /// Throws Error(kNumeric) naming the group on a non-finite gradient.
  void step(RankerParams& params, const RankerGradient& grad, double lr_multiplier);
  /// Uses schedule.at(steps_taken()) / schedule.base_lr() as the multiplier.
  void step(RankerParams& params, const RankerGradient& grad, const LrSchedule& schedule);

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };

  AdamWConfig config_;
  std::size_t steps_ = 0;
  Moments head_;
  Moments bias_;
  std::unordered_map<std::uint64_t, Moments> rows_;
};

/// `n` distinct ids drawn uniformly from `pool` minus `positive_doc_id`;
/// nullopt when fewer than `n` candidates remain.
std::optional<std::vector<std::string>> sample_negatives(std::span<const std::string> pool,
                                                         std::string_view positive_doc_id,
                                                         std::size_t n, Rng& rng);

struct TrainConfig {
  RankerConfig model;
  AdamWConfig optimizer;
  std::size_t epochs = 1;
  std::size_t accumulation_steps = 16;
  std::size_t negatives = 3;
  std::size_t negative_pool_depth = 1000;
  double warmup_fraction = 0.2;

  void validate() const;
};

struct TrainingQuery {
  std::string text;
  std::string positive_doc_id;
};

/// One collection's training data with the retriever its negatives come from.
struct TrainingSource {
  const Corpus* corpus = nullptr;
  const Bm25Retriever* retriever = nullptr;
  std::vector<TrainingQuery> queries;
};

struct TrainResult {
  RankerParams params;
  std::vector<double> epoch_losses;
  std::size_t optimizer_steps = 0;
  std::size_t instances = 0;
  std::size_t skipped_queries = 0;
};

/// Trains one model on the union of sources. With `init`, training continues
/// from those parameters (fresh optimizer state and schedule).
TrainResult train_single_seed(std::span<const TrainingSource> sources, const TrainConfig& config,
                              std::uint64_t seed, const RankerParams* init = nullptr);

/// One model per seed; seeds run as independent jobs, up to `parallel_jobs` at a time.
std::vector<TrainResult> train(const Corpus& corpus, std::span<const TrainingQuery> queries,
                               const Bm25Retriever& retriever, const TrainConfig& config,
                               std::span<const std::uint64_t> seeds, unsigned parallel_jobs = 1);

}  // namespace synthrank
