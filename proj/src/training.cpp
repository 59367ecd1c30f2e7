#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "synthrank/error.hpp"
#include "synthrank/ranker.hpp"

namespace synthrank {

double infonce_loss(double positive_score, std::span<const double> negative_scores) {
  double max_score = positive_score;
  for (const double s : negative_scores) max_score = std::max(max_score, s);
  double sum = std::exp(positive_score - max_score);
  for (const double s : negative_scores) sum += std::exp(s - max_score);
  return std::log(sum) - (positive_score - max_score);
}

LossAndGradient infonce_grad(const RankerParams& params,
                             std::span<const FeatureVector> features) {
  if (features.size() < 2) {
    throw Error(ErrorCode::kInvalidArgument, "InfoNCE needs a positive and at least one negative");
  }
  const std::size_t dim = params.dim();
  const auto head = params.head();

  std::vector<std::vector<std::pair<std::uint64_t, double>>> weights;
  std::vector<std::vector<double>> pooled;
  std::vector<double> scores;
  std::vector<double> row(dim);
  for (const auto& fv : features) {
    weights.push_back(fv.pooling_weights());
    std::vector<double> h(dim, 0.0);
    for (const auto& [slot, w] : weights.back()) {
      params.row(slot, row);
      for (std::size_t i = 0; i < dim; ++i) h[i] += w * row[i];
    }
    double s = params.bias();
    for (std::size_t i = 0; i < dim; ++i) s += head[i] * h[i];
    scores.push_back(s);
    pooled.push_back(std::move(h));
  }

  LossAndGradient out{infonce_loss(scores[0], std::span(scores).subspan(1)), RankerGradient(dim)};
  const double max_score = *std::max_element(scores.begin(), scores.end());
  double z = 0.0;
  for (const double s : scores) z += std::exp(s - max_score);

  auto& grad = out.gradient;
  for (std::size_t j = 0; j < features.size(); ++j) {
    const double coef = std::exp(scores[j] - max_score) / z - (j == 0 ? 1.0 : 0.0);
    grad.bias += coef;
    for (std::size_t i = 0; i < dim; ++i) grad.head[i] += coef * pooled[j][i];
    for (const auto& [slot, w] : weights[j]) {
      auto& g = grad.rows[slot];
      if (g.empty()) g.assign(dim, 0.0);
      for (std::size_t i = 0; i < dim; ++i) g[i] += coef * w * head[i];
    }
  }
  return out;
}

LossAndGradient infonce_grad(const RankerParams& params, std::string_view query_text,
                             std::span<const Document* const> docs) {
  std::vector<FeatureVector> features;
  features.reserve(docs.size());
  for (const Document* doc : docs) {
    features.push_back(featurize(params.config(), query_text, doc->combined_text()));
  }
  return infonce_grad(params, features);
}

std::optional<std::vector<std::string>> sample_negatives(std::span<const std::string> pool,
                                                         std::string_view positive_doc_id,
                                                         std::size_t n, Rng& rng) {
  std::vector<std::size_t> candidates;
  candidates.reserve(pool.size());
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (pool[i] != positive_doc_id) candidates.push_back(i);
  }
  if (candidates.size() < n) return std::nullopt;
  std::vector<std::string> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, candidates.size() - i));
    std::swap(candidates[i], candidates[j]);
    out.push_back(pool[candidates[i]]);
  }
  return out;
}

void TrainConfig::validate() const {
  model.validate();
  if (accumulation_steps == 0) {
    throw Error(ErrorCode::kInvalidArgument, "accumulation steps must be >= 1");
  }
  if (negatives == 0) throw Error(ErrorCode::kInvalidArgument, "need at least one negative");
  if (negative_pool_depth <= negatives) {
    throw Error(ErrorCode::kInvalidArgument, "negative pool must be deeper than the negative count");
  }
}

namespace {

struct PreparedQuery {
  std::size_t source = 0;
  std::size_t query = 0;
  std::vector<std::string> pool;
};

// Tokenized documents, memoized per training run.
class DocTokens {
 public:
  DocTokens(const Corpus& corpus, const TokenizerOptions& options)
      : corpus_(&corpus), options_(options) {}

  const std::vector<std::string>& get(std::string_view doc_id) {
    const auto ord = *corpus_->ordinal_of(doc_id);
    auto it = cache_.find(ord);
    if (it == cache_.end()) {
      it = cache_.emplace(ord, tokenize((*corpus_)[ord].combined_text(), options_)).first;
    }
    return it->second;
  }

 private:
  const Corpus* corpus_;
  TokenizerOptions options_;
  std::unordered_map<std::size_t, std::vector<std::string>> cache_;
};

}  // namespace

TrainResult train_single_seed(std::span<const TrainingSource> sources, const TrainConfig& config,
                              std::uint64_t seed, const RankerParams* init) {
  config.validate();
  if (sources.empty()) throw Error(ErrorCode::kInvalidArgument, "no training sources");

  std::vector<PreparedQuery> prepared;
  std::size_t skipped = 0;
  for (std::size_t s = 0; s < sources.size(); ++s) {
    const auto& src = sources[s];
    if (src.corpus == nullptr || src.retriever == nullptr) {
      throw Error(ErrorCode::kInvalidArgument, "training source lacks a corpus or retriever");
    }
    if (src.retriever->combined().doc_count() != src.corpus->size()) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("training source {}: retriever and corpus differ in size", s));
    }
    for (std::size_t q = 0; q < src.queries.size(); ++q) {
      const auto& query = src.queries[q];
      if (!src.corpus->ordinal_of(query.positive_doc_id)) {
        throw Error(ErrorCode::kNotFound,
                    fmt::format("positive document \"{}\" is not in the corpus",
                                query.positive_doc_id));
      }
      PreparedQuery pq{s, q, {}};
      for (auto& hit : src.retriever->retrieve(query.text, config.negative_pool_depth)) {
        pq.pool.push_back(std::move(hit.doc_id));
      }
      const auto usable = static_cast<std::size_t>(
          std::count_if(pq.pool.begin(), pq.pool.end(),
                        [&](const std::string& id) { return id != query.positive_doc_id; }));
      if (usable < config.negatives) {
        ++skipped;
        continue;
      }
      prepared.push_back(std::move(pq));
    }
  }
  if (skipped > 0) {
    spdlog::info("skipped {} training queries with fewer than {} BM25 negatives", skipped,
                 config.negatives);
  }
  if (prepared.empty()) throw Error(ErrorCode::kInvalidArgument, "no trainable queries");

  TrainResult result{init ? *init : RankerParams(config.model, seed), {}, 0, 0, skipped};
  RankerParams& params = result.params;
  const std::size_t steps_per_epoch =
      (prepared.size() + config.accumulation_steps - 1) / config.accumulation_steps;
  const LrSchedule schedule(1.0, config.epochs * steps_per_epoch, config.warmup_fraction);
  AdamW optimizer(config.optimizer);
  Rng rng(mix_seed(seed, 0x747261696EULL));

  std::vector<DocTokens> tokens;
  for (const auto& src : sources) tokens.emplace_back(*src.corpus, params.config().tokenizer);

  std::vector<std::size_t> order(prepared.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  RankerGradient accumulated(params.dim());
  std::vector<FeatureVector> features(config.negatives + 1);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_in_place(order, rng);
    double loss_sum = 0.0;
    std::size_t in_window = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const auto& pq = prepared[order[k]];
      const auto& query = sources[pq.source].queries[pq.query];
      const auto negatives = sample_negatives(pq.pool, query.positive_doc_id, config.negatives, rng);

      const auto q_tokens = tokenize(query.text, params.config().tokenizer);
      auto featurize_doc = [&](std::string_view doc_id) {
        const auto [qt, dt] =
            truncate_inputs(q_tokens, tokens[pq.source].get(doc_id), params.config().truncation);
        return extract_features(qt, dt, params.config().hash_bits);
      };
      features[0] = featurize_doc(query.positive_doc_id);
      for (std::size_t j = 0; j < negatives->size(); ++j) {
        features[j + 1] = featurize_doc((*negatives)[j]);
      }

      auto lg = infonce_grad(params, features);
      loss_sum += lg.loss;
      accumulated.add_scaled(lg.gradient, 1.0);
      ++in_window;
      ++result.instances;
      if (in_window == config.accumulation_steps || k + 1 == order.size()) {
        accumulated.scale(1.0 / static_cast<double>(in_window));
        optimizer.step(params, accumulated, schedule);
        accumulated.clear();
        in_window = 0;
      }
    }
    result.epoch_losses.push_back(loss_sum / static_cast<double>(order.size()));
    spdlog::debug("seed {} epoch {}: mean loss {:.6f}", seed, epoch + 1,
                  result.epoch_losses.back());
  }
  result.optimizer_steps = optimizer.steps_taken();
  if (!params.all_finite()) {
    throw Error(ErrorCode::kNumeric, fmt::format("training with seed {} diverged", seed));
  }
  return result;
}

std::vector<TrainResult> train(const Corpus& corpus, std::span<const TrainingQuery> queries,
                               const Bm25Retriever& retriever, const TrainConfig& config,
                               std::span<const std::uint64_t> seeds, unsigned parallel_jobs) {
  if (seeds.empty()) throw Error(ErrorCode::kInvalidArgument, "seed list is empty");
  const std::vector<TrainingSource> sources{
      TrainingSource{&corpus, &retriever, {queries.begin(), queries.end()}}};
  std::vector<TrainResult> results;
  results.reserve(seeds.size());
  const std::size_t jobs = std::max(1u, parallel_jobs);
  for (std::size_t start = 0; start < seeds.size(); start += jobs) {
    std::vector<std::future<TrainResult>> batch;
    for (std::size_t i = start; i < std::min(seeds.size(), start + jobs); ++i) {
      batch.push_back(std::async(jobs == 1 ? std::launch::deferred : std::launch::async,
                                 [&, seed = seeds[i]] {
                                   return train_single_seed(sources, config, seed);
                                 }));
    }
    for (auto& f : batch) results.push_back(f.get());
  }
  return results;
}

}  // namespace synthrank
