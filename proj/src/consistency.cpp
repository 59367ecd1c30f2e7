#include "synthrank/consistency.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <mutex>
#include <thread>

#include "synthrank/error.hpp"

namespace synthrank {

std::vector<ScoredDoc> rerank_candidates(const Scorer& scorer, std::string_view query_text,
                                         const Corpus& corpus,
                                         std::vector<ScoredDoc> candidates) {
  for (auto& c : candidates) c.score = scorer.score(query_text, corpus[c.ordinal]);
  sort_ranked(candidates);
  return candidates;
}

void ConsistencyConfig::validate() const {
  if (k < 1 || k > pool_depth) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("consistency k must be in [1, pool depth {}], got {}", pool_depth, k));
  }
}

bool consistency_check(const GeneratedQuery& query, const Scorer& scorer, const Corpus& corpus,
                       const Bm25Retriever& retriever, const ConsistencyConfig& config) {
  config.validate();
  if (!corpus.ordinal_of(query.source_doc_id)) {
    throw Error(ErrorCode::kNotFound,
                fmt::format("source document \"{}\" is not in the corpus", query.source_doc_id));
  }
  auto pool = retriever.retrieve(query.text, config.pool_depth);
  const bool in_pool = std::any_of(pool.begin(), pool.end(), [&](const ScoredDoc& d) {
    return d.doc_id == query.source_doc_id;
  });
  if (!in_pool) return false;
  const auto ranked = rerank_candidates(scorer, query.text, corpus, std::move(pool));
  const std::size_t top = std::min(config.k, ranked.size());
  return std::any_of(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(top),
                     [&](const ScoredDoc& d) { return d.doc_id == query.source_doc_id; });
}

std::vector<bool> check_queries(std::span<const GeneratedQuery> queries, const Scorer& scorer,
                                const Corpus& corpus, const Bm25Retriever& retriever,
                                const ConsistencyConfig& config) {
  config.validate();
  std::vector<char> passed(queries.size(), 0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < queries.size(); i = next++) {
        passed[i] = consistency_check(queries[i], scorer, corpus, retriever, config) ? 1 : 0;
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = queries.size();
    }
  };
  const unsigned threads = std::max(1u, config.threads);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);
  return {passed.begin(), passed.end()};
}

std::vector<GeneratedQuery> build_checked_set(std::span<const GeneratedQuery> queries,
                                              const Scorer& scorer, const Corpus& corpus,
                                              const Bm25Retriever& retriever,
                                              const ConsistencyConfig& config) {
  const auto passed = check_queries(queries, scorer, corpus, retriever, config);
  std::vector<GeneratedQuery> out;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (passed[i]) out.push_back(queries[i]);
  }
  return out;
}

std::vector<TrainingQuery> to_training_queries(std::span<const GeneratedQuery> queries) {
  std::vector<TrainingQuery> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back({q.text, q.source_doc_id});
  return out;
}

TrainResult finetune_on_checked(const RankerParams& initial,
                                std::span<const GeneratedQuery> checked, const Corpus& corpus,
                                const Bm25Retriever& retriever, const TrainConfig& config,
                                std::uint64_t seed) {
  if (checked.empty()) {
    spdlog::warn("consistency-checked set is empty; keeping the input model");
    return TrainResult{initial, {}, 0, 0, 0};
  }
  const std::vector<TrainingSource> sources{
      TrainingSource{&corpus, &retriever, to_training_queries(checked)}};
  return train_single_seed(sources, config, seed, &initial);
}

TrainResult all_domain_pretrain(std::span<const CollectionData> collections,
                                const TrainConfig& config, std::uint64_t seed) {
  if (collections.empty()) throw Error(ErrorCode::kInvalidArgument, "no collections to pretrain on");
  std::vector<TrainingSource> sources;
  for (const auto& c : collections) {
    if (c.corpus == nullptr || c.retriever == nullptr) {
      throw Error(ErrorCode::kInvalidArgument,
                  fmt::format("collection '{}' lacks a corpus or index", c.name));
    }
    for (const auto& q : c.queries) {
      if (!c.corpus->ordinal_of(q.source_doc_id)) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("collection '{}': query source \"{}\" is not in its corpus",
                                c.name, q.source_doc_id));
      }
    }
    sources.push_back({c.corpus, c.retriever, to_training_queries(c.queries)});
  }
  return train_single_seed(sources, config, seed);
}

}  // namespace synthrank
