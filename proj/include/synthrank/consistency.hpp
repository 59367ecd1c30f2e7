#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "synthrank/bm25.hpp"
#include "synthrank/corpus.hpp"
#include "synthrank/ranker.hpp"
#include "synthrank/synth_gen.hpp"

namespace synthrank {

/// Re-scores `candidates` with the scorer and sorts by (score desc, doc_id asc).
std::vector<ScoredDoc> rerank_candidates(const Scorer& scorer, std::string_view query_text,
                                         const Corpus& corpus,
                                         std::vector<ScoredDoc> candidates);

struct ConsistencyConfig {
  std::size_t k = 3;
  std::size_t pool_depth = 100;
  unsigned threads = 1;

  void validate() const;
};

/// True iff the query's source document is among the scorer's top k after
/// re-ranking the BM25 top pool_depth. False if BM25 misses the source.
bool consistency_check(const GeneratedQuery& query, const Scorer& scorer, const Corpus& corpus,
                       const Bm25Retriever& retriever, const ConsistencyConfig& config);

/// Pass/fail per query, in input order.
std::vector<bool> check_queries(std::span<const GeneratedQuery> queries, const Scorer& scorer,
                                const Corpus& corpus, const Bm25Retriever& retriever,
                                const ConsistencyConfig& config);

/// The queries that pass, in input order.
std::vector<GeneratedQuery> build_checked_set(std::span<const GeneratedQuery> queries,
                                              const Scorer& scorer, const Corpus& corpus,
                                              const Bm25Retriever& retriever,
                                              const ConsistencyConfig& config);

std::vector<TrainingQuery> to_training_queries(std::span<const GeneratedQuery> queries);

/// Continues training `initial` on the checked queries with a fresh optimizer
/// and schedule. An empty checked set returns `initial` unchanged.
TrainResult finetune_on_checked(const RankerParams& initial,
                                std::span<const GeneratedQuery> checked, const Corpus& corpus,
                                const Bm25Retriever& retriever, const TrainConfig& config,
                                std::uint64_t seed);

struct CollectionData {
  std::string name;
  const Corpus* corpus = nullptr;
  const Bm25Retriever* retriever = nullptr;
  std::vector<GeneratedQuery> queries;
};

/// One model over the unfiltered union of every collection's queries; each
/// query draws negatives from its own collection.
TrainResult all_domain_pretrain(std::span<const CollectionData> collections,
                                const TrainConfig& config, std::uint64_t seed);

}  // namespace synthrank
