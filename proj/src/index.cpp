#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "synthrank/bm25.hpp"
#include "synthrank/error.hpp"

namespace synthrank {

namespace {

std::string_view field_text(const Document& doc, IndexField field, std::string& scratch) {
  switch (field) {
    case IndexField::kTitle:
      return doc.title ? std::string_view(*doc.title) : std::string_view();
    case IndexField::kBody:
      return doc.body;
    case IndexField::kCombined:
      break;
  }
  scratch = doc.combined_text();
  return scratch;
}

// Postings for a contiguous range of documents, with shard-local term ids.
struct Shard {
  std::vector<std::string> terms;
  std::vector<std::vector<Posting>> postings;
  std::vector<std::uint32_t> lengths;
};

Shard index_shard(const Corpus& corpus, std::size_t begin, std::size_t end, IndexField field,
                  const TokenizerOptions& options) {
  Shard shard;
  std::unordered_map<std::string, std::uint32_t> local_ids;
  std::vector<std::uint32_t> doc_terms;
  std::unordered_map<std::uint32_t, std::uint32_t> doc_tf;
  std::string scratch;
  for (std::size_t doc = begin; doc < end; ++doc) {
    const auto tokens = tokenize(field_text(corpus[doc], field, scratch), options);
    shard.lengths.push_back(static_cast<std::uint32_t>(tokens.size()));
    doc_terms.clear();
    doc_tf.clear();
    for (const auto& tok : tokens) {
      auto [it, inserted] =
          local_ids.try_emplace(tok, static_cast<std::uint32_t>(shard.terms.size()));
      if (inserted) {
        shard.terms.push_back(tok);
        shard.postings.emplace_back();
      }
      if (doc_tf[it->second]++ == 0) doc_terms.push_back(it->second);
    }
    for (const auto id : doc_terms) {
      shard.postings[id].push_back({static_cast<std::uint32_t>(doc), doc_tf[id]});
    }
  }
  return shard;
}

double term_weight(double idf, double tf, double dl, double avgdl, const Bm25Params& p) {
  return idf * tf / (tf + p.k1 * (1.0 - p.b + p.b * dl / avgdl));
}

}  // namespace

std::string_view field_name(IndexField field) {
  switch (field) {
    case IndexField::kCombined:
      return "combined";
    case IndexField::kTitle:
      return "title";
    case IndexField::kBody:
      return "body";
  }
  return "unknown";
}

void Bm25Params::validate() const {
  if (!(k1 > 0.0) || !std::isfinite(k1)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("BM25 k1 must be > 0, got {}", k1));
  }
  if (!(b >= 0.0 && b <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("BM25 b must be in [0,1], got {}", b));
  }
}

InvertedIndex InvertedIndex::build(const Corpus& corpus, IndexField field,
                                   const TokenizerOptions& options, unsigned threads) {
  if (corpus.empty()) throw Error(ErrorCode::kInvalidArgument, "cannot index an empty corpus");
  const std::size_t n = corpus.size();
  const std::size_t shard_count = std::clamp<std::size_t>(threads, 1, n);

  std::vector<Shard> shards(shard_count);
  if (shard_count == 1) {
    shards[0] = index_shard(corpus, 0, n, field, options);
  } else {
    std::vector<std::future<Shard>> pending;
    for (std::size_t s = 0; s < shard_count; ++s) {
      const std::size_t begin = n * s / shard_count;
      const std::size_t end = n * (s + 1) / shard_count;
      pending.push_back(std::async(std::launch::async, index_shard, std::cref(corpus), begin, end,
                                   field, std::cref(options)));
    }
    for (std::size_t s = 0; s < shard_count; ++s) shards[s] = pending[s].get();
  }

  InvertedIndex index;
  index.field_ = field;
  index.tokenizer_ = options;
  index.doc_ids_.reserve(n);
  for (const auto& doc : corpus) index.doc_ids_.push_back(doc.doc_id);
  index.lengths_.reserve(n);
  for (auto& shard : shards) {
    index.lengths_.insert(index.lengths_.end(), shard.lengths.begin(), shard.lengths.end());
    for (std::size_t local = 0; local < shard.terms.size(); ++local) {
      auto [it, inserted] = index.term_ids_.try_emplace(
          shard.terms[local], static_cast<std::uint32_t>(index.terms_.size()));
      if (inserted) {
        index.terms_.push_back(shard.terms[local]);
        index.postings_.emplace_back();
      }
      auto& dst = index.postings_[it->second];
      dst.insert(dst.end(), shard.postings[local].begin(), shard.postings[local].end());
    }
  }
  index.total_length_ = std::accumulate(index.lengths_.begin(), index.lengths_.end(),
                                        std::uint64_t{0});
  index.avg_length_ = static_cast<double>(index.total_length_) / static_cast<double>(n);
  return index;
}

std::optional<std::uint32_t> InvertedIndex::term_id(std::string_view term) const {
  auto it = term_ids_.find(std::string(term));
  if (it == term_ids_.end()) return std::nullopt;
  return it->second;
}

std::uint32_t InvertedIndex::df(std::string_view term) const {
  auto id = term_id(term);
  return id ? static_cast<std::uint32_t>(postings_[*id].size()) : 0;
}

std::uint32_t InvertedIndex::tf(std::string_view term, std::size_t doc) const {
  auto id = term_id(term);
  if (!id) return 0;
  const auto& list = postings_[*id];
  auto it = std::lower_bound(list.begin(), list.end(), doc,
                             [](const Posting& p, std::size_t d) { return p.doc < d; });
  return (it != list.end() && it->doc == doc) ? it->tf : 0;
}

bool operator==(const InvertedIndex& a, const InvertedIndex& b) {
  return a.field_ == b.field_ && a.tokenizer_.remove_stopwords == b.tokenizer_.remove_stopwords &&
         a.doc_ids_ == b.doc_ids_ && a.lengths_ == b.lengths_ && a.terms_ == b.terms_ &&
         a.postings_ == b.postings_;
}

double bm25_idf(std::size_t doc_count, std::size_t df) {
  const double n = static_cast<double>(doc_count);
  const double d = static_cast<double>(df);
  return std::log(1.0 + (n - d + 0.5) / (d + 0.5));
}

double bm25_score(const InvertedIndex& index, std::span<const std::string> query_tokens,
                  std::size_t doc, const Bm25Params& params) {
  double score = 0.0;
  for (const auto& tok : query_tokens) {
    const auto id = index.term_id(tok);
    if (!id) continue;
    const auto list = index.postings(*id);
    auto it = std::lower_bound(list.begin(), list.end(), doc,
                               [](const Posting& p, std::size_t d) { return p.doc < d; });
    if (it == list.end() || it->doc != doc) continue;
    score += term_weight(bm25_idf(index.doc_count(), list.size()), it->tf, index.length(doc),
                         index.avg_length(), params);
  }
  return score;
}

bool ranks_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.doc_id < b.doc_id;
}

void sort_ranked(std::vector<ScoredDoc>& docs) {
  std::sort(docs.begin(), docs.end(), ranks_before);
}

std::vector<ScoredDoc> retrieve_top_k(const InvertedIndex& index,
                                      std::span<const std::string> query_tokens, std::size_t k,
                                      const Bm25Params& params) {
  if (k == 0) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (query_tokens.empty()) return {};

  std::vector<double> acc(index.doc_count(), 0.0);
  std::vector<std::uint32_t> touched;
  std::vector<bool> seen(index.doc_count(), false);
  for (const auto& tok : query_tokens) {
    const auto id = index.term_id(tok);
    if (!id) continue;
    const auto list = index.postings(*id);
    const double idf = bm25_idf(index.doc_count(), list.size());
    for (const auto& p : list) {
      acc[p.doc] += term_weight(idf, p.tf, index.length(p.doc), index.avg_length(), params);
      if (!seen[p.doc]) {
        seen[p.doc] = true;
        touched.push_back(p.doc);
      }
    }
  }

  std::vector<ScoredDoc> out;
  out.reserve(touched.size());
  for (const auto doc : touched) out.push_back({index.doc_id(doc), acc[doc], doc});
  const std::size_t keep = std::min(k, out.size());
  std::partial_sort(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(keep), out.end(),
                    ranks_before);
  out.resize(keep);
  return out;
}

std::vector<ScoredDoc> two_stage_retrieve(const InvertedIndex& combined,
                                          const InvertedIndex& title, const InvertedIndex& body,
                                          std::span<const std::string> query_tokens,
                                          const Bm25Params& params, std::size_t stage1_k) {
  if (title.field() != IndexField::kTitle || body.field() != IndexField::kBody) {
    throw Error(ErrorCode::kInvalidArgument, "two-stage retrieval needs title and body indexes");
  }
  if (title.doc_count() != combined.doc_count() || body.doc_count() != combined.doc_count()) {
    throw Error(ErrorCode::kInvalidArgument, "indexes were built over different corpora");
  }
  if (title.total_length() == 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "corpus has no titles; use single-stage retrieval instead");
  }
  auto candidates = retrieve_top_k(combined, query_tokens, stage1_k, params);
  for (auto& c : candidates) {
    c.score = bm25_score(title, query_tokens, c.ordinal, params) +
              bm25_score(body, query_tokens, c.ordinal, params);
  }
  sort_ranked(candidates);
  return candidates;
}

Bm25Retriever::Bm25Retriever(const Corpus& corpus, const RetrieverOptions& options)
    : options_(options) {
  options_.bm25.validate();
  if (options_.stage1_k == 0) throw Error(ErrorCode::kInvalidArgument, "stage1_k must be >= 1");
  combined_ = InvertedIndex::build(corpus, IndexField::kCombined, options_.tokenizer,
                                   options_.threads);
  if (corpus.has_titles()) {
    title_ = InvertedIndex::build(corpus, IndexField::kTitle, options_.tokenizer,
                                  options_.threads);
    body_ = InvertedIndex::build(corpus, IndexField::kBody, options_.tokenizer, options_.threads);
  }
}

std::vector<ScoredDoc> Bm25Retriever::retrieve(std::string_view query_text, std::size_t k) const {
  const auto tokens = tokenize(query_text, options_.tokenizer);
  if (!two_stage()) return retrieve_top_k(combined_, tokens, k, options_.bm25);
  auto out = two_stage_retrieve(combined_, *title_, *body_, tokens, options_.bm25,
                                std::max(k, options_.stage1_k));
  if (out.size() > k) out.resize(k);
  return out;
}

double Bm25Retriever::score(std::string_view query_text, std::size_t ordinal) const {
  const auto tokens = tokenize(query_text, options_.tokenizer);
  if (!two_stage()) return bm25_score(combined_, tokens, ordinal, options_.bm25);
  return bm25_score(*title_, tokens, ordinal, options_.bm25) +
         bm25_score(*body_, tokens, ordinal, options_.bm25);
}

}  // namespace synthrank
