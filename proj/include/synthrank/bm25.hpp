#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "synthrank/corpus.hpp"

namespace synthrank {

struct TokenizerOptions {
  bool remove_stopwords = false;
};

/// Lowercased runs of Unicode letters/digits. Everything else separates tokens.
std::vector<std::string> tokenize(std::string_view text, const TokenizerOptions& options = {});

enum class IndexField : std::uint8_t { kCombined = 0, kTitle = 1, kBody = 2 };

std::string_view field_name(IndexField field);

struct Bm25Params {
  double k1 = 0.9;
  double b = 0.4;

  /// Throws Error(kInvalidArgument) unless k1 > 0 and 0 <= b <= 1.
  void validate() const;
};

struct Posting {
  std::uint32_t doc;
  std::uint32_t tf;

  friend bool operator==(const Posting&, const Posting&) = default;
};

/// Document-ordered postings over one text field of a corpus.
///
/// Term ids are assigned in order of first occurrence (document order, then
/// token order), so the layout does not depend on how the build was sharded.
class InvertedIndex {
 public:
  static InvertedIndex build(const Corpus& corpus, IndexField field,
                             const TokenizerOptions& options = {}, unsigned threads = 1);

  IndexField field() const { return field_; }
  const TokenizerOptions& tokenizer_options() const { return tokenizer_; }
  std::size_t doc_count() const { return doc_ids_.size(); }
  std::uint64_t total_length() const { return total_length_; }
  double avg_length() const { return avg_length_; }
  std::uint32_t length(std::size_t doc) const { return lengths_[doc]; }
  const std::string& doc_id(std::size_t doc) const { return doc_ids_[doc]; }
  std::size_t vocabulary_size() const { return terms_.size(); }
  const std::string& term(std::uint32_t term_id) const { return terms_[term_id]; }

  std::optional<std::uint32_t> term_id(std::string_view term) const;
  std::span<const Posting> postings(std::uint32_t term_id) const { return postings_[term_id]; }
  /// Document frequency; 0 for unknown terms.
  std::uint32_t df(std::string_view term) const;
  /// Term frequency of `term` in `doc`; 0 when absent.
  std::uint32_t tf(std::string_view term, std::size_t doc) const;

  /// Little-endian, versioned. See index_io.cpp for the layout.
  void save(std::ostream& out) const;
  static InvertedIndex load(std::istream& in);

  friend bool operator==(const InvertedIndex&, const InvertedIndex&);

 private:
  IndexField field_ = IndexField::kCombined;
  TokenizerOptions tokenizer_;
  std::vector<std::string> doc_ids_;
  std::vector<std::uint32_t> lengths_;
  std::uint64_t total_length_ = 0;
  double avg_length_ = 0.0;
  std::vector<std::string> terms_;
  std::unordered_map<std::string, std::uint32_t> term_ids_;
  std::vector<std::vector<Posting>> postings_;
};

/// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
double bm25_idf(std::size_t doc_count, std::size_t df);

/// Sum over query tokens (with multiplicity) of idf * tf / (tf + k1 * (1 - b + b * dl / avgdl)).
double bm25_score(const InvertedIndex& index, std::span<const std::string> query_tokens,
                  std::size_t doc, const Bm25Params& params);

struct ScoredDoc {
  std::string doc_id;
  double score = 0.0;
  std::size_t ordinal = 0;
};

/// Total order used everywhere: score descending, then doc_id ascending.
bool ranks_before(const ScoredDoc& a, const ScoredDoc& b);
void sort_ranked(std::vector<ScoredDoc>& docs);

/// The k best documents sharing at least one term with the query.
std::vector<ScoredDoc> retrieve_top_k(const InvertedIndex& index,
                                      std::span<const std::string> query_tokens, std::size_t k,
                                      const Bm25Params& params);

/// Stage 1 takes `stage1_k` documents from the combined index; stage 2 re-sorts
/// exactly those by title-BM25 + body-BM25. Throws if the title index is empty.
std::vector<ScoredDoc> two_stage_retrieve(const InvertedIndex& combined,
                                          const InvertedIndex& title, const InvertedIndex& body,
                                          std::span<const std::string> query_tokens,
                                          const Bm25Params& params, std::size_t stage1_k = 1000);

struct RetrieverOptions {
  Bm25Params bm25;
  TokenizerOptions tokenizer;
  std::size_t stage1_k = 1000;
  unsigned threads = 1;
};

/// The BM25 first stage for one corpus: single-stage over title+body, or
/// two-stage when the corpus has titles.
class Bm25Retriever {
 public:
  Bm25Retriever(const Corpus& corpus, const RetrieverOptions& options);

  bool two_stage() const { return title_.has_value(); }
  const RetrieverOptions& options() const { return options_; }
  const InvertedIndex& combined() const { return combined_; }
  const InvertedIndex* title_index() const { return title_ ? &*title_ : nullptr; }
  const InvertedIndex* body_index() const { return body_ ? &*body_ : nullptr; }

  /// Top `k` for the query text; two-stage output is cut to `k` after stage 2.
  std::vector<ScoredDoc> retrieve(std::string_view query_text, std::size_t k) const;
  /// BM25 score of one document for the query under the same scheme as `retrieve`.
  double score(std::string_view query_text, std::size_t ordinal) const;

  void save(const std::filesystem::path& path) const;
  static Bm25Retriever load(const std::filesystem::path& path);

 private:
  Bm25Retriever() = default;

  RetrieverOptions options_;
  InvertedIndex combined_;
  std::optional<InvertedIndex> title_;
  std::optional<InvertedIndex> body_;
};

}  // namespace synthrank
