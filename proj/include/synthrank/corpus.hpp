#pragma once

// Documents, queries, relevance judgments, and runs, plus the file formats
// they are read from and written to.
//
//   corpus   JSONL  {"doc_id": ..., "title": ..., "body": ...}
//            TSV    doc_id<TAB>title<TAB>body
//   queries  JSONL  {"query_id": ..., "text": ...}
//                   {"query_id": ..., "title": ..., "description": ..., "narrative": ...}
//            TSV    query_id<TAB>text
//   qrels   "qid 0 docid grade"
//   runs    "qid Q0 docid rank score tag"

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace synthrank {

struct Document {
  std::string doc_id;
  std::optional<std::string> title;
  std::string body;

  bool has_title() const { return title.has_value() && !title->empty(); }
  /// Title and body joined by a single space (body alone if untitled).
  std::string combined_text() const;
};

enum class CorpusFormat { kJsonl, kTsv };

CorpusFormat parse_corpus_format(std::string_view name);

/// Immutable after construction; iteration order equals insertion order.
class Corpus {
 public:
  Corpus() = default;
  /// Throws DuplicateIdError on a repeated doc_id.
  explicit Corpus(std::vector<Document> docs);

  std::size_t size() const { return docs_.size(); }
  bool empty() const { return docs_.empty(); }
  const Document& operator[](std::size_t ordinal) const { return docs_[ordinal]; }
  const std::vector<Document>& documents() const { return docs_; }
  auto begin() const { return docs_.begin(); }
  auto end() const { return docs_.end(); }

  std::optional<std::size_t> ordinal_of(std::string_view doc_id) const;
  /// Throws Error(kNotFound).
  const Document& get(std::string_view doc_id) const;
  /// True if any document carries a non-empty title.
  bool has_titles() const { return has_titles_; }

 private:
  std::vector<Document> docs_;
  std::unordered_map<std::string, std::size_t> ordinals_;
  bool has_titles_ = false;
};

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format);

struct QueryFields {
  std::string title;
  std::string description;
  std::string narrative;
};

struct QueryRecord {
  std::string query_id;
  std::string text;
  std::optional<QueryFields> fields;

  /// Text fed to BM25: the plain text, or the title field of a multi-field query.
  const std::string& lexical_text() const { return fields ? fields->title : text; }
  /// Text fed to the neural ranker: the plain text, or the description field.
  const std::string& ranker_text() const { return fields ? fields->description : text; }
};

std::vector<QueryRecord> read_queries(const std::filesystem::path& path);

struct QrelEntry {
  std::string query_id;
  std::string doc_id;
  int grade = 0;
};

class Qrels {
 public:
  /// Throws DuplicateIdError naming "qid/docid" on a repeated pair.
  void add(const QrelEntry& entry);

  /// 0 for unjudged documents.
  int grade(std::string_view query_id, std::string_view doc_id) const;
  bool judged(std::string_view query_id) const;
  /// Number of documents with grade >= 1.
  std::size_t relevant_count(std::string_view query_id) const;
  /// All judged grades for the query (0 grades included).
  std::vector<int> grades(std::string_view query_id) const;
  std::size_t query_count() const { return judgments_.size(); }
  const std::map<std::string, std::map<std::string, int, std::less<>>, std::less<>>& judgments()
      const {
    return judgments_;
  }

 private:
  std::map<std::string, std::map<std::string, int, std::less<>>, std::less<>> judgments_;
};

Qrels read_qrels(const std::filesystem::path& path);
void write_qrels(const Qrels& qrels, const std::filesystem::path& path);

struct RunEntry {
  std::string query_id;
  std::string doc_id;
  int rank = 0;
  double score = 0.0;
  std::string tag;
};

using RankedList = std::vector<RunEntry>;
using RunSet = std::map<std::string, RankedList, std::less<>>;

/// Throws Error(kParse) naming the query if ranks are not exactly 1..n in order.
void validate_ranked_list(std::string_view query_id, const RankedList& list);

/// Entries are returned sorted by rank; ranks must be contiguous from 1.
RunSet read_run(const std::filesystem::path& path);
/// Scores are written with 6 decimal places; `tag` replaces the per-entry tag.
void write_run(const RunSet& runs, std::string_view tag, const std::filesystem::path& path);

}  // namespace synthrank
