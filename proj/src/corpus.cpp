#include "synthrank/corpus.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

#include "synthrank/error.hpp"
#include "synthrank/text.hpp"

namespace synthrank {

namespace {

using nlohmann::json;

std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return in;
}

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  return out;
}

// Iterates non-blank lines with their 1-based line numbers, checking UTF-8.
template <typename Fn>
void for_each_line(const std::filesystem::path& path, Fn&& fn) {
  auto in = open_input(path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (text::trim(line).empty()) continue;
    if (auto bad = text::first_invalid_utf8(line)) {
      throw ParseError(path.string(), line_no,
                       fmt::format("invalid UTF-8 at byte {}", *bad));
    }
    fn(line, line_no);
  }
}

std::vector<std::string> split(std::string_view line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.emplace_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

std::vector<std::string> split_whitespace(const std::string& line) {
  std::istringstream ss(line);
  std::vector<std::string> out;
  std::string tok;
  while (ss >> tok) out.push_back(std::move(tok));
  return out;
}

std::optional<std::string> string_field(const json& obj, std::initializer_list<const char*> keys) {
  for (const char* key : keys) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) continue;
    if (it->is_string()) return it->get<std::string>();
    if (it->is_number_integer()) return std::to_string(it->get<long long>());
    throw std::invalid_argument(std::string("field '") + key + "' is not a string");
  }
  return std::nullopt;
}

Document parse_jsonl_document(const std::string& line) {
  const json obj = json::parse(line);
  if (!obj.is_object()) throw std::invalid_argument("record is not a JSON object");
  Document doc;
  auto id = string_field(obj, {"doc_id", "_id"});
  if (!id || id->empty()) throw std::invalid_argument("missing doc_id");
  doc.doc_id = std::move(*id);
  doc.title = string_field(obj, {"title"});
  doc.body = string_field(obj, {"body", "text"}).value_or("");
  return doc;
}

Document parse_tsv_document(const std::string& line) {
  auto cols = split(line, '\t');
  if (cols.size() != 2 && cols.size() != 3) {
    throw std::invalid_argument(fmt::format("expected 2 or 3 tab-separated columns, got {}",
                                            cols.size()));
  }
  Document doc;
  doc.doc_id = cols[0];
  if (doc.doc_id.empty()) throw std::invalid_argument("missing doc_id");
  if (cols.size() == 3) {
    if (!cols[1].empty()) doc.title = cols[1];
    doc.body = cols[2];
  } else {
    doc.body = cols[1];
  }
  return doc;
}

}  // namespace

std::string Document::combined_text() const {
  if (!has_title()) return body;
  if (body.empty()) return *title;
  return *title + " " + body;
}

CorpusFormat parse_corpus_format(std::string_view name) {
  if (name == "jsonl") return CorpusFormat::kJsonl;
  if (name == "tsv") return CorpusFormat::kTsv;
  throw Error(ErrorCode::kInvalidArgument, "unknown corpus format '" + std::string(name) + "'");
}

Corpus::Corpus(std::vector<Document> docs) : docs_(std::move(docs)) {
  ordinals_.reserve(docs_.size());
  for (std::size_t i = 0; i < docs_.size(); ++i) {
    if (!ordinals_.emplace(docs_[i].doc_id, i).second) throw DuplicateIdError(docs_[i].doc_id);
    has_titles_ = has_titles_ || docs_[i].has_title();
  }
}

std::optional<std::size_t> Corpus::ordinal_of(std::string_view doc_id) const {
  auto it = ordinals_.find(std::string(doc_id));
  if (it == ordinals_.end()) return std::nullopt;
  return it->second;
}

const Document& Corpus::get(std::string_view doc_id) const {
  auto ord = ordinal_of(doc_id);
  if (!ord) throw Error(ErrorCode::kNotFound, "unknown document \"" + std::string(doc_id) + "\"");
  return docs_[*ord];
}

Corpus ingest_corpus(const std::filesystem::path& path, CorpusFormat format) {
  std::vector<Document> docs;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    Document doc;
    try {
      doc = format == CorpusFormat::kJsonl ? parse_jsonl_document(line) : parse_tsv_document(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    if (doc.body.empty() && !doc.has_title()) {
      throw ParseError(path.string(), line_no, "record has neither title nor body");
    }
    docs.push_back(std::move(doc));
  });
  return Corpus(std::move(docs));
}

std::vector<QueryRecord> read_queries(const std::filesystem::path& path) {
  const bool is_tsv = path.extension() == ".tsv";
  std::vector<QueryRecord> out;
  std::unordered_map<std::string, std::size_t> seen;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    QueryRecord q;
    try {
      if (is_tsv) {
        const auto tab = line.find('\t');
        if (tab == std::string::npos) throw std::invalid_argument("expected query_id<TAB>text");
        q.query_id = line.substr(0, tab);
        q.text = line.substr(tab + 1);
      } else {
        const json obj = json::parse(line);
        if (!obj.is_object()) throw std::invalid_argument("record is not a JSON object");
        q.query_id = string_field(obj, {"query_id", "_id"}).value_or("");
        auto plain = string_field(obj, {"text"});
        auto title = string_field(obj, {"title"});
        auto desc = string_field(obj, {"description"});
        if (plain && (title || desc)) {
          throw std::invalid_argument("query has both text and multi-field entries");
        }
        if (plain) {
          q.text = std::move(*plain);
        } else {
          if (!title || title->empty() || !desc || desc->empty()) {
            throw std::invalid_argument("multi-field query needs non-empty title and description");
          }
          q.fields = QueryFields{*title, *desc, string_field(obj, {"narrative"}).value_or("")};
        }
      }
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
    if (q.query_id.empty()) throw ParseError(path.string(), line_no, "missing query_id");
    if (!q.fields && text::trim(q.text).empty()) {
      throw ParseError(path.string(), line_no, "empty query text");
    }
    if (!seen.emplace(q.query_id, line_no).second) throw DuplicateIdError(q.query_id);
    out.push_back(std::move(q));
  });
  return out;
}

void Qrels::add(const QrelEntry& entry) {
  if (entry.grade < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative grade for " + entry.query_id);
  }
  auto& per_query = judgments_[entry.query_id];
  if (!per_query.emplace(entry.doc_id, entry.grade).second) {
    throw DuplicateIdError(entry.query_id + "/" + entry.doc_id);
  }
}

int Qrels::grade(std::string_view query_id, std::string_view doc_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  auto d = q->second.find(doc_id);
  return d == q->second.end() ? 0 : d->second;
}

bool Qrels::judged(std::string_view query_id) const {
  return judgments_.find(query_id) != judgments_.end();
}

std::size_t Qrels::relevant_count(std::string_view query_id) const {
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return 0;
  return static_cast<std::size_t>(std::count_if(q->second.begin(), q->second.end(),
                                                [](const auto& kv) { return kv.second >= 1; }));
}

std::vector<int> Qrels::grades(std::string_view query_id) const {
  std::vector<int> out;
  auto q = judgments_.find(query_id);
  if (q == judgments_.end()) return out;
  for (const auto& [doc, grade] : q->second) out.push_back(grade);
  return out;
}

Qrels read_qrels(const std::filesystem::path& path) {
  Qrels qrels;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    const auto cols = split_whitespace(line);
    if (cols.size() != 4) {
      throw ParseError(path.string(), line_no, "expected 4 columns: qid 0 docid grade");
    }
    QrelEntry e{cols[0], cols[2], 0};
    try {
      std::size_t used = 0;
      e.grade = std::stoi(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      throw ParseError(path.string(), line_no, "grade is not an integer: " + cols[3]);
    }
    if (e.grade < 0) throw ParseError(path.string(), line_no, "negative grade");
    qrels.add(e);
  });
  return qrels;
}

void write_qrels(const Qrels& qrels, const std::filesystem::path& path) {
  auto out = open_output(path);
  for (const auto& [qid, docs] : qrels.judgments()) {
    for (const auto& [doc, grade] : docs) out << qid << " 0 " << doc << ' ' << grade << '\n';
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

void validate_ranked_list(std::string_view query_id, const RankedList& list) {
  for (std::size_t i = 0; i < list.size(); ++i) {
    if (list[i].rank != static_cast<int>(i + 1)) {
      throw Error(ErrorCode::kParse,
                  fmt::format("query {}: ranks are not contiguous from 1 (found rank {} at "
                              "position {})",
                              query_id, list[i].rank, i + 1));
    }
  }
}

RunSet read_run(const std::filesystem::path& path) {
  RunSet runs;
  for_each_line(path, [&](const std::string& line, std::size_t line_no) {
    const auto cols = split_whitespace(line);
    if (cols.size() != 6) {
      throw ParseError(path.string(), line_no, "expected 6 columns: qid Q0 docid rank score tag");
    }
    RunEntry e;
    e.query_id = cols[0];
    e.doc_id = cols[2];
    e.tag = cols[5];
    try {
      std::size_t used = 0;
      e.rank = std::stoi(cols[3], &used);
      if (used != cols[3].size()) throw std::invalid_argument("rank");
      e.score = std::stod(cols[4], &used);
      if (used != cols[4].size()) throw std::invalid_argument("score");
    } catch (const std::exception&) {
      throw ParseError(path.string(), line_no, "bad rank or score");
    }
    if (e.rank < 1) {
      throw ParseError(path.string(), line_no,
                       fmt::format("query {}: rank {} is below 1", e.query_id, e.rank));
    }
    runs[e.query_id].push_back(std::move(e));
  });
  for (auto& [qid, list] : runs) {
    std::stable_sort(list.begin(), list.end(),
                     [](const RunEntry& a, const RunEntry& b) { return a.rank < b.rank; });
    validate_ranked_list(qid, list);
  }
  return runs;
}

void write_run(const RunSet& runs, std::string_view tag, const std::filesystem::path& path) {
  for (const auto& [qid, list] : runs) {
    validate_ranked_list(qid, list);
    for (std::size_t i = 1; i < list.size(); ++i) {
      if (list[i].score > list[i - 1].score) {
        throw Error(ErrorCode::kInvalidArgument,
                    fmt::format("query {}: score increases at rank {}", qid, list[i].rank));
      }
    }
  }
  auto out = open_output(path);
  for (const auto& [qid, list] : runs) {
    for (const auto& e : list) {
      out << fmt::format("{} Q0 {} {} {:.6f} {}\n", qid, e.doc_id, e.rank, e.score, tag);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace synthrank
