// Binary index layout (all integers little-endian):
//
//   "SRIDX\0\0\0" u32 version
//   u8 field, u8 remove_stopwords
//   u64 doc_count, then per document: string doc_id, u32 length
//   u64 vocabulary_size, then per term: string term, u32 df, df x (u32 doc, u32 tf)
//
// Strings are u32 byte length followed by the bytes. A retriever file wraps
// one to three index blocks:
//
//   "SRRET\0\0\0" u32 version
//   f64 k1, f64 b, u64 stage1_k, u8 two_stage
//   index block (combined) [index block (title), index block (body)]

#include <fstream>
#include <numeric>

#include "binary_io.hpp"
#include "synthrank/bm25.hpp"

namespace synthrank {

namespace {

constexpr std::string_view kIndexMagic{"SRIDX\0\0\0", 8};
constexpr std::string_view kRetrieverMagic{"SRRET\0\0\0", 8};
constexpr std::uint32_t kIndexVersion = 1;
constexpr std::uint32_t kRetrieverVersion = 1;

}  // namespace

void InvertedIndex::save(std::ostream& out) const {
  using namespace binary;
  write_magic(out, kIndexMagic, kIndexVersion);
  write_uint<std::uint8_t>(out, static_cast<std::uint8_t>(field_));
  write_uint<std::uint8_t>(out, tokenizer_.remove_stopwords ? 1 : 0);
  write_uint<std::uint64_t>(out, doc_ids_.size());
  for (std::size_t d = 0; d < doc_ids_.size(); ++d) {
    write_string(out, doc_ids_[d]);
    write_uint<std::uint32_t>(out, lengths_[d]);
  }
  write_uint<std::uint64_t>(out, terms_.size());
  for (std::size_t t = 0; t < terms_.size(); ++t) {
    write_string(out, terms_[t]);
    write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(postings_[t].size()));
    for (const auto& p : postings_[t]) {
      write_uint<std::uint32_t>(out, p.doc);
      write_uint<std::uint32_t>(out, p.tf);
    }
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing index");
}

InvertedIndex InvertedIndex::load(std::istream& in) {
  using namespace binary;
  const auto version = read_magic(in, kIndexMagic);
  if (version != kIndexVersion) {
    throw Error(ErrorCode::kParse, "unsupported index version " + std::to_string(version));
  }
  InvertedIndex index;
  const auto field = read_uint<std::uint8_t>(in);
  if (field > 2) throw Error(ErrorCode::kParse, "bad index field tag");
  index.field_ = static_cast<IndexField>(field);
  index.tokenizer_.remove_stopwords = read_uint<std::uint8_t>(in) != 0;
  const auto n = read_uint<std::uint64_t>(in);
  if (n == 0) throw Error(ErrorCode::kParse, "index has no documents");
  for (std::uint64_t d = 0; d < n; ++d) {
    index.doc_ids_.push_back(read_string(in));
    index.lengths_.push_back(read_uint<std::uint32_t>(in));
  }
  const auto vocab = read_uint<std::uint64_t>(in);
  for (std::uint64_t t = 0; t < vocab; ++t) {
    auto term = read_string(in);
    const auto df = read_uint<std::uint32_t>(in);
    std::vector<Posting> list;
    list.reserve(df);
    for (std::uint32_t i = 0; i < df; ++i) {
      Posting p{read_uint<std::uint32_t>(in), read_uint<std::uint32_t>(in)};
      if (p.doc >= n || (!list.empty() && p.doc <= list.back().doc)) {
        throw Error(ErrorCode::kParse, "postings for '" + term + "' are not sorted");
      }
      list.push_back(p);
    }
    if (!index.term_ids_.emplace(term, static_cast<std::uint32_t>(t)).second) {
      throw Error(ErrorCode::kParse, "duplicate term '" + term + "' in index");
    }
    index.terms_.push_back(std::move(term));
    index.postings_.push_back(std::move(list));
  }
  index.total_length_ =
      std::accumulate(index.lengths_.begin(), index.lengths_.end(), std::uint64_t{0});
  index.avg_length_ = static_cast<double>(index.total_length_) / static_cast<double>(n);
  return index;
}

void Bm25Retriever::save(const std::filesystem::path& path) const {
  using namespace binary;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  write_magic(out, kRetrieverMagic, kRetrieverVersion);
  write_f64(out, options_.bm25.k1);
  write_f64(out, options_.bm25.b);
  write_uint<std::uint64_t>(out, options_.stage1_k);
  write_uint<std::uint8_t>(out, two_stage() ? 1 : 0);
  combined_.save(out);
  if (two_stage()) {
    title_->save(out);
    body_->save(out);
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing " + path.string());
}

Bm25Retriever Bm25Retriever::load(const std::filesystem::path& path) {
  using namespace binary;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const auto version = read_magic(in, kRetrieverMagic);
  if (version != kRetrieverVersion) {
    throw Error(ErrorCode::kParse, "unsupported retriever version " + std::to_string(version));
  }
  Bm25Retriever r;
  r.options_.bm25.k1 = read_f64(in);
  r.options_.bm25.b = read_f64(in);
  r.options_.bm25.validate();
  r.options_.stage1_k = read_uint<std::uint64_t>(in);
  const bool two = read_uint<std::uint8_t>(in) != 0;
  r.combined_ = InvertedIndex::load(in);
  r.options_.tokenizer = r.combined_.tokenizer_options();
  if (two) {
    r.title_ = InvertedIndex::load(in);
    r.body_ = InvertedIndex::load(in);
  }
  return r;
}

}  // namespace synthrank
