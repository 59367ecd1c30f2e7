// Checkpoint layout (little-endian):
//
//   "SRMODEL\0" u32 version
//   u32 dim, u32 hash_bits, u64 seed, f64 init_scale, u8 zero_head
//   u32 max_query_tokens, u32 max_doc_tokens, u8 remove_stopwords
//   f64 embedding_decay, f64 bias, dim x f64 head
//   u64 row_count, then per row (ascending slot): u64 slot, dim x f64

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "synthrank/error.hpp"
#include "synthrank/ranker.hpp"

namespace synthrank {

namespace {

constexpr std::string_view kModelMagic{"SRMODEL\0", 8};
constexpr std::uint32_t kModelVersion = 1;
constexpr std::uint64_t kHeadSalt = 0x48454144ULL << 32;

// splitmix64 stream; cheap enough to regenerate initial rows on demand.
class SplitMix {
 public:
  explicit SplitMix(std::uint64_t state) : state_(state) {}
  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }
  double symmetric(double scale) {
    const double u = static_cast<double>(next() >> 11) * 0x1.0p-53;
    return scale * (2.0 * u - 1.0);
  }

 private:
  std::uint64_t state_;
};

}  // namespace

void RankerConfig::validate() const {
  if (dim == 0) throw Error(ErrorCode::kInvalidArgument, "embedding dim must be >= 1");
  if (hash_bits == 0 || hash_bits > 32) {
    throw Error(ErrorCode::kInvalidArgument, fmt::format("hash bits must be in [1, 32], got {}",
                                                         hash_bits));
  }
  if (!(init_scale >= 0.0) || !std::isfinite(init_scale)) {
    throw Error(ErrorCode::kInvalidArgument, "init scale must be finite and >= 0");
  }
}

RankerParams::RankerParams(const RankerConfig& config, std::uint64_t seed)
    : config_(config), seed_(seed), head_(config.dim, 0.0) {
  config_.validate();
  if (!config_.zero_head) {
    SplitMix gen(mix_seed(seed_, kHeadSalt));
    for (auto& h : head_) h = gen.symmetric(config_.init_scale);
  }
}

void RankerParams::initial_row(std::uint64_t slot, std::span<double> out) const {
  SplitMix gen(mix_seed(seed_, slot));
  for (auto& v : out) v = gen.symmetric(config_.init_scale);
}

void RankerParams::row(std::uint64_t slot, std::span<double> out) const {
  if (auto it = rows_.find(slot); it != rows_.end()) {
    std::copy(it->second.begin(), it->second.end(), out.begin());
    return;
  }
  initial_row(slot, out);
  if (embedding_decay_ != 1.0) {
    for (auto& v : out) v *= embedding_decay_;
  }
}

std::span<double> RankerParams::materialize(std::uint64_t slot) {
  auto it = rows_.find(slot);
  if (it == rows_.end()) {
    std::vector<double> values(config_.dim);
    row(slot, values);
    it = rows_.emplace(slot, std::move(values)).first;
  }
  return it->second;
}

std::vector<std::uint64_t> RankerParams::materialized_slots() const {
  std::vector<std::uint64_t> slots;
  slots.reserve(rows_.size());
  for (const auto& [slot, values] : rows_) slots.push_back(slot);
  std::sort(slots.begin(), slots.end());
  return slots;
}

void RankerParams::scale_embeddings(double factor) {
  embedding_decay_ *= factor;
  for (auto& [slot, values] : rows_) {
    for (auto& v : values) v *= factor;
  }
}

bool RankerParams::all_finite() const {
  auto finite = [](double v) { return std::isfinite(v); };
  if (!std::isfinite(bias_) || !std::all_of(head_.begin(), head_.end(), finite)) return false;
  for (const auto& [slot, values] : rows_) {
    if (!std::all_of(values.begin(), values.end(), finite)) return false;
  }
  return true;
}

bool operator==(const RankerParams& a, const RankerParams& b) {
  return a.config_.dim == b.config_.dim && a.config_.hash_bits == b.config_.hash_bits &&
         a.seed_ == b.seed_ && a.config_.init_scale == b.config_.init_scale &&
         a.head_ == b.head_ && a.bias_ == b.bias_ && a.embedding_decay_ == b.embedding_decay_ &&
         a.rows_ == b.rows_;
}

void RankerParams::save(std::ostream& out) const {
  using namespace binary;
  write_magic(out, kModelMagic, kModelVersion);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(config_.dim));
  write_uint<std::uint32_t>(out, config_.hash_bits);
  write_uint<std::uint64_t>(out, seed_);
  write_f64(out, config_.init_scale);
  write_uint<std::uint8_t>(out, config_.zero_head ? 1 : 0);
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(config_.truncation.max_query_tokens));
  write_uint<std::uint32_t>(out, static_cast<std::uint32_t>(config_.truncation.max_doc_tokens));
  write_uint<std::uint8_t>(out, config_.tokenizer.remove_stopwords ? 1 : 0);
  write_f64(out, embedding_decay_);
  write_f64(out, bias_);
  for (const double h : head_) write_f64(out, h);
  const auto slots = materialized_slots();
  write_uint<std::uint64_t>(out, slots.size());
  for (const auto slot : slots) {
    write_uint<std::uint64_t>(out, slot);
    for (const double v : rows_.at(slot)) write_f64(out, v);
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing checkpoint");
}

RankerParams RankerParams::load(std::istream& in) {
  using namespace binary;
  const auto version = read_magic(in, kModelMagic);
  if (version != kModelVersion) {
    throw Error(ErrorCode::kParse, "unsupported checkpoint version " + std::to_string(version));
  }
  RankerConfig config;
  config.dim = read_uint<std::uint32_t>(in);
  config.hash_bits = read_uint<std::uint32_t>(in);
  const auto seed = read_uint<std::uint64_t>(in);
  config.init_scale = read_f64(in);
  config.zero_head = read_uint<std::uint8_t>(in) != 0;
  config.truncation.max_query_tokens = read_uint<std::uint32_t>(in);
  config.truncation.max_doc_tokens = read_uint<std::uint32_t>(in);
  config.tokenizer.remove_stopwords = read_uint<std::uint8_t>(in) != 0;
  RankerParams params(config, seed);
  params.embedding_decay_ = read_f64(in);
  params.bias_ = read_f64(in);
  for (auto& h : params.head_) h = read_f64(in);
  const auto count = read_uint<std::uint64_t>(in);
  for (std::uint64_t r = 0; r < count; ++r) {
    const auto slot = read_uint<std::uint64_t>(in);
    std::vector<double> values(config.dim);
    for (auto& v : values) v = read_f64(in);
    params.rows_.emplace(slot, std::move(values));
  }
  if (!params.all_finite()) throw Error(ErrorCode::kParse, "checkpoint holds non-finite values");
  return params;
}

void RankerParams::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  save(out);
}

RankerParams RankerParams::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return load(in);
}

std::vector<double> pooled_embedding(const RankerParams& params, const FeatureVector& features) {
  std::vector<double> pooled(params.dim(), 0.0);
  std::vector<double> row(params.dim());
  for (const auto& [slot, weight] : features.pooling_weights()) {
    params.row(slot, row);
    for (std::size_t i = 0; i < row.size(); ++i) pooled[i] += weight * row[i];
  }
  return pooled;
}

double score_features(const RankerParams& params, const FeatureVector& features) {
  const auto pooled = pooled_embedding(params, features);
  double s = params.bias();
  const auto head = params.head();
  for (std::size_t i = 0; i < pooled.size(); ++i) s += head[i] * pooled[i];
  return s;
}

double score(const RankerParams& params, std::string_view query_text, const Document& doc) {
  return score_features(params, featurize(params.config(), query_text, doc.combined_text()));
}

double RankerScorer::score(std::string_view query_text, const Document& doc) const {
  return synthrank::score(*params_, query_text, doc);
}

}  // namespace synthrank
