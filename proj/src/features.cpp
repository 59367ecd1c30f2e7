#include <algorithm>
#include <unordered_set>

#include "synthrank/ranker.hpp"

namespace synthrank {

std::pair<std::vector<std::string>, std::vector<std::string>> truncate_inputs(
    std::span<const std::string> query_tokens, std::span<const std::string> doc_tokens,
    const TruncationLimits& limits) {
  const auto q = query_tokens.first(std::min(query_tokens.size(), limits.max_query_tokens));
  const auto d = doc_tokens.first(std::min(doc_tokens.size(), limits.max_doc_tokens));
  return {{q.begin(), q.end()}, {d.begin(), d.end()}};
}

std::uint64_t feature_slot(FeatureGroup group, std::string_view term, unsigned hash_bits) {
  constexpr std::uint64_t kOffset = 0xcbf29ce484222325ULL;
  constexpr std::uint64_t kPrime = 0x100000001b3ULL;
  std::uint64_t h = kOffset;
  h = (h ^ static_cast<std::uint8_t>(group)) * kPrime;
  h = (h ^ 0x1F) * kPrime;
  for (const char c : term) h = (h ^ static_cast<std::uint8_t>(c)) * kPrime;
  // Fold the high bits in before masking; FNV's low bits mix poorly.
  h ^= h >> 32;
  return hash_bits >= 64 ? h : (h & ((std::uint64_t{1} << hash_bits) - 1));
}

FeatureVector extract_features(std::span<const std::string> query_tokens,
                               std::span<const std::string> doc_tokens, unsigned hash_bits) {
  FeatureVector fv;
  if (query_tokens.empty()) return fv;
  fv.query_length = query_tokens.size();
  fv.doc_length = doc_tokens.size();
  for (const auto& t : query_tokens) ++fv.query_counts[feature_slot(FeatureGroup::kQuery, t, hash_bits)];
  for (const auto& t : doc_tokens) ++fv.doc_counts[feature_slot(FeatureGroup::kDoc, t, hash_bits)];
  const std::unordered_set<std::string_view> doc_terms(doc_tokens.begin(), doc_tokens.end());
  const auto any_slot = feature_slot(FeatureGroup::kMatch, kAnyMatchTerm, hash_bits);
  for (const auto& t : query_tokens) {
    if (!doc_terms.count(t)) continue;
    ++fv.match_counts[feature_slot(FeatureGroup::kMatch, t, hash_bits)];
    ++fv.match_counts[any_slot];
  }
  return fv;
}

std::vector<std::pair<std::uint64_t, double>> FeatureVector::pooling_weights() const {
  std::map<std::uint64_t, double> merged;
  for (const auto& [slot, c] : query_counts) {
    merged[slot] += static_cast<double>(c) / static_cast<double>(query_length);
  }
  for (const auto& [slot, c] : doc_counts) {
    merged[slot] += static_cast<double>(c) / static_cast<double>(doc_length);
  }
  for (const auto& [slot, c] : match_counts) merged[slot] += static_cast<double>(c);
  return {merged.begin(), merged.end()};
}

FeatureVector featurize(const RankerConfig& config, std::string_view query_text,
                        std::string_view doc_text) {
  const auto q = tokenize(query_text, config.tokenizer);
  const auto d = tokenize(doc_text, config.tokenizer);
  const auto [qt, dt] = truncate_inputs(q, d, config.truncation);
  return extract_features(qt, dt, config.hash_bits);
}

}  // namespace synthrank
