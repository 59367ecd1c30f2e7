#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthrank/corpus.hpp"

namespace synthrank {

/// Upper bound on tokens kept from one completion.
inline constexpr int kMaxNewTokens = 32;

struct FewShotExample {
  std::string document_text;
  std::string relevant_query;
};

/// Three demonstrations followed by the target document:
///
///   Example 1:
///   Document: ...
///   Relevant Query: ...
///   (blank line, repeated for examples 2 and 3)
///   Example 4:
///   Document: <target>
///   Relevant Query:
class PromptTemplate {
 public:
  /// Throws Error(kInvalidArgument) unless given exactly three non-empty examples.
  explicit PromptTemplate(std::vector<FewShotExample> examples);

  const std::vector<FewShotExample>& examples() const { return examples_; }

 private:
  std::vector<FewShotExample> examples_;
};

/// Newlines in the inserted texts are flattened to spaces. Throws on an empty target.
std::string build_prompt(const PromptTemplate& tmpl, std::string_view target_doc_text);

struct GeneratedQuery {
  std::string text;
  std::string source_doc_id;
  std::vector<double> token_logprobs;
  double avg_logprob = 0.0;
};

/// Validates (non-empty single-line text, non-empty log-probs all <= 0) and
/// fills in avg_logprob.
GeneratedQuery make_generated_query(std::string text, std::string source_doc_id,
                                    std::vector<double> token_logprobs);

double mean_logprob(std::span<const double> logprobs);

// Generation endpoint wire contract.
struct GenerationRequest {
  std::string prompt;
  int max_new_tokens = kMaxNewTokens;
  std::string decoding = "greedy";
  bool logprobs = true;
};

struct Completion {
  std::vector<std::string> tokens;
  std::vector<double> token_logprobs;
  std::string text;
};

std::string encode_request(const GenerationRequest& request);
/// Throws Error(kParse) on a malformed payload.
Completion decode_completion(std::string_view body);

class GenerationClient {
 public:
  virtual ~GenerationClient() = default;
  /// Throws TransportError on endpoint failure. Must be safe to call concurrently.
  virtual Completion complete(const GenerationRequest& request) = 0;
};

/// POSTs the JSON request to an http(s) URL. The optional key is sent as a
/// bearer token.
class HttpGenerationClient : public GenerationClient {
 public:
  HttpGenerationClient(std::string url, std::optional<std::string> api_key,
                       int timeout_seconds = 120);
  Completion complete(const GenerationRequest& request) override;

 private:
  std::string base_;
  std::string path_;
  std::optional<std::string> api_key_;
  int timeout_seconds_;
};

/// Keeps at most kMaxNewTokens tokens, cut at the first line break. A token
/// containing a break contributes its text before the break, and its
/// log-prob only if that prefix is non-blank. nullopt if nothing remains.
std::optional<GeneratedQuery> postprocess_completion(const Completion& completion,
                                                     std::string_view source_doc_id);

/// One greedy request; nullopt marks a discarded (empty) completion.
std::optional<GeneratedQuery> generate(GenerationClient& client, const std::string& prompt,
                                       std::string_view source_doc_id);

/// `n` distinct ordinals drawn uniformly from [0, population), returned ascending.
std::vector<std::size_t> sample_documents(std::size_t population, std::size_t n,
                                          std::uint64_t seed);

struct GenerationOptions {
  std::size_t num_queries = 100000;
  std::uint64_t seed = 1;
  unsigned max_in_flight = 4;
  int max_retries = 3;
  int retry_backoff_ms = 200;
};

struct GenerationResult {
  std::vector<GeneratedQuery> queries;  // corpus order of the source documents
  std::size_t discarded = 0;
};

GenerationResult generate_queries(const Corpus& corpus, const PromptTemplate& tmpl,
                                  GenerationClient& client, const GenerationOptions& options);

/// The ceil(fraction * N) queries with the highest avg_logprob, in their
/// original order. Ties at the cut go to the earlier query.
std::vector<GeneratedQuery> filter_top_fraction(std::span<const GeneratedQuery> queries,
                                                double fraction = 0.10);

/// JSONL {"source_doc_id", "text", "token_logprobs", "avg_logprob"}.
std::vector<GeneratedQuery> read_generated_queries(const std::filesystem::path& path);
void write_generated_queries(std::span<const GeneratedQuery> queries,
                             const std::filesystem::path& path);

struct CheckedQuery {
  GeneratedQuery query;
  bool passed = false;
};

/// Generated-query records plus a boolean "passed" column.
std::vector<CheckedQuery> read_checked_queries(const std::filesystem::path& path);
void write_checked_queries(std::span<const CheckedQuery> queries,
                           const std::filesystem::path& path);

}  // namespace synthrank
