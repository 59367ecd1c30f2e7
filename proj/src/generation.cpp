#include <fmt/format.h>
#include <httplib.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <nlohmann/json.hpp>
#include <numeric>
#include <thread>

#include "synthrank/error.hpp"
#include "synthrank/random.hpp"
#include "synthrank/synth_gen.hpp"
#include "synthrank/text.hpp"

namespace synthrank {

namespace {

using nlohmann::json;

json query_to_json(const GeneratedQuery& q) {
  return json{{"source_doc_id", q.source_doc_id},
              {"text", q.text},
              {"token_logprobs", q.token_logprobs},
              {"avg_logprob", q.avg_logprob}};
}

GeneratedQuery query_from_json(const json& obj) {
  if (!obj.is_object()) throw std::invalid_argument("record is not a JSON object");
  for (const char* key : {"source_doc_id", "text", "token_logprobs"}) {
    if (!obj.contains(key)) throw std::invalid_argument(std::string("missing field ") + key);
  }
  return make_generated_query(obj.at("text").get<std::string>(),
                              obj.at("source_doc_id").get<std::string>(),
                              obj.at("token_logprobs").get<std::vector<double>>());
}

template <typename Fn>
void read_jsonl(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    if (!text::is_valid_utf8(line)) throw ParseError(path.string(), line_no, "invalid UTF-8");
    try {
      fn(json::parse(line));
    } catch (const json::exception& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const std::invalid_argument& e) {
      throw ParseError(path.string(), line_no, e.what());
    } catch (const Error& e) {
      throw ParseError(path.string(), line_no, e.what());
    }
  }
}

void write_lines(const std::filesystem::path& path, const std::vector<json>& records) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error(ErrorCode::kIo, "write failed: " + path.string());
}

}  // namespace

double mean_logprob(std::span<const double> logprobs) {
  if (logprobs.empty()) return 0.0;
  return std::accumulate(logprobs.begin(), logprobs.end(), 0.0) /
         static_cast<double>(logprobs.size());
}

GeneratedQuery make_generated_query(std::string query_text, std::string source_doc_id,
                                    std::vector<double> token_logprobs) {
  if (text::trim(query_text).empty()) {
    throw Error(ErrorCode::kInvalidArgument, "generated query text is empty");
  }
  if (query_text.find_first_of("\r\n") != std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "generated query text spans multiple lines");
  }
  if (source_doc_id.empty()) throw Error(ErrorCode::kInvalidArgument, "missing source_doc_id");
  if (token_logprobs.empty()) throw Error(ErrorCode::kInvalidArgument, "no token log-probs");
  for (const double lp : token_logprobs) {
    if (!std::isfinite(lp) || lp > 0.0) {
      throw Error(ErrorCode::kInvalidArgument, fmt::format("bad token log-prob {}", lp));
    }
  }
  GeneratedQuery q;
  q.text = std::move(query_text);
  q.source_doc_id = std::move(source_doc_id);
  q.avg_logprob = mean_logprob(token_logprobs);
  q.token_logprobs = std::move(token_logprobs);
  return q;
}

std::string encode_request(const GenerationRequest& request) {
  return json{{"prompt", request.prompt},
              {"max_new_tokens", request.max_new_tokens},
              {"decoding", request.decoding},
              {"logprobs", request.logprobs}}
      .dump();
}

Completion decode_completion(std::string_view body) {
  try {
    const json obj = json::parse(body);
    Completion c;
    c.tokens = obj.at("tokens").get<std::vector<std::string>>();
    c.token_logprobs = obj.at("token_logprobs").get<std::vector<double>>();
    c.text = obj.value("text", std::string());
    if (c.tokens.size() != c.token_logprobs.size()) {
      throw Error(ErrorCode::kParse,
                  fmt::format("completion has {} tokens but {} log-probs", c.tokens.size(),
                              c.token_logprobs.size()));
    }
    return c;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("malformed completion: ") + e.what());
  }
}

HttpGenerationClient::HttpGenerationClient(std::string url, std::optional<std::string> api_key,
                                           int timeout_seconds)
    : api_key_(std::move(api_key)), timeout_seconds_(timeout_seconds) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw Error(ErrorCode::kInvalidArgument, "endpoint URL needs a scheme: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  base_ = url.substr(0, path_start);
  path_ = path_start == std::string::npos ? "/" : url.substr(path_start);
}

Completion HttpGenerationClient::complete(const GenerationRequest& request) {
  httplib::Client client(base_);
  client.set_connection_timeout(timeout_seconds_);
  client.set_read_timeout(timeout_seconds_);
  httplib::Headers headers;
  if (api_key_) headers.emplace("Authorization", "Bearer " + *api_key_);
  auto res = client.Post(path_, headers, encode_request(request), "application/json");
  if (!res) {
    throw TransportError(fmt::format("request to {}{} failed: {}", base_, path_,
                                     httplib::to_string(res.error())));
  }
  if (res->status != 200) {
    throw TransportError(fmt::format("endpoint {}{} returned HTTP {}", base_, path_, res->status));
  }
  return decode_completion(res->body);
}

std::optional<GeneratedQuery> postprocess_completion(const Completion& completion,
                                                     std::string_view source_doc_id) {
  if (completion.tokens.size() != completion.token_logprobs.size()) {
    throw Error(ErrorCode::kParse, "completion tokens and log-probs differ in length");
  }
  std::string query;
  std::vector<double> kept;
  const std::size_t limit =
      std::min(completion.tokens.size(), static_cast<std::size_t>(kMaxNewTokens));
  for (std::size_t i = 0; i < limit; ++i) {
    const auto& tok = completion.tokens[i];
    const auto brk = tok.find_first_of("\r\n");
    if (brk == std::string::npos) {
      query += tok;
      kept.push_back(completion.token_logprobs[i]);
      continue;
    }
    const std::string_view prefix(tok.data(), brk);
    if (!text::trim(prefix).empty()) {
      query += prefix;
      kept.push_back(completion.token_logprobs[i]);
    }
    break;
  }
  const auto trimmed = text::trim(query);
  if (trimmed.empty() || kept.empty()) return std::nullopt;
  return make_generated_query(std::string(trimmed), std::string(source_doc_id), std::move(kept));
}

std::optional<GeneratedQuery> generate(GenerationClient& client, const std::string& prompt,
                                       std::string_view source_doc_id) {
  GenerationRequest request;
  request.prompt = prompt;
  return postprocess_completion(client.complete(request), source_doc_id);
}

std::vector<std::size_t> sample_documents(std::size_t population, std::size_t n,
                                          std::uint64_t seed) {
  n = std::min(n, population);
  std::vector<std::size_t> pool(population);
  std::iota(pool.begin(), pool.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto j = i + static_cast<std::size_t>(uniform_below(rng, population - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(n);
  std::sort(pool.begin(), pool.end());
  return pool;
}

GenerationResult generate_queries(const Corpus& corpus, const PromptTemplate& tmpl,
                                  GenerationClient& client, const GenerationOptions& options) {
  const auto picks = sample_documents(corpus.size(), options.num_queries, options.seed);
  if (picks.size() < options.num_queries) {
    spdlog::warn("corpus has only {} documents; generating {} queries instead of {}",
                 corpus.size(), picks.size(), options.num_queries);
  }
  std::vector<std::optional<GeneratedQuery>> slots(picks.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= picks.size()) return;
      {
        std::lock_guard lock(failure_mutex);
        if (failure) return;
      }
      const Document& doc = corpus[picks[i]];
      try {
        const auto prompt = build_prompt(tmpl, doc.combined_text());
        for (int attempt = 0;; ++attempt) {
          try {
            slots[i] = generate(client, prompt, doc.doc_id);
            break;
          } catch (const TransportError& e) {
            if (attempt >= options.max_retries) throw;
            spdlog::warn("generation for {} failed (attempt {}): {}", doc.doc_id, attempt + 1,
                         e.what());
            std::this_thread::sleep_for(
                std::chrono::milliseconds(options.retry_backoff_ms * (1 << attempt)));
          }
        }
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        return;
      }
    }
  };

  const unsigned workers = std::max(1u, std::min<unsigned>(options.max_in_flight,
                                                           static_cast<unsigned>(picks.size())));
  {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  if (failure) std::rethrow_exception(failure);

  GenerationResult result;
  for (auto& slot : slots) {
    if (slot) {
      result.queries.push_back(std::move(*slot));
    } else {
      ++result.discarded;
    }
  }
  if (result.discarded > 0) spdlog::info("discarded {} empty completions", result.discarded);
  return result;
}

std::vector<GeneratedQuery> filter_top_fraction(std::span<const GeneratedQuery> queries,
                                                double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument,
                fmt::format("keep fraction must be in (0, 1], got {}", fraction));
  }
  if (queries.empty()) return {};
  const std::size_t keep = std::min(queries.size(), ceil_fraction(fraction, queries.size()));
  std::vector<std::size_t> order(queries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return queries[a].avg_logprob > queries[b].avg_logprob;
  });
  order.resize(keep);
  std::sort(order.begin(), order.end());
  std::vector<GeneratedQuery> out;
  out.reserve(keep);
  for (const auto i : order) out.push_back(queries[i]);
  return out;
}

std::vector<GeneratedQuery> read_generated_queries(const std::filesystem::path& path) {
  std::vector<GeneratedQuery> out;
  read_jsonl(path, [&](const json& obj) { out.push_back(query_from_json(obj)); });
  return out;
}

void write_generated_queries(std::span<const GeneratedQuery> queries,
                             const std::filesystem::path& path) {
  std::vector<json> records;
  records.reserve(queries.size());
  for (const auto& q : queries) records.push_back(query_to_json(q));
  write_lines(path, records);
}

std::vector<CheckedQuery> read_checked_queries(const std::filesystem::path& path) {
  std::vector<CheckedQuery> out;
  read_jsonl(path, [&](const json& obj) {
    if (!obj.contains("passed") || !obj.at("passed").is_boolean()) {
      throw std::invalid_argument("missing boolean field passed");
    }
    out.push_back({query_from_json(obj), obj.at("passed").get<bool>()});
  });
  return out;
}

void write_checked_queries(std::span<const CheckedQuery> queries,
                           const std::filesystem::path& path) {
  std::vector<json> records;
  records.reserve(queries.size());
  for (const auto& q : queries) {
    auto obj = query_to_json(q.query);
    obj["passed"] = q.passed;
    records.push_back(std::move(obj));
  }
  write_lines(path, records);
}

}  // namespace synthrank
