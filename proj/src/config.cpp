#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"
#include "synthrank/pipeline.hpp"

namespace synthrank {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

[[noreturn]] void config_error(const std::string& what) { throw Error(ErrorCode::kConfig, what); }

// Reads the object's keys, rejecting anything not in `allowed`.
class Section {
 public:
  Section(const json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) config_error(where_ + " must be an object");
  }

  void check_keys(std::initializer_list<std::string_view> allowed) const {
    for (const auto& [key, v] : j_.items()) {
      if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
        config_error(fmt::format("unknown key '{}' in {}", key, where_));
      }
    }
  }

  bool has(const char* key) const { return j_.contains(key) && !j_.at(key).is_null(); }

  template <typename T>
  void get(const char* key, T& out) const {
    if (!has(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      config_error(fmt::format("{}.{} has the wrong type", where_, key));
    }
  }

  template <typename T>
  T required(const char* key) const {
    if (!has(key)) config_error(fmt::format("{} is missing '{}'", where_, key));
    T out{};
    get(key, out);
    return out;
  }

  fs::path path(const char* key, const fs::path& base) const {
    return resolve(required<std::string>(key), base);
  }
  std::optional<fs::path> optional_path(const char* key, const fs::path& base) const {
    if (!has(key)) return std::nullopt;
    return resolve(required<std::string>(key), base);
  }

  const json& at(const char* key) const { return j_.at(key); }
  const std::string& where() const { return where_; }

  static fs::path resolve(const std::string& p, const fs::path& base) {
    if (p.empty()) config_error("empty path in config");
    fs::path out(p);
    if (out.is_relative()) out = base / out;
    return out.lexically_normal();
  }

 private:
  const json& j_;
  std::string where_;
};

std::string path_string(const fs::path& p) { return fs::absolute(p).lexically_normal().string(); }

void require_file(const fs::path& p, std::string_view what) {
  std::error_code ec;
  if (!fs::is_regular_file(p, ec)) config_error(fmt::format("{}: file not found: {}", what, p.string()));
}

}  // namespace

Recipe parse_recipe(std::string_view name) {
  if (name == "inpars") return Recipe::kInpars;
  if (name == "inpars_light" || name == "inpars-light") return Recipe::kInparsLight;
  if (name == "all_domain" || name == "all-domain") return Recipe::kAllDomain;
  if (name == "eval_only" || name == "eval-only") return Recipe::kEvalOnly;
  throw Error(ErrorCode::kConfig, "unknown recipe '" + std::string(name) +
                                      "' (expected inpars, inpars_light, all_domain, eval_only)");
}

std::string_view recipe_name(Recipe recipe) {
  switch (recipe) {
    case Recipe::kInpars: return "inpars";
    case Recipe::kInparsLight: return "inpars_light";
    case Recipe::kAllDomain: return "all_domain";
    case Recipe::kEvalOnly: return "eval_only";
  }
  return "?";
}

const CollectionConfig& PipelineConfig::collection(std::string_view name) const {
  for (const auto& c : collections) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::kConfig, "no collection named '" + std::string(name) + "'");
}

const QuerySetConfig& PipelineConfig::query_set(std::string_view name) const {
  for (const auto& q : query_sets) {
    if (q.name == name) return q;
  }
  throw Error(ErrorCode::kConfig, "no query set named '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  try {
    retrieval.bm25.validate();
    training.validate();
    consistency.validate();
  } catch (const Error& e) {
    config_error(e.what());
  }
  if (output_dir.empty()) config_error("output_dir is required");
  if (collections.empty()) config_error("at least one collection is required");
  if (seeds.empty()) config_error("seeds must be non-empty");
  if (std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() != seeds.size()) {
    config_error("seeds must be distinct");
  }
  if (rerank_depth < 1 || rerank_depth > retrieval.stage1_k) {
    config_error(fmt::format("rerank_depth must be in [1, stage1_k = {}], got {}",
                             retrieval.stage1_k, rerank_depth));
  }
  if (significance_threshold && !(*significance_threshold > 0.0 && *significance_threshold < 1.0)) {
    config_error("significance_threshold must be in (0, 1)");
  }
  if (checker_model) require_file(*checker_model, "consistency.checker_model");

  std::set<std::string> names;
  for (const auto& c : collections) {
    if (c.name.empty()) config_error("collection without a name");
    if (!names.insert(c.name).second) config_error("duplicate collection '" + c.name + "'");
    const auto where = "collection '" + c.name + "'";
    require_file(c.corpus, where + " corpus");
    require_file(c.queries, where + " queries");
    require_file(c.qrels, where + " qrels");
    if (c.baseline_run) require_file(*c.baseline_run, where + " baseline_run");
    if (c.external_run) require_file(*c.external_run, where + " external_run");
    for (const auto& p : c.external_checkpoints) require_file(p, where + " checkpoint");
    if (c.metrics.empty()) config_error(where + " lists no metrics");
    for (const auto& m : c.metrics) {
      try {
        evaluate_metric({}, {}, m);
      } catch (const Error& e) {
        config_error(where + ": " + e.what());
      }
    }
  }
  std::set<std::string> qs_names;
  for (const auto& q : query_sets) {
    const auto where = "query set '" + q.name + "'";
    if (q.name.empty()) config_error("query set without a name");
    if (!qs_names.insert(q.name).second) config_error("duplicate query set '" + q.name + "'");
    if (!names.count(q.collection)) {
      config_error(where + " refers to unknown collection '" + q.collection + "'");
    }
    if (!(q.keep_fraction > 0.0 && q.keep_fraction <= 1.0)) {
      config_error(where + ": keep_fraction must be in (0, 1]");
    }
    if (q.offline_file) {
      require_file(*q.offline_file, where + " offline_file");
    } else {
      if (!generation.endpoint) config_error(where + " needs an offline_file or generation.endpoint");
      if (q.examples.size() != 3) config_error(where + " needs exactly 3 prompt examples");
      if (q.num_queries == 0) config_error(where + ": num_queries must be >= 1");
    }
  }
  if (!query_sets.empty()) {
    for (const auto& c : collections) {
      if (!qs_names.count(c.query_set)) {
        config_error("collection '" + c.name + "' refers to unknown query set '" + c.query_set + "'");
      }
    }
  }
}

PipelineConfig parse_config(std::string_view json_text, const fs::path& base_dir) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const json::parse_error& e) {
    config_error(std::string("config is not valid JSON: ") + e.what());
  }
  const Section top(root, "config");
  top.check_keys({"schema_version", "output_dir", "seeds", "rerank_depth", "significance_threshold",
                  "bm25", "generation", "training", "consistency", "collections", "query_sets"});
  const int version = top.required<int>("schema_version");
  if (version != kConfigSchemaVersion) {
    config_error(fmt::format("unsupported schema_version {} (expected {})", version,
                             kConfigSchemaVersion));
  }

  PipelineConfig c;
  c.output_dir = top.path("output_dir", base_dir);
  top.get("seeds", c.seeds);
  top.get("rerank_depth", c.rerank_depth);
  if (top.has("significance_threshold")) {
    c.significance_threshold = top.required<double>("significance_threshold");
  }

  if (top.has("bm25")) {
    const Section s(top.at("bm25"), "bm25");
    s.check_keys({"k1", "b", "stage1_k", "remove_stopwords", "threads"});
    s.get("k1", c.retrieval.bm25.k1);
    s.get("b", c.retrieval.bm25.b);
    s.get("stage1_k", c.retrieval.stage1_k);
    s.get("remove_stopwords", c.retrieval.tokenizer.remove_stopwords);
    s.get("threads", c.retrieval.threads);
  }
  if (top.has("generation")) {
    const Section s(top.at("generation"), "generation");
    s.check_keys({"endpoint", "seed", "max_in_flight", "max_retries", "retry_backoff_ms",
                  "timeout_seconds"});
    if (s.has("endpoint")) c.generation.endpoint = s.required<std::string>("endpoint");
    s.get("seed", c.generation.seed);
    s.get("max_in_flight", c.generation.max_in_flight);
    s.get("max_retries", c.generation.max_retries);
    s.get("retry_backoff_ms", c.generation.retry_backoff_ms);
    s.get("timeout_seconds", c.generation.timeout_seconds);
  }
  if (top.has("training")) {
    const Section s(top.at("training"), "training");
    s.check_keys({"epochs", "dim", "hash_bits", "head_lr", "base_lr", "weight_decay",
                  "accum_steps", "negatives", "negative_pool_depth", "warmup_fraction",
                  "init_scale", "max_query_tokens", "max_doc_tokens"});
    auto& t = c.training;
    s.get("epochs", t.epochs);
    s.get("dim", t.model.dim);
    s.get("hash_bits", t.model.hash_bits);
    s.get("head_lr", t.optimizer.head_lr);
    s.get("base_lr", t.optimizer.embedding_lr);
    s.get("weight_decay", t.optimizer.weight_decay);
    s.get("accum_steps", t.accumulation_steps);
    s.get("negatives", t.negatives);
    s.get("negative_pool_depth", t.negative_pool_depth);
    s.get("warmup_fraction", t.warmup_fraction);
    s.get("init_scale", t.model.init_scale);
    s.get("max_query_tokens", t.model.truncation.max_query_tokens);
    s.get("max_doc_tokens", t.model.truncation.max_doc_tokens);
  }
  c.training.model.tokenizer = c.retrieval.tokenizer;
  if (top.has("consistency")) {
    const Section s(top.at("consistency"), "consistency");
    s.check_keys({"k", "pool_depth", "threads", "checker_model"});
    s.get("k", c.consistency.k);
    s.get("pool_depth", c.consistency.pool_depth);
    s.get("threads", c.consistency.threads);
    c.checker_model = s.optional_path("checker_model", base_dir);
  }

  if (top.has("collections")) {
    const auto& arr = top.at("collections");
    if (!arr.is_array()) config_error("collections must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Section s(arr[i], fmt::format("collections[{}]", i));
      s.check_keys({"name", "corpus", "format", "queries", "qrels", "metrics", "query_set",
                    "baseline_run", "external_run", "external_checkpoints"});
      CollectionConfig col;
      col.name = s.required<std::string>("name");
      col.corpus = s.path("corpus", base_dir);
      if (s.has("format")) {
        try {
          col.corpus_format = parse_corpus_format(s.required<std::string>("format"));
        } catch (const Error& e) {
          config_error(s.where() + ": " + e.what());
        }
      }
      col.queries = s.path("queries", base_dir);
      col.qrels = s.path("qrels", base_dir);
      s.get("metrics", col.metrics);
      col.query_set = col.name;
      s.get("query_set", col.query_set);
      col.baseline_run = s.optional_path("baseline_run", base_dir);
      col.external_run = s.optional_path("external_run", base_dir);
      std::vector<std::string> checkpoints;
      s.get("external_checkpoints", checkpoints);
      for (const auto& p : checkpoints) col.external_checkpoints.push_back(Section::resolve(p, base_dir));
      c.collections.push_back(std::move(col));
    }
  }
  if (top.has("query_sets")) {
    const auto& arr = top.at("query_sets");
    if (!arr.is_array()) config_error("query_sets must be an array");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      const Section s(arr[i], fmt::format("query_sets[{}]", i));
      s.check_keys({"name", "collection", "offline_file", "examples", "num_queries",
                    "keep_fraction"});
      QuerySetConfig q;
      q.name = s.required<std::string>("name");
      q.collection = s.required<std::string>("collection");
      q.offline_file = s.optional_path("offline_file", base_dir);
      s.get("num_queries", q.num_queries);
      s.get("keep_fraction", q.keep_fraction);
      if (s.has("examples")) {
        const auto& ex = s.at("examples");
        if (!ex.is_array()) config_error(s.where() + ".examples must be an array");
        for (std::size_t k = 0; k < ex.size(); ++k) {
          const Section e(ex[k], fmt::format("{}.examples[{}]", s.where(), k));
          e.check_keys({"document", "query"});
          q.examples.push_back({e.required<std::string>("document"), e.required<std::string>("query")});
        }
      }
      c.query_sets.push_back(std::move(q));
    }
  }
  c.validate();
  return c;
}

PipelineConfig load_config(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kConfig, "cannot open config " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), fs::absolute(path).parent_path());
}

std::string config_to_json(const PipelineConfig& c) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["output_dir"] = path_string(c.output_dir);
  j["seeds"] = c.seeds;
  j["rerank_depth"] = c.rerank_depth;
  j["significance_threshold"] =
      c.significance_threshold ? json(*c.significance_threshold) : json(nullptr);
  j["bm25"] = {{"k1", c.retrieval.bm25.k1},
               {"b", c.retrieval.bm25.b},
               {"stage1_k", c.retrieval.stage1_k},
               {"remove_stopwords", c.retrieval.tokenizer.remove_stopwords},
               {"threads", c.retrieval.threads}};
  j["generation"] = {{"endpoint", c.generation.endpoint ? json(*c.generation.endpoint) : json(nullptr)},
                     {"seed", c.generation.seed},
                     {"max_in_flight", c.generation.max_in_flight},
                     {"max_retries", c.generation.max_retries},
                     {"retry_backoff_ms", c.generation.retry_backoff_ms},
                     {"timeout_seconds", c.generation.timeout_seconds}};
  const auto& t = c.training;
  j["training"] = {{"epochs", t.epochs},
                   {"dim", t.model.dim},
                   {"hash_bits", t.model.hash_bits},
                   {"head_lr", t.optimizer.head_lr},
                   {"base_lr", t.optimizer.embedding_lr},
                   {"weight_decay", t.optimizer.weight_decay},
                   {"accum_steps", t.accumulation_steps},
                   {"negatives", t.negatives},
                   {"negative_pool_depth", t.negative_pool_depth},
                   {"warmup_fraction", t.warmup_fraction},
                   {"init_scale", t.model.init_scale},
                   {"max_query_tokens", t.model.truncation.max_query_tokens},
                   {"max_doc_tokens", t.model.truncation.max_doc_tokens}};
  j["consistency"] = {{"k", c.consistency.k},
                      {"pool_depth", c.consistency.pool_depth},
                      {"threads", c.consistency.threads},
                      {"checker_model", c.checker_model ? json(path_string(*c.checker_model))
                                                        : json(nullptr)}};
  j["collections"] = json::array();
  for (const auto& col : c.collections) {
    json cj = {{"name", col.name},
               {"corpus", path_string(col.corpus)},
               {"format", col.corpus_format == CorpusFormat::kJsonl ? "jsonl" : "tsv"},
               {"queries", path_string(col.queries)},
               {"qrels", path_string(col.qrels)},
               {"metrics", col.metrics},
               {"query_set", col.query_set}};
    if (col.baseline_run) cj["baseline_run"] = path_string(*col.baseline_run);
    if (col.external_run) cj["external_run"] = path_string(*col.external_run);
    if (!col.external_checkpoints.empty()) {
      json arr = json::array();
      for (const auto& p : col.external_checkpoints) arr.push_back(path_string(p));
      cj["external_checkpoints"] = arr;
    }
    j["collections"].push_back(cj);
  }
  j["query_sets"] = json::array();
  for (const auto& q : c.query_sets) {
    json qj = {{"name", q.name},
               {"collection", q.collection},
               {"num_queries", q.num_queries},
               {"keep_fraction", q.keep_fraction}};
    if (q.offline_file) qj["offline_file"] = path_string(*q.offline_file);
    json ex = json::array();
    for (const auto& e : q.examples) ex.push_back({{"document", e.document_text}, {"query", e.relevant_query}});
    qj["examples"] = ex;
    j["query_sets"].push_back(qj);
  }
  return j.dump(2) + "\n";
}

}  // namespace synthrank
