#pragma once

// Configuration and end-to-end recipes.
//
// Output directory layout:
//
//   config.json                           normalized copy of the config
//   manifests/<stage>...json              one per completed stage step
//   index/<collection>.srret              BM25 retriever
//   generated/<query_set>.jsonl           all generated queries
//   filtered/<query_set>.jsonl            top fraction by avg log-prob
//   seed-<s>/models/<query_set>.<system>.model
//   seed-<s>/checked/<query_set>.jsonl
//   seed-<s>/runs/<system>/<collection>.run
//   runs/bm25/<collection>.run
//   report.json, report.txt

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "synthrank/bm25.hpp"
#include "synthrank/consistency.hpp"
#include "synthrank/corpus.hpp"
#include "synthrank/ranker.hpp"
#include "synthrank/synth_gen.hpp"

namespace synthrank {

inline constexpr int kConfigSchemaVersion = 1;

/// A document collection and the judged queries it is evaluated on.
struct CollectionConfig {
  std::string name;
  std::filesystem::path corpus;
  CorpusFormat corpus_format = CorpusFormat::kJsonl;
  std::filesystem::path queries;
  std::filesystem::path qrels;
  std::vector<std::string> metrics{"ndcg@10"};
  /// Generated query set whose models re-rank this collection; defaults to `name`.
  std::string query_set;
  /// Evaluated in place of a computed BM25 run when given.
  std::optional<std::filesystem::path> baseline_run;
  /// eval_only inputs: a finished run and/or checkpoints to re-rank with.
  std::optional<std::filesystem::path> external_run;
  std::vector<std::filesystem::path> external_checkpoints;
};

/// Synthetic queries generated from one collection's documents.
struct QuerySetConfig {
  std::string name;
  std::string collection;
  std::optional<std::filesystem::path> offline_file;
  std::vector<FewShotExample> examples;
  std::size_t num_queries = 100000;
  double keep_fraction = 0.10;
};

struct GenerationConfig {
  std::optional<std::string> endpoint;
  std::uint64_t seed = 1;
  unsigned max_in_flight = 4;
  int max_retries = 3;
  int retry_backoff_ms = 200;
  int timeout_seconds = 120;
};

struct PipelineConfig {
  std::vector<CollectionConfig> collections;
  std::vector<QuerySetConfig> query_sets;
  RetrieverOptions retrieval;
  GenerationConfig generation;
  TrainConfig training;
  ConsistencyConfig consistency;
  std::optional<std::filesystem::path> checker_model;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::size_t rerank_depth = 100;
  std::optional<double> significance_threshold;
  std::filesystem::path output_dir;

  /// Throws Error(kConfig) naming the offending key or file.
  void validate() const;
  const CollectionConfig& collection(std::string_view name) const;
  const QuerySetConfig& query_set(std::string_view name) const;
};

/// Environment variable holding the generation endpoint credential.
inline constexpr const char* kApiKeyEnv = "SYNTHRANK_API_KEY";

/// Relative paths are resolved against `base_dir`. Throws Error(kConfig).
PipelineConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir);
PipelineConfig load_config(const std::filesystem::path& path);
/// Canonical JSON with absolute paths; parse_config(to_json(c)) == c.
std::string config_to_json(const PipelineConfig& config);

enum class Recipe { kInpars, kInparsLight, kAllDomain, kEvalOnly };

Recipe parse_recipe(std::string_view name);
std::string_view recipe_name(Recipe recipe);

/// BM25 top-`depth` for each query's lexical text, re-sorted by the scorer on
/// its ranker text; ties by doc_id. Ranks are 1..n with n <= depth.
RunSet rerank(const Scorer& scorer, const Bm25Retriever& retriever, const Corpus& corpus,
              std::span<const QueryRecord> queries, std::size_t depth = 100,
              std::string_view tag = "rerank");

/// Plain BM25 run for the lexical text of each query.
RunSet bm25_run(const Bm25Retriever& retriever, std::span<const QueryRecord> queries,
                std::size_t depth, std::string_view tag = "bm25");

struct RecipeOptions {
  /// Ignore manifests and recompute every stage (only the selected one with only_stage).
  bool force = false;
  /// Run only this stage kind (index, generate, filter, train, check, finetune,
  /// pretrain-all, rerank, eval); every other stage must already be complete.
  std::optional<std::string> only_stage;
  /// Checker used for every seed, in place of the configured or trained one.
  const Scorer* checker = nullptr;
};

struct RecipeOutcome {
  std::vector<std::string> executed;
  std::vector<std::string> reused;
  std::filesystem::path report_json;
  std::filesystem::path report_text;
  std::string table;
};

/// Throws Error(kBusy) if another invocation holds the output directory and
/// StageError naming the stage to rerun when an upstream artifact is missing.
RecipeOutcome run_recipe(const PipelineConfig& config, Recipe recipe,
                         const RecipeOptions& options = {});

struct SystemRuns {
  std::string name;
  std::vector<std::uint64_t> seeds;
  std::vector<std::filesystem::path> runs;  // one per seed
};

struct CollectionRuns {
  std::string name;
  std::filesystem::path qrels;
  std::vector<std::string> metrics;
  std::filesystem::path baseline_run;
  std::vector<SystemRuns> systems;
};

struct Report {
  std::string json;
  std::string table;
};

/// Per collection and metric: baseline mean, seed-averaged system means,
/// paired t-test against the baseline, and each system's gain over it.
/// `threshold` defaults per query count.
Report build_report(std::string_view label, std::span<const CollectionRuns> collections,
                    std::optional<double> threshold = std::nullopt);

/// Lowercase hex SHA-256 of a file's bytes.
std::string file_sha256(const std::filesystem::path& path);

}  // namespace synthrank
