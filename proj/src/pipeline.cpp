#include "synthrank/pipeline.hpp"

#include <fcntl.h>
#include <fmt/format.h>
#include <openssl/evp.h>
#include <signal.h>
#include <spdlog/spdlog.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <set>
#include <sstream>

#include "synthrank/error.hpp"
#include "synthrank/eval.hpp"

namespace synthrank {

using nlohmann::json;
namespace fs = std::filesystem;

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kIo, "sha256 init failed");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx.get(), buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx.get(), digest, &len);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

namespace {

std::string string_sha256(std::string_view text) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_Digest(text.data(), text.size(), digest, &len, EVP_sha256(), nullptr);
  std::string hex;
  for (unsigned i = 0; i < len; ++i) hex += fmt::format("{:02x}", digest[i]);
  return hex;
}

void write_text_file(const fs::path& path, std::string_view text) {
  fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out << text;
    if (!out) throw Error(ErrorCode::kIo, "write failed: " + tmp.string());
  }
  fs::rename(tmp, path);
}

class OutputLock {
 public:
  explicit OutputLock(fs::path path) : path_(std::move(path)) {
    fs::create_directories(path_.parent_path());
    for (int attempt = 0; attempt < 2; ++attempt) {
      const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
      if (fd >= 0) {
        const auto pid = std::to_string(::getpid()) + "\n";
        [[maybe_unused]] auto n = ::write(fd, pid.data(), pid.size());
        ::close(fd);
        return;
      }
      if (errno != EEXIST) throw Error(ErrorCode::kIo, "cannot create lock file " + path_.string());
      if (!holder_is_gone()) break;
      spdlog::warn("removing stale lock {}", path_.string());
      fs::remove(path_);
    }
    throw Error(ErrorCode::kBusy,
                fmt::format("output directory is locked by another run ({})", path_.string()));
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  bool holder_is_gone() const {
    std::ifstream in(path_);
    long pid = 0;
    if (!(in >> pid) || pid <= 0) return false;
    return ::kill(static_cast<pid_t>(pid), 0) != 0 && errno == ESRCH;
  }

  fs::path path_;
};

struct Input {
  fs::path path;
  std::string producer;  // stage kind that writes it; empty for user-supplied files
};

class StageRunner {
 public:
  StageRunner(fs::path root, std::string config_json, const RecipeOptions& options,
              RecipeOutcome& outcome)
      : root_(std::move(root)),
        config_json_(std::move(config_json)),
        options_(options),
        outcome_(outcome) {}

  const fs::path& root() const { return root_; }

  template <typename Fn>
  void step(const std::string& kind, const std::string& id, const std::vector<Input>& inputs,
            const std::vector<fs::path>& outputs, Fn&& fn, bool always = false) {
    std::string material = id + "\n" + config_json_;
    for (const auto& in : inputs) {
      std::error_code ec;
      if (!fs::is_regular_file(in.path, ec)) {
        if (in.producer.empty()) {
          throw Error(ErrorCode::kIo, "input file not found: " + in.path.string());
        }
        throw StageError(in.producer, fmt::format("missing artifact {} needed by {}; rerun stage '{}'",
                                                  in.path.string(), id, in.producer));
      }
      material += in.path.string() + "=" + file_sha256(in.path) + "\n";
    }
    const std::string fingerprint = string_sha256(material);
    const fs::path manifest = root_ / "manifests" / (id + ".json");

    const bool forced = options_.force && (!options_.only_stage || *options_.only_stage == kind);
    if (!forced && !always && up_to_date(manifest, fingerprint, outputs)) {
      spdlog::debug("{}: up to date", id);
      outcome_.reused.push_back(id);
      return;
    }
    if (options_.only_stage && *options_.only_stage != kind) {
      throw StageError(kind, fmt::format("artifacts of {} are missing or stale; rerun stage '{}'",
                                         id, kind));
    }
    std::error_code ec;
    fs::remove(manifest, ec);
    for (const auto& out : outputs) fs::create_directories(out.parent_path());
    spdlog::info("{}: running", id);
    fn();
    json record;
    record["stage"] = kind;
    record["id"] = id;
    record["fingerprint"] = fingerprint;
    json outs = json::object();
    for (const auto& out : outputs) {
      if (!fs::is_regular_file(out, ec)) {
        throw StageError(kind, fmt::format("{} did not produce {}", id, out.string()));
      }
      outs[fs::relative(out, root_).generic_string()] = file_sha256(out);
    }
    record["outputs"] = outs;
    write_text_file(manifest, record.dump(2) + "\n");
    outcome_.executed.push_back(id);
  }

 private:
  bool up_to_date(const fs::path& manifest, const std::string& fingerprint,
                  const std::vector<fs::path>& outputs) const {
    std::ifstream in(manifest);
    if (!in) return false;
    json record;
    try {
      in >> record;
      if (record.at("fingerprint").get<std::string>() != fingerprint) return false;
      const auto& outs = record.at("outputs");
      for (const auto& out : outputs) {
        const auto key = fs::relative(out, root_).generic_string();
        std::error_code ec;
        if (!outs.contains(key) || !fs::is_regular_file(out, ec)) return false;
        if (outs.at(key).get<std::string>() != file_sha256(out)) return false;
      }
    } catch (const json::exception&) {
      return false;
    }
    return true;
  }

  fs::path root_;
  std::string config_json_;
  const RecipeOptions& options_;
  RecipeOutcome& outcome_;
};

std::string seed_dir(std::uint64_t seed) { return fmt::format("seed-{}", seed); }

class Recipes {
 public:
  Recipes(const PipelineConfig& config, const RecipeOptions& options, RecipeOutcome& outcome)
      : config_(config),
        options_(options),
        root_(config.output_dir),
        runner_(config.output_dir, config_to_json(config), options, outcome) {}

  fs::path index_path(const std::string& collection) const {
    return root_ / "index" / (collection + ".srret");
  }
  fs::path generated_path(const std::string& qs) const { return root_ / "generated" / (qs + ".jsonl"); }
  fs::path filtered_path(const std::string& qs) const { return root_ / "filtered" / (qs + ".jsonl"); }
  fs::path model_path(std::uint64_t seed, const std::string& qs, const std::string& system) const {
    return root_ / seed_dir(seed) / "models" / fmt::format("{}.{}.model", qs, system);
  }
  fs::path checked_path(std::uint64_t seed, const std::string& qs) const {
    return root_ / seed_dir(seed) / "checked" / (qs + ".jsonl");
  }
  fs::path pretrain_path(std::uint64_t seed) const {
    return root_ / seed_dir(seed) / "models" / "all.pretrain.model";
  }
  fs::path run_path(std::uint64_t seed, const std::string& system, const std::string& col) const {
    return root_ / seed_dir(seed) / "runs" / system / (col + ".run");
  }
  fs::path bm25_run_path(const std::string& col) const { return root_ / "runs" / "bm25" / (col + ".run"); }

  const Corpus& corpus(const std::string& collection) {
    auto it = corpora_.find(collection);
    if (it == corpora_.end()) {
      const auto& c = config_.collection(collection);
      it = corpora_.emplace(collection, std::make_unique<Corpus>(ingest_corpus(c.corpus, c.corpus_format))).first;
    }
    return *it->second;
  }

  const Bm25Retriever& retriever(const std::string& collection) {
    auto it = retrievers_.find(collection);
    if (it == retrievers_.end()) {
      it = retrievers_.emplace(collection, std::make_unique<Bm25Retriever>(
                                               Bm25Retriever::load(index_path(collection)))).first;
      if (it->second->combined().doc_count() != corpus(collection).size()) {
        throw StageError("index", "index for '" + collection + "' does not match its corpus; rerun stage 'index'");
      }
    }
    return *it->second;
  }

  void index(const std::string& collection) {
    const auto& c = config_.collection(collection);
    runner_.step("index", "index/" + collection, {{c.corpus, ""}}, {index_path(collection)}, [&] {
      retrievers_.erase(collection);
      Bm25Retriever(corpus(collection), config_.retrieval).save(index_path(collection));
    });
  }

  void generate(const QuerySetConfig& qs) {
    std::vector<Input> inputs{{config_.collection(qs.collection).corpus, ""}};
    if (qs.offline_file) inputs.push_back({*qs.offline_file, ""});
    runner_.step("generate", "generate/" + qs.name, inputs, {generated_path(qs.name)}, [&] {
      const auto& docs = corpus(qs.collection);
      std::vector<GeneratedQuery> queries;
      if (qs.offline_file) {
        queries = read_generated_queries(*qs.offline_file);
        for (const auto& q : queries) {
          if (!docs.ordinal_of(q.source_doc_id)) {
            throw Error(ErrorCode::kNotFound,
                        fmt::format("offline query source \"{}\" is not in collection '{}'",
                                    q.source_doc_id, qs.collection));
          }
        }
      } else {
        const char* key = std::getenv(kApiKeyEnv);
        HttpGenerationClient client(*config_.generation.endpoint,
                                    key ? std::optional<std::string>(key) : std::nullopt,
                                    config_.generation.timeout_seconds);
        GenerationOptions opts;
        opts.num_queries = qs.num_queries;
        opts.seed = config_.generation.seed;
        opts.max_in_flight = config_.generation.max_in_flight;
        opts.max_retries = config_.generation.max_retries;
        opts.retry_backoff_ms = config_.generation.retry_backoff_ms;
        auto result = generate_queries(docs, PromptTemplate(qs.examples), client, opts);
        spdlog::info("generate/{}: {} queries, {} discarded", qs.name, result.queries.size(),
                     result.discarded);
        queries = std::move(result.queries);
      }
      write_generated_queries(queries, generated_path(qs.name));
    });
  }

  void filter(const QuerySetConfig& qs) {
    runner_.step("filter", "filter/" + qs.name, {{generated_path(qs.name), "generate"}},
                 {filtered_path(qs.name)}, [&] {
                   const auto all = read_generated_queries(generated_path(qs.name));
                   const auto kept = filter_top_fraction(all, qs.keep_fraction);
                   spdlog::info("filter/{}: kept {} of {}", qs.name, kept.size(), all.size());
                   write_generated_queries(kept, filtered_path(qs.name));
                 });
  }

  void train_inpars(std::uint64_t seed, const QuerySetConfig& qs) {
    const auto out = model_path(seed, qs.name, "inpars");
    runner_.step("train", fmt::format("train/{}/{}", seed_dir(seed), qs.name),
                 {{filtered_path(qs.name), "filter"}, {index_path(qs.collection), "index"}}, {out},
                 [&] {
                   const auto queries = read_generated_queries(filtered_path(qs.name));
                   const std::vector<TrainingSource> sources{
                       {&corpus(qs.collection), &retriever(qs.collection), to_training_queries(queries)}};
                   log_training("train", qs.name, seed,
                                train_single_seed(sources, config_.training, seed))
                       .params.save(out);
                 });
  }

  // Checkpoint that checks `qs` for this seed; nullopt when an in-memory checker is supplied.
  std::optional<Input> checker_input(std::uint64_t seed, const QuerySetConfig& qs) const {
    if (options_.checker) return std::nullopt;
    if (config_.checker_model) return Input{*config_.checker_model, ""};
    return Input{model_path(seed, qs.name, "inpars"), "train"};
  }

  bool needs_trained_checker() const { return !options_.checker && !config_.checker_model; }

  void check(std::uint64_t seed, const QuerySetConfig& qs) {
    std::vector<Input> inputs{{generated_path(qs.name), "generate"}, {index_path(qs.collection), "index"}};
    const auto checker = checker_input(seed, qs);
    if (checker) inputs.push_back(*checker);
    const auto out = checked_path(seed, qs.name);
    runner_.step(
        "check", fmt::format("check/{}/{}", seed_dir(seed), qs.name), inputs, {out},
        [&] {
          const auto queries = read_generated_queries(generated_path(qs.name));
          std::optional<RankerParams> params;
          std::optional<RankerScorer> own;
          const Scorer* scorer = options_.checker;
          if (!scorer) {
            params.emplace(RankerParams::load(checker->path));
            own.emplace(*params);
            scorer = &*own;
          }
          const auto passed = check_queries(queries, *scorer, corpus(qs.collection),
                                            retriever(qs.collection), config_.consistency);
          std::vector<CheckedQuery> rows;
          std::size_t n_passed = 0;
          for (std::size_t i = 0; i < queries.size(); ++i) {
            rows.push_back({queries[i], passed[i]});
            n_passed += passed[i] ? 1 : 0;
          }
          spdlog::info("check/{}/{}: {} of {} passed", seed_dir(seed), qs.name, n_passed, queries.size());
          write_checked_queries(rows, out);
        },
        options_.checker != nullptr);
  }

  void finetune(std::uint64_t seed, const QuerySetConfig& qs, const fs::path& init,
                const std::string& init_stage, const std::string& system) {
    const auto out = model_path(seed, qs.name, system);
    runner_.step("finetune", fmt::format("finetune/{}/{}/{}", seed_dir(seed), system, qs.name),
                 {{init, init_stage}, {checked_path(seed, qs.name), "check"},
                  {index_path(qs.collection), "index"}},
                 {out}, [&] {
                   const auto initial = RankerParams::load(init);
                   std::vector<GeneratedQuery> passed;
                   for (auto& row : read_checked_queries(checked_path(seed, qs.name))) {
                     if (row.passed) passed.push_back(std::move(row.query));
                   }
                   log_training("finetune", qs.name, seed,
                                finetune_on_checked(initial, passed, corpus(qs.collection),
                                                    retriever(qs.collection), config_.training, seed))
                       .params.save(out);
                 });
  }

  void pretrain_all(std::uint64_t seed) {
    std::vector<Input> inputs;
    for (const auto& qs : config_.query_sets) {
      inputs.push_back({generated_path(qs.name), "generate"});
      inputs.push_back({index_path(qs.collection), "index"});
    }
    const auto out = pretrain_path(seed);
    runner_.step("pretrain-all", fmt::format("pretrain-all/{}", seed_dir(seed)), inputs, {out}, [&] {
      std::vector<CollectionData> data;
      for (const auto& qs : config_.query_sets) {
        data.push_back({qs.name, &corpus(qs.collection), &retriever(qs.collection),
                        read_generated_queries(generated_path(qs.name))});
      }
      log_training("pretrain-all", "all", seed, all_domain_pretrain(data, config_.training, seed))
          .params.save(out);
    });
  }

  void rerank_with(std::uint64_t seed, const std::string& system, const CollectionConfig& col,
                   const fs::path& model, const std::string& model_stage) {
    const auto out = run_path(seed, system, col.name);
    runner_.step("rerank", fmt::format("rerank/{}/{}/{}", seed_dir(seed), system, col.name),
                 {{model, model_stage}, {index_path(col.name), "index"}, {col.queries, ""}}, {out},
                 [&] {
                   const auto params = RankerParams::load(model);
                   const RankerScorer scorer(params);
                   const auto queries = read_queries(col.queries);
                   write_run(rerank(scorer, retriever(col.name), corpus(col.name), queries,
                                    config_.rerank_depth, system),
                             system, out);
                 });
  }

  void bm25(const CollectionConfig& col) {
    runner_.step("rerank", "rerank/bm25/" + col.name,
                 {{index_path(col.name), "index"}, {col.queries, ""}}, {bm25_run_path(col.name)}, [&] {
                   const auto queries = read_queries(col.queries);
                   write_run(bm25_run(retriever(col.name), queries, config_.rerank_depth), "bm25",
                             bm25_run_path(col.name));
                 });
  }

  struct PlannedSystem {
    std::string name;
    std::vector<std::uint64_t> seeds;
    std::vector<fs::path> runs;  // parallel to seeds
    std::string producer;
  };

  std::string evaluate(Recipe recipe, const std::map<std::string, std::vector<PlannedSystem>>& systems,
                       RecipeOutcome& outcome) {
    std::vector<Input> inputs;
    for (const auto& col : config_.collections) {
      inputs.push_back({col.qrels, ""});
      inputs.push_back(baseline_input(col));
      for (const auto& sys : systems.at(col.name)) {
        for (const auto& r : sys.runs) inputs.push_back({r, sys.producer});
      }
    }
    outcome.report_json = root_ / "report.json";
    outcome.report_text = root_ / "report.txt";
    runner_.step("eval", "eval", inputs, {outcome.report_json, outcome.report_text}, [&] {
      std::vector<CollectionRuns> cols;
      for (const auto& col : config_.collections) {
        CollectionRuns c{col.name, col.qrels, col.metrics, baseline_input(col).path, {}};
        for (const auto& sys : systems.at(col.name)) c.systems.push_back({sys.name, sys.seeds, sys.runs});
        cols.push_back(std::move(c));
      }
      const auto report = build_report(recipe_name(recipe), cols, config_.significance_threshold);
      write_text_file(outcome.report_json, report.json);
      write_text_file(outcome.report_text, report.table);
    });
    std::ifstream in(outcome.report_text);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
  }

 private:
  Input baseline_input(const CollectionConfig& col) const {
    if (col.baseline_run) return {*col.baseline_run, ""};
    return {bm25_run_path(col.name), "rerank"};
  }

  TrainResult log_training(std::string_view stage, std::string_view name, std::uint64_t seed,
                           TrainResult r) {
    spdlog::info("{}/{}/{}: {} instances, {} steps, {} skipped, last epoch loss {:.6f}", stage,
                 seed_dir(seed), name, r.instances, r.optimizer_steps, r.skipped_queries,
                 r.epoch_losses.empty() ? 0.0 : r.epoch_losses.back());
    return r;
  }

  const PipelineConfig& config_;
  const RecipeOptions& options_;
  fs::path root_;
  StageRunner runner_;
  std::map<std::string, std::unique_ptr<Corpus>> corpora_;
  std::map<std::string, std::unique_ptr<Bm25Retriever>> retrievers_;
};

}  // namespace

Report build_report(std::string_view label, std::span<const CollectionRuns> collections,
                    std::optional<double> threshold) {
  json report;
  report["label"] = label;
  json cols_json = json::object();
  std::vector<std::pair<std::string, ResultTable>> rows{{"BM25", {}}};
  std::map<std::string, ResultTable> system_tables;
  std::vector<std::string> system_order;
  std::map<std::pair<std::string, std::pair<std::string, std::string>>, std::string> markers;

  for (const auto& col : collections) {
    const auto qrels = read_qrels(col.qrels);
    const auto baseline = read_run(col.baseline_run);
    json cj = json::object();
    for (const auto& metric : col.metrics) {
      const auto base = evaluate_metric(baseline, qrels, metric);
      json mj;
      mj["bm25"] = {{"mean", base.mean()}, {"per_query", base.values}, {"excluded", base.excluded}};
      rows[0].second[{col.name, metric}] = base.mean();
      for (const auto& sys : col.systems) {
        if (sys.seeds.size() != sys.runs.size() || sys.runs.empty()) {
          throw Error(ErrorCode::kInvalidArgument, "system '" + sys.name + "' needs one run per seed");
        }
        SeedRunSet cells(metric, sys.seeds);
        json per_seed = json::object();
        for (std::size_t i = 0; i < sys.seeds.size(); ++i) {
          const auto scores = evaluate_metric(read_run(sys.runs[i]), qrels, metric);
          cells.add(sys.seeds[i], scores);
          per_seed[std::to_string(sys.seeds[i])] = scores.mean();
        }
        const auto avg = seed_average(cells);
        json sj = {{"mean", avg.mean()}, {"per_seed_mean", per_seed}, {"per_query", avg.values}};

        PerQueryScores a, b;
        for (const auto& [qid, v] : avg.values) {
          auto it = base.values.find(qid);
          if (it == base.values.end()) continue;
          a.values.emplace(qid, v);
          b.values.emplace(qid, it->second);
        }
        if (a.values.size() != avg.values.size() || b.values.size() != base.values.size()) {
          spdlog::warn("{}/{}/{}: testing on the {} queries shared with the baseline", col.name,
                       metric, sys.name, a.values.size());
        }
        if (a.values.size() >= 2) {
          const auto t = paired_t_test(
              a, b, threshold.value_or(default_significance_threshold(a.values.size())));
          sj["t"] = t.t_statistic;
          sj["p"] = t.p_value;
          sj["n"] = t.n;
          sj["threshold"] = t.threshold;
          sj["significant"] = t.significant;
          sj["degenerate"] = t.degenerate;
          if (t.significant) markers[{sys.name, {col.name, metric}}] = "*";
        }
        mj[sys.name] = sj;
        if (!system_tables.count(sys.name)) system_order.push_back(sys.name);
        system_tables[sys.name][{col.name, metric}] = avg.mean();
      }
      cj[metric] = mj;
    }
    cols_json[col.name] = cj;
  }
  report["collections"] = cols_json;

  json gains = json::object();
  for (const auto& name : system_order) {
    rows.emplace_back(name, system_tables[name]);
    try {
      const auto g = aggregate_gains(system_tables[name], rows[0].second);
      json ratios = json::object();
      for (const auto& [cell, r] : g.ratios) ratios[cell.first + "/" + cell.second] = r;
      gains[name] = {{"average_gain", g.average_gain}, {"wins", g.wins}, {"ratios", ratios}};
    } catch (const Error& e) {
      gains[name] = {{"error", e.what()}};
    }
  }
  report["gains"] = gains;

  std::string text = format_results_table(rows, markers);
  for (const auto& name : system_order) {
    if (gains[name].contains("average_gain")) {
      text += fmt::format("{}: average gain over BM25 {:.4f}, wins {}/{}\n", name,
                          gains[name]["average_gain"].get<double>(),
                          gains[name]["wins"].get<std::size_t>(), system_tables[name].size());
    }
  }
  if (!markers.empty()) text += "* significant difference from BM25 (paired t-test)\n";
  return {report.dump(2) + "\n", text};
}

RunSet bm25_run(const Bm25Retriever& retriever, std::span<const QueryRecord> queries,
                std::size_t depth, std::string_view tag) {
  if (depth == 0) throw Error(ErrorCode::kInvalidArgument, "run depth must be >= 1");
  RunSet run;
  for (const auto& q : queries) {
    auto& list = run[q.query_id];
    const auto hits = retriever.retrieve(q.lexical_text(), depth);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      list.push_back({q.query_id, hits[i].doc_id, static_cast<int>(i + 1), hits[i].score, std::string(tag)});
    }
  }
  return run;
}

RunSet rerank(const Scorer& scorer, const Bm25Retriever& retriever, const Corpus& corpus,
              std::span<const QueryRecord> queries, std::size_t depth, std::string_view tag) {
  if (depth == 0) throw Error(ErrorCode::kInvalidArgument, "rerank depth must be >= 1");
  if (retriever.combined().doc_count() != corpus.size()) {
    throw Error(ErrorCode::kState, "retriever was built for a different corpus");
  }
  RunSet run;
  for (const auto& q : queries) {
    auto& list = run[q.query_id];
    const auto ranked =
        rerank_candidates(scorer, q.ranker_text(), corpus, retriever.retrieve(q.lexical_text(), depth));
    for (std::size_t i = 0; i < ranked.size(); ++i) {
      list.push_back({q.query_id, ranked[i].doc_id, static_cast<int>(i + 1), ranked[i].score, std::string(tag)});
    }
  }
  return run;
}

RecipeOutcome run_recipe(const PipelineConfig& config, Recipe recipe, const RecipeOptions& options) {
  config.validate();
  if (recipe != Recipe::kEvalOnly) {
    if (config.query_sets.empty()) {
      throw Error(ErrorCode::kConfig, fmt::format("recipe {} needs query_sets", recipe_name(recipe)));
    }
  }
  fs::create_directories(config.output_dir);
  OutputLock lock(config.output_dir / ".lock");
  write_text_file(config.output_dir / "config.json", config_to_json(config));

  RecipeOutcome outcome;
  Recipes r(config, options, outcome);
  using PlannedSystem = Recipes::PlannedSystem;
  std::map<std::string, std::vector<PlannedSystem>> systems;
  for (const auto& col : config.collections) systems[col.name];

  if (recipe == Recipe::kEvalOnly) {
    for (const auto& col : config.collections) {
      const bool needs_index = !col.baseline_run || !col.external_checkpoints.empty();
      if (needs_index) r.index(col.name);
      if (!col.baseline_run) r.bm25(col);
      if (col.external_run) {
        systems[col.name].push_back({"external_run", {0}, {*col.external_run}, ""});
      }
      if (!col.external_checkpoints.empty()) {
        PlannedSystem sys{"external", {}, {}, "rerank"};
        for (std::size_t i = 0; i < col.external_checkpoints.size(); ++i) {
          r.rerank_with(i, "external", col, col.external_checkpoints[i], "");
          sys.seeds.push_back(i);
          sys.runs.push_back(r.run_path(i, "external", col.name));
        }
        systems[col.name].push_back(std::move(sys));
      }
    }
    outcome.table = r.evaluate(recipe, systems, outcome);
    return outcome;
  }

  std::set<std::string> indexed;
  for (const auto& col : config.collections) {
    r.index(col.name);
    indexed.insert(col.name);
  }
  for (const auto& qs : config.query_sets) {
    if (!indexed.count(qs.collection)) r.index(qs.collection);
    indexed.insert(qs.collection);
    r.generate(qs);
  }

  const bool want_inpars = recipe != Recipe::kAllDomain || r.needs_trained_checker();
  if (want_inpars) {
    for (const auto& qs : config.query_sets) r.filter(qs);
  }
  std::vector<std::string> system_names;
  if (recipe == Recipe::kInpars || recipe == Recipe::kInparsLight) system_names.push_back("inpars");
  if (recipe == Recipe::kInparsLight) system_names.push_back("inpars_light");
  if (recipe == Recipe::kAllDomain) system_names.push_back("all_domain");

  for (const auto seed : config.seeds) {
    if (want_inpars) {
      for (const auto& qs : config.query_sets) r.train_inpars(seed, qs);
    }
    if (recipe == Recipe::kInparsLight || recipe == Recipe::kAllDomain) {
      for (const auto& qs : config.query_sets) r.check(seed, qs);
    }
    if (recipe == Recipe::kInparsLight) {
      for (const auto& qs : config.query_sets) {
        r.finetune(seed, qs, r.model_path(seed, qs.name, "inpars"), "train", "inpars_light");
      }
    }
    if (recipe == Recipe::kAllDomain) {
      r.pretrain_all(seed);
      for (const auto& qs : config.query_sets) {
        r.finetune(seed, qs, r.pretrain_path(seed), "pretrain-all", "all_domain");
      }
    }
    for (const auto& col : config.collections) {
      for (const auto& system : system_names) {
        const std::string stage = system == "inpars" ? "train" : "finetune";
        r.rerank_with(seed, system, col, r.model_path(seed, col.query_set, system), stage);
      }
    }
  }
  for (const auto& col : config.collections) {
    if (!col.baseline_run) r.bm25(col);
    for (const auto& system : system_names) {
      PlannedSystem sys{system, config.seeds, {}, "rerank"};
      for (const auto seed : config.seeds) sys.runs.push_back(r.run_path(seed, system, col.name));
      systems[col.name].push_back(std::move(sys));
    }
  }
  outcome.table = r.evaluate(recipe, systems, outcome);
  return outcome;
}

}  // namespace synthrank
