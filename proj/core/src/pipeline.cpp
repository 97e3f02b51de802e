#include "kcare/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <set>
#include <sstream>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "kcare/fixtures.hpp"
#include "kcare/hash.hpp"
#include "kcare/judge.hpp"
#include "kcare/metrics.hpp"
#include "kcare/pairs_io.hpp"
#include "kcare/retrieval.hpp"
#include "kcare/tgki.hpp"
#include "kcare/worker_pool.hpp"
#include "rows.hpp"

namespace kcare {

namespace fs = std::filesystem;

namespace {

std::string now_utc() {
  std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

ModelEndpoint parse_role_endpoint(const json& endpoints, const char* key, ModelRole role,
                                  std::vector<std::string>& errors) {
  if (!endpoints.contains(key)) {
    errors.push_back(std::string("endpoints: missing role '") + key + "'");
    return {};
  }
  json row = endpoints[key];
  if (row.is_object() && !row.contains("role")) {
    row["role"] = std::string(to_string(role));
  }
  ModelEndpoint endpoint = endpoint_from_row(row, std::string("endpoints.") + key, errors);
  if (endpoint.role != role) {
    errors.push_back(std::string("endpoints.") + key + ": role must be '" +
                     std::string(to_string(role)) + "'");
    endpoint.role = role;
  }
  return endpoint;
}

/// Endpoints with mock_seed 0 inherit a seed derived from the global seed,
/// role, and name — stable per endpoint, independent of stage or record.
void derive_mock_seed(ModelEndpoint& endpoint, std::uint64_t global_seed) {
  if (endpoint.transport == TransportKind::mock && endpoint.mock_seed == 0) {
    endpoint.mock_seed = hash64(std::to_string(global_seed) + ':' +
                                std::string(to_string(endpoint.role)) + ':' + endpoint.name);
  }
}

struct Layout {
  fs::path qa_file;
  fs::path pa_file;
  fs::path coverage;
  fs::path tgki_dir;
  fs::path proto_dir;
  fs::path repo;
  fs::path index_file;
  fs::path judgments;
  fs::path manifest;
};

Layout resolve_layout(const StageIo& io) {
  Layout layout;
  fs::path anchors_dir = io.anchors_dir.empty() ? io.out_dir / "anchors" : io.anchors_dir;
  layout.qa_file = anchors_dir / "query_anchors.jsonl";
  layout.pa_file = anchors_dir / "product_anchors.jsonl";
  layout.coverage = anchors_dir / "coverage.json";
  layout.tgki_dir = io.out_dir / "tgki";
  layout.proto_dir = io.out_dir / "proto";
  layout.repo = io.repo.empty() ? layout.proto_dir / "d_proto.jsonl" : io.repo;
  layout.index_file =
      io.index.empty() ? io.out_dir / "index" / "prototype_index.jsonl" : io.index;
  layout.judgments =
      io.judgments.empty() ? io.out_dir / "judge" / "judgments.jsonl" : io.judgments;
  layout.manifest = io.out_dir / "manifest.json";
  return layout;
}

void require_artifact(const fs::path& path, const std::string& what) {
  if (!fs::exists(path)) {
    fail(Errc::dependency_missing, what + " (" + path.string() + ")");
  }
}

void hash_input(StageResult& result, const fs::path& path) {
  if (!path.empty() && fs::exists(path) && fs::is_regular_file(path)) {
    result.inputs[path.string()] = sha256_file_hex(path);
  }
}

void hash_output(StageResult& result, const fs::path& path) {
  result.outputs[path.string()] = sha256_file_hex(path);
}

void append_manifest_entry(const fs::path& manifest_path, const std::string& config_sha,
                           const StageResult& result, const std::string& started,
                           const std::string& finished) {
  json doc = json::object();
  if (fs::exists(manifest_path)) {
    doc = read_json_file(manifest_path);
    if (!doc.is_object()) doc = json::object();
  }
  doc["config_sha256"] = config_sha;
  if (!doc.contains("entries") || !doc["entries"].is_array()) {
    doc["entries"] = json::array();
  }
  json entry = {{"stage", result.stage},   {"started_at", started},
                {"finished_at", finished}, {"inputs", result.inputs},
                {"outputs", result.outputs}, {"counters", result.counters}};
  bool replaced = false;
  for (auto& existing : doc["entries"]) {
    if (existing.value("stage", "") == result.stage) {
      existing = entry;
      replaced = true;
      break;
    }
  }
  if (!replaced) doc["entries"].push_back(std::move(entry));

  // The digest covers content identity only; wall-clock fields stay out so
  // identical reruns produce identical digests.
  json digest_rows = json::array();
  for (const auto& existing : doc["entries"]) {
    digest_rows.push_back({{"stage", existing.value("stage", "")},
                           {"inputs", existing.value("inputs", json::object())},
                           {"outputs", existing.value("outputs", json::object())},
                           {"counters", existing.value("counters", json::object())}});
  }
  doc["determinism_digest"] = sha256_hex(config_sha + '\x1f' + canonical_dump(digest_rows));
  write_json_file(manifest_path, doc);
}

// ---- stage bodies ---------------------------------------------------------

StageResult stage_anchor(const PipelineConfig& config, const StageIo& io,
                         const Layout& layout, const Gateway& gateway) {
  StageResult result;
  result.stage = "anchor";
  auto pairs = load_labeled_pairs(io.pairs);
  hash_input(result, io.pairs);
  if (config.anchoring.ranked_source.kind == RankedListSource::Kind::log_file &&
      !config.anchoring.ranked_source.address.empty()) {
    hash_input(result, config.anchoring.ranked_source.address);
  }
  if (!config.anchoring.click_log.empty()) {
    hash_input(result, config.anchoring.click_log);
  }

  std::vector<Query> queries;
  std::vector<Product> products;
  std::set<std::string> seen_queries;
  std::set<std::string> seen_products;
  for (const auto& pair : pairs) {
    if (seen_queries.insert(pair.query.id).second) queries.push_back(pair.query);
    if (seen_products.insert(pair.product.id).second) products.push_back(pair.product);
  }

  std::vector<QueryAnchors> query_anchors;
  if (config.anchoring.ranked_source.address.empty()) {
    for (const auto& query : queries) {
      query_anchors.push_back(QueryAnchors{query.id, {}, QueryAnchorSource::none});
    }
  } else {
    RankedSource source = RankedSource::open(config.anchoring.ranked_source);
    auto acquired = parallel_map(queries, config.workers,
                                 [&](const Query& query, std::size_t) {
                                   return acquire_query_anchors(query, source);
                                 });
    std::size_t failures = 0;
    for (std::size_t i = 0; i < queries.size(); ++i) {
      if (tolerated_failure(acquired[i])) {
        ++failures;
        query_anchors.push_back(QueryAnchors{queries[i].id, {}, QueryAnchorSource::none});
        continue;
      }
      query_anchors.push_back(std::move(*acquired[i].value));
    }
    enforce_abort_threshold(failures, queries.size(), config.abort_fraction, "anchor-query");
  }

  ClickLog click_log;
  if (!config.anchoring.click_log.empty()) {
    click_log = ClickLog::load(config.anchoring.click_log);
  }
  auto acquired = parallel_map(products, config.workers, [&](const Product& product,
                                                             std::size_t) {
    return acquire_product_anchors(product, click_log, gateway, config.p2q,
                                   config.anchoring.product_options);
  });
  std::vector<ProductAnchors> product_anchors;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < products.size(); ++i) {
    if (tolerated_failure(acquired[i])) {
      ++failures;
      product_anchors.push_back(ProductAnchors{products[i].id, {}, ProductAnchorSource::none});
      continue;
    }
    product_anchors.push_back(std::move(*acquired[i].value));
  }
  enforce_abort_threshold(failures, products.size(), config.abort_fraction, "anchor-product");

  save_query_anchors(layout.qa_file, query_anchors);
  save_product_anchors(layout.pa_file, product_anchors);

  std::map<std::string, QueryAnchors> qa_map;
  for (const auto& entry : query_anchors) qa_map[entry.query_id] = entry;
  std::map<std::string, ProductAnchors> pa_map;
  for (const auto& entry : product_anchors) pa_map[entry.product_id] = entry;
  CoverageReport coverage = anchor_coverage_report(pairs, qa_map, pa_map);
  json coverage_doc = {{"pair_count", coverage.pair_count},
                       {"empty_input", coverage.empty_input},
                       {"query_fraction", coverage.query_fraction},
                       {"product_fraction", coverage.product_fraction},
                       {"both_fraction", coverage.both_fraction},
                       {"query_sources", coverage.query_sources},
                       {"product_sources", coverage.product_sources}};
  write_json_file(layout.coverage, coverage_doc);

  hash_output(result, layout.qa_file);
  hash_output(result, layout.pa_file);
  hash_output(result, layout.coverage);
  result.counters["pairs"] = static_cast<long>(pairs.size());
  result.counters["unique_queries"] = static_cast<long>(queries.size());
  result.counters["unique_products"] = static_cast<long>(products.size());
  for (const auto& entry : query_anchors) {
    ++result.counters["query_source_" + std::string(to_string(entry.source))];
  }
  for (const auto& entry : product_anchors) {
    ++result.counters["product_source_" + std::string(to_string(entry.source))];
  }
  return result;
}

StageResult stage_tgki_gen(const PipelineConfig& config, const StageIo& io,
                           const Layout& layout, const Gateway& gateway) {
  StageResult result;
  result.stage = "tgki-gen";
  require_artifact(layout.qa_file, "query anchors");
  require_artifact(layout.pa_file, "product anchors");
  auto pairs = load_labeled_pairs(io.pairs, LabelPolicy::require);
  hash_input(result, io.pairs);
  hash_input(result, layout.qa_file);
  hash_input(result, layout.pa_file);

  auto qa_map = load_query_anchors(layout.qa_file);
  auto pa_map = load_product_anchors(layout.pa_file);
  std::vector<AnchoredPair> anchored;
  anchored.reserve(pairs.size());
  for (const auto& pair : pairs) {
    AnchoredPair ap;
    ap.pair = pair;
    auto qit = qa_map.find(pair.query.id);
    if (qit != qa_map.end()) ap.query_anchors = qit->second;
    auto pit = pa_map.find(pair.product.id);
    if (pit != pa_map.end()) ap.product_anchors = pit->second;
    anchored.push_back(std::move(ap));
  }

  std::array<fs::path, 4> task_paths;
  for (std::size_t i = 0; i < kTgkiTasks.size(); ++i) {
    TgkiTask task = kTgkiTasks[i];
    TgkiDataset dataset = build_tgki_dataset(task, anchored, gateway, config.teacher,
                                             config.tgki_limit, config.workers,
                                             config.abort_fraction);
    task_paths[i] =
        layout.tgki_dir / ("tgki_" + std::string(to_string(task)) + ".jsonl");
    save_tgki_dataset(task_paths[i], dataset.records);
    hash_output(result, task_paths[i]);
    std::string prefix = std::string(to_string(task)) + "_";
    result.counters[prefix + "kept"] = static_cast<long>(dataset.counts.kept);
    result.counters[prefix + "dropped_empty"] = static_cast<long>(dataset.counts.dropped_empty);
    result.counters[prefix + "failed"] = static_cast<long>(dataset.counts.failed);
  }
  fs::path relevance_path = layout.tgki_dir / "relevance.jsonl";
  std::size_t relevance_records = write_relevance_dataset(relevance_path, pairs);
  hash_output(result, relevance_path);
  result.counters["relevance_records"] = static_cast<long>(relevance_records);

  fs::path schedule_path = layout.tgki_dir / "schedule.json";
  emit_training_schedule(task_paths, relevance_path, schedule_path);
  hash_output(result, schedule_path);
  return result;
}

StageResult stage_proto_build(const PipelineConfig& config, const StageIo& io,
                              const Layout& layout, const Gateway& gateway) {
  StageResult result;
  result.stage = "proto-build";
  auto pairs = load_labeled_pairs(io.pairs, LabelPolicy::require);
  hash_input(result, io.pairs);

  ForgeEndpoints endpoints;
  endpoints.sub_model = config.sub_optimal;
  endpoints.proposers = config.proposers;
  endpoints.arbiter = config.arbiter;
  endpoints.auditor = config.quality_auditor;
  ForgeOptions options;
  options.workers = config.workers;
  options.abort_fraction = config.abort_fraction;
  options.resume = io.resume;
  ForgeCounts counts;
  Repository repo = build_repository(pairs, gateway, endpoints, layout.proto_dir, options,
                                     &counts);

  for (const char* name : {"d_hard.jsonl", "proposals.jsonl", "d_cons.jsonl", "d_proto.jsonl"}) {
    hash_output(result, layout.proto_dir / name);
  }
  result.counters["input_pairs"] = static_cast<long>(counts.input_pairs);
  result.counters["hard_cases"] = static_cast<long>(counts.hard_cases);
  result.counters["hard_parse_flags"] = static_cast<long>(counts.hard_parse_flags);
  result.counters["proposal_sets"] = static_cast<long>(counts.proposal_sets);
  result.counters["proposer_failures"] = static_cast<long>(counts.proposer_failures);
  result.counters["consensus"] = static_cast<long>(counts.consensus);
  result.counters["arbiter_parse_flags"] = static_cast<long>(counts.arbiter_parse_flags);
  result.counters["audited"] = static_cast<long>(counts.audited);
  result.counters["audit_rejects"] = static_cast<long>(counts.audit_rejects);
  result.counters["stage_failures"] = static_cast<long>(counts.stage_failures);
  result.counters["prototypes"] = static_cast<long>(repo.prototypes.size());
  return result;
}

StageResult stage_index(const PipelineConfig& config, const StageIo& io, const Layout& layout,
                        const Gateway& gateway) {
  StageResult result;
  result.stage = "index";
  require_artifact(layout.repo, "prototype repository");
  hash_input(result, layout.repo);
  Repository repo = load_repository(layout.repo);
  PrototypeIndex index = PrototypeIndex::build(repo, gateway, config.embedder, config.workers,
                                               config.abort_fraction);
  fs::path out = io.out_file.empty() ? layout.index_file : io.out_file;
  index.save(out);
  hash_output(result, out);
  result.counters["entries"] = static_cast<long>(index.entries().size());
  result.counters["dim"] = index.dim();
  return result;
}

StageResult stage_judge_like(const std::string& stage, const PipelineConfig& config,
                             const StageIo& io, const Layout& layout, const Gateway& gateway) {
  StageResult result;
  result.stage = stage;
  bool distill = stage == "distill";

  require_artifact(layout.qa_file, "query anchors");
  require_artifact(layout.pa_file, "product anchors");
  require_artifact(layout.index_file, "prototype index");
  require_artifact(layout.repo, "prototype repository");
  auto pairs = load_labeled_pairs(io.pairs,
                                  distill ? LabelPolicy::forbid : LabelPolicy::any);
  hash_input(result, io.pairs);
  hash_input(result, layout.qa_file);
  hash_input(result, layout.pa_file);
  hash_input(result, layout.index_file);
  hash_input(result, layout.repo);

  auto qa_map = load_query_anchors(layout.qa_file);
  auto pa_map = load_product_anchors(layout.pa_file);
  Repository repo = load_repository(layout.repo);
  PrototypeIndex index = PrototypeIndex::load(layout.index_file);
  std::string expected_version = sha256_hex(repo.version + '\x1f' + config.embedder.name);
  if (index.version() != expected_version) {
    fail(Errc::invariant, "index version does not match the repository/embedder pair; "
                          "rebuild the index");
  }
  std::map<std::string, const Prototype*> by_id;
  for (const auto& proto : repo.prototypes) by_id[proto.id] = &proto;

  ContextProvider provider = [&](const LabeledPair& pair) {
    JudgmentContext ctx;
    auto qit = qa_map.find(pair.query.id);
    if (qit != qa_map.end() && !qit->second.anchors.empty()) ctx.query_anchors = qit->second;
    auto pit = pa_map.find(pair.product.id);
    if (pit != pa_map.end() && !pit->second.anchors.empty()) {
      ctx.product_anchors = pit->second;
    }
    if (!index.empty()) {
      auto hits = retrieve(pair, index, gateway, config.embedder, config.retrieval_k);
      if (!hits.empty()) {
        auto found = by_id.find(hits.front().prototype_id);
        if (found != by_id.end()) {
          ctx.prototype = PrototypeContext{*found->second, hits.front().score};
        }
      }
    }
    return ctx;
  };

  JudgeOptions options;
  options.rubric = config.rubric;
  options.fallback = config.fallback_label;
  options.workers = config.workers;
  options.abort_fraction = config.abort_fraction;

  fs::path out = io.out_file;
  if (out.empty()) {
    out = distill ? io.out_dir / "distill" / "labels.jsonl" : layout.judgments;
  }
  std::vector<std::size_t> skipped;
  std::vector<RelevanceJudgment> judgments;
  if (distill) {
    judgments = distill_labels(pairs, provider, gateway, config.judge_model, options, out);
  } else {
    judgments = judge_pairs(pairs, provider, gateway, config.judge_model, options, &skipped);
    save_judgments(out, judgments);
  }
  hash_output(result, out);

  long fallbacks = 0;
  long with_prototype = 0;
  for (const auto& judgment : judgments) {
    if (judgment.fallback_applied) ++fallbacks;
    if (judgment.prototype_id.has_value()) ++with_prototype;
  }
  result.counters["pairs"] = static_cast<long>(pairs.size());
  result.counters["judged"] = static_cast<long>(judgments.size());
  result.counters["fallbacks"] = fallbacks;
  result.counters["with_prototype"] = with_prototype;
  result.counters["transport_skips"] = static_cast<long>(skipped.size());
  return result;
}

StageResult stage_eval(const PipelineConfig& config, const StageIo& io, const Layout& layout) {
  StageResult result;
  result.stage = "eval";
  fs::path pred_path = io.judgments.empty() ? layout.judgments : io.judgments;
  require_artifact(pred_path, "judgments");
  auto golds = load_labeled_pairs(io.gold, LabelPolicy::require);
  hash_input(result, io.gold);
  hash_input(result, pred_path);

  auto judgments = load_judgments(pred_path);
  std::map<PairKey, RelevanceLabel> gold_by_key;
  for (const auto& pair : golds) {
    if (!gold_by_key.emplace(key_of(pair), *pair.gold).second) {
      fail(Errc::invalid_input, "duplicate gold pair (" + pair.query.id + ", " +
                                    pair.product.id + ")");
    }
  }
  std::map<PairKey, const RelevanceJudgment*> pred_by_key;
  for (const auto& judgment : judgments) {
    if (!pred_by_key.emplace(judgment.key, &judgment).second) {
      fail(Errc::invalid_input, "duplicate judgment for (" + judgment.key.query_id + ", " +
                                    judgment.key.product_id + ")");
    }
  }
  for (const auto& [key, _] : pred_by_key) {
    if (!gold_by_key.contains(key)) {
      fail(Errc::key_mismatch, "judgment (" + key.query_id + ", " + key.product_id +
                                   ") has no gold pair");
    }
  }
  std::vector<RelevanceLabel> gold_labels;
  std::vector<RelevanceLabel> pred_labels;
  long fallbacks = 0;
  for (const auto& pair : golds) {
    auto it = pred_by_key.find(key_of(pair));
    if (it == pred_by_key.end()) {
      fail(Errc::key_mismatch, "gold pair (" + pair.query.id + ", " + pair.product.id +
                                   ") has no judgment");
    }
    gold_labels.push_back(*pair.gold);
    pred_labels.push_back(it->second->predicted);
    if (it->second->fallback_applied) ++fallbacks;
  }

  ConfusionMatrix cm = confusion(gold_labels, pred_labels);
  EvalReport report = classification_metrics(cm);
  report.fallback_rate =
      static_cast<double>(fallbacks) / static_cast<double>(gold_labels.size());

  json doc;
  json per_class = json::object();
  for (std::size_t c = 0; c < kLabelCount; ++c) {
    const ClassMetrics& m = report.per_class[c];
    per_class[std::string(to_string(static_cast<RelevanceLabel>(c)))] = {
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"support", m.support}};
  }
  json matrix = json::array();
  for (std::size_t g = 0; g < kLabelCount; ++g) {
    matrix.push_back(cm.counts[g]);
  }
  doc["confusion"] = std::move(matrix);
  doc["per_class"] = std::move(per_class);
  doc["macro_f1"] = report.macro_f1;
  doc["weighted_f1"] = report.weighted_f1;
  doc["accuracy"] = report.accuracy;
  doc["bad"] = {{"precision", report.bad_precision},
                {"recall", report.bad_recall},
                {"f1", report.bad_f1}};
  doc["fallback_rate"] = report.fallback_rate;
  doc["pairs"] = gold_labels.size();

  if (!io.sessions.empty()) {
    require_artifact(io.sessions, "sessions");
    hash_input(result, io.sessions);
    auto sessions = load_sessions(io.sessions);
    double rate = bad_case_rate(sessions, config.eval_depth);
    doc["sessions"] = {{"count", sessions.size()},
                       {"depth", config.eval_depth},
                       {"bad_case_rate", rate}};
    if (!config.ab_baselines.empty()) {
      AbReport ab = ab_report(config.ab_baselines, rate);
      doc["ab"] = {{"baseline_mean", ab.baseline_mean},
                   {"treatment", ab.treatment},
                   {"absolute_delta", ab.absolute_delta},
                   {"relative_reduction", ab.relative_reduction}};
    }
    result.counters["sessions"] = static_cast<long>(sessions.size());
  }

  fs::path out = io.out_file.empty() ? io.out_dir / "eval" / "report.json" : io.out_file;
  write_json_file(out, doc);
  hash_output(result, out);
  result.counters["pairs"] = static_cast<long>(gold_labels.size());
  result.counters["fallbacks"] = fallbacks;
  return result;
}

} // namespace

std::optional<PipelineConfig> validate_config(const std::filesystem::path& path,
                                              std::vector<std::string>& errors,
                                              std::optional<std::uint64_t> seed_override,
                                              std::optional<int> workers_override) {
  json doc;
  try {
    doc = read_json_file(path);
  } catch (const Error& e) {
    errors.push_back(e.what());
    return std::nullopt;
  }
  if (!doc.is_object()) {
    errors.push_back(path.string() + ": config must be a JSON object");
    return std::nullopt;
  }
  if (seed_override.has_value()) doc["seed"] = *seed_override;
  if (workers_override.has_value()) doc["workers"] = *workers_override;

  PipelineConfig config;
  config.config_sha256 = sha256_hex(canonical_dump(doc));
  config.seed = doc.value("seed", std::uint64_t{0});
  config.workers = doc.value("workers", 4);
  if (config.workers < 1) errors.push_back("workers: must be >= 1");

  static const std::set<std::string> kKnownRoles = {
      "sub_optimal", "proposers", "arbiter", "quality_auditor",
      "teacher",     "judge",     "embedder", "p2q"};
  json endpoints = doc.value("endpoints", json::object());
  if (!endpoints.is_object()) {
    errors.push_back("endpoints: must be an object");
    endpoints = json::object();
  }
  for (const auto& [key, _] : endpoints.items()) {
    if (!kKnownRoles.contains(key)) {
      errors.push_back("endpoints: unknown role key '" + key + "'");
    }
  }
  config.sub_optimal =
      parse_role_endpoint(endpoints, "sub_optimal", ModelRole::sub_optimal, errors);
  config.arbiter = parse_role_endpoint(endpoints, "arbiter", ModelRole::arbiter, errors);
  config.quality_auditor =
      parse_role_endpoint(endpoints, "quality_auditor", ModelRole::quality_auditor, errors);
  config.teacher = parse_role_endpoint(endpoints, "teacher", ModelRole::teacher, errors);
  config.judge_model = parse_role_endpoint(endpoints, "judge", ModelRole::judge, errors);
  config.embedder = parse_role_endpoint(endpoints, "embedder", ModelRole::embedder, errors);
  config.p2q = parse_role_endpoint(endpoints, "p2q", ModelRole::p2q, errors);
  if (!endpoints.contains("proposers") || !endpoints["proposers"].is_array()) {
    errors.push_back("endpoints.proposers: need an array of >= 2 endpoints");
  } else {
    std::size_t i = 0;
    for (json row : endpoints["proposers"]) {
      std::string where = "endpoints.proposers[" + std::to_string(i++) + "]";
      if (row.is_object() && !row.contains("role")) {
        row["role"] = std::string(to_string(ModelRole::proposer));
      }
      ModelEndpoint endpoint = endpoint_from_row(row, where, errors);
      if (endpoint.role != ModelRole::proposer) {
        errors.push_back(where + ": role must be 'proposer'");
        endpoint.role = ModelRole::proposer;
      }
      config.proposers.push_back(std::move(endpoint));
    }
    if (config.proposers.size() < 2) {
      errors.push_back("endpoints.proposers: need >= 2, got " +
                       std::to_string(config.proposers.size()));
    }
  }

  std::set<std::string> names;
  auto check_name = [&](const ModelEndpoint& endpoint) {
    if (!endpoint.name.empty() && !names.insert(endpoint.name).second) {
      errors.push_back("endpoints: duplicate endpoint name '" + endpoint.name + "'");
    }
  };
  check_name(config.sub_optimal);
  for (const auto& proposer : config.proposers) check_name(proposer);
  check_name(config.arbiter);
  check_name(config.quality_auditor);
  check_name(config.teacher);
  check_name(config.judge_model);
  check_name(config.embedder);
  check_name(config.p2q);

  json anchoring = doc.value("anchoring", json::object());
  if (anchoring.contains("ranked_source")) {
    const json& source = anchoring["ranked_source"];
    std::string kind = source.value("kind", "log_file");
    if (kind == "log_file") {
      config.anchoring.ranked_source.kind = RankedListSource::Kind::log_file;
    } else if (kind == "live_search") {
      config.anchoring.ranked_source.kind = RankedListSource::Kind::live_search;
    } else {
      errors.push_back("anchoring.ranked_source.kind: unknown kind '" + kind + "'");
    }
    config.anchoring.ranked_source.address = source.value("address", "");
    config.anchoring.ranked_source.top_k = source.value("top_k", 10);
    if (config.anchoring.ranked_source.top_k < 1) {
      errors.push_back("anchoring.ranked_source.top_k: must be >= 1");
    }
  }
  config.anchoring.click_log = anchoring.value("click_log", "");
  config.anchoring.product_options.min_clicks = anchoring.value("min_clicks", 3L);
  if (config.anchoring.product_options.min_clicks < 0) {
    errors.push_back("anchoring.min_clicks: must be >= 0");
  }
  config.anchoring.product_options.max_queries = anchoring.value("max_queries", 6);
  if (config.anchoring.product_options.max_queries < 1) {
    errors.push_back("anchoring.max_queries: must be >= 1");
  }
  config.anchoring.product_options.allow_mixed = anchoring.value("allow_mixed", false);

  json tgki = doc.value("tgki", json::object());
  config.tgki_limit = tgki.value("limit", std::size_t{1000});
  if (config.tgki_limit < 1) errors.push_back("tgki.limit: must be >= 1");

  json forge = doc.value("forge", json::object());
  config.abort_fraction = forge.value("abort_fraction", 0.5);
  if (config.abort_fraction < 0.0 || config.abort_fraction > 1.0) {
    errors.push_back("forge.abort_fraction: must lie in [0, 1]");
  }

  json retrieval = doc.value("retrieval", json::object());
  config.retrieval_k = retrieval.value("k", 1);
  if (config.retrieval_k < 1) errors.push_back("retrieval.k: must be >= 1");

  json judge_params = doc.value("judge_params", json::object());
  config.rubric = judge_params.value("rubric", "");
  std::string fallback = judge_params.value("fallback_label", "Bad");
  auto fallback_label = label_from_canonical(fallback);
  if (!fallback_label.has_value()) {
    errors.push_back("judge_params.fallback_label: unknown label '" + fallback + "'");
  } else {
    config.fallback_label = *fallback_label;
  }

  json eval = doc.value("eval", json::object());
  config.eval_depth = eval.value("depth", 10);
  if (config.eval_depth < 1) errors.push_back("eval.depth: must be >= 1");
  if (eval.contains("ab_baselines")) {
    if (!eval["ab_baselines"].is_array()) {
      errors.push_back("eval.ab_baselines: must be an array of rates");
    } else {
      for (const auto& rate : eval["ab_baselines"]) {
        double value = rate.is_number() ? rate.get<double>() : -1.0;
        if (value < 0.0 || value > 1.0) {
          errors.push_back("eval.ab_baselines: rates must lie in [0, 1]");
          break;
        }
        config.ab_baselines.push_back(value);
      }
    }
  }

  if (!errors.empty()) return std::nullopt;

  derive_mock_seed(config.sub_optimal, config.seed);
  for (auto& proposer : config.proposers) derive_mock_seed(proposer, config.seed);
  derive_mock_seed(config.arbiter, config.seed);
  derive_mock_seed(config.quality_auditor, config.seed);
  derive_mock_seed(config.teacher, config.seed);
  derive_mock_seed(config.judge_model, config.seed);
  derive_mock_seed(config.embedder, config.seed);
  derive_mock_seed(config.p2q, config.seed);
  return config;
}

PipelineConfig validate_config(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override,
                               std::optional<int> workers_override) {
  std::vector<std::string> errors;
  auto config = validate_config(path, errors, seed_override, workers_override);
  if (!config.has_value()) {
    std::ostringstream message;
    message << path.string() << ": " << errors.size() << " config violation(s)";
    for (const auto& error : errors) message << "\n  - " << error;
    fail(Errc::config, message.str());
  }
  return *config;
}

StageResult run_stage(const std::string& name, const PipelineConfig& config,
                      const StageIo& io, const Gateway& gateway) {
  if (io.out_dir.empty()) {
    fail(Errc::config, "run_stage requires an output directory");
  }
  Layout layout = resolve_layout(io);
  std::string started = now_utc();
  StageResult result;
  if (name == "anchor") {
    result = stage_anchor(config, io, layout, gateway);
  } else if (name == "tgki-gen") {
    result = stage_tgki_gen(config, io, layout, gateway);
  } else if (name == "proto-build") {
    result = stage_proto_build(config, io, layout, gateway);
  } else if (name == "index") {
    result = stage_index(config, io, layout, gateway);
  } else if (name == "judge" || name == "distill") {
    result = stage_judge_like(name, config, io, layout, gateway);
  } else if (name == "eval") {
    result = stage_eval(config, io, layout);
  } else {
    fail(Errc::config, "unknown stage '" + name + "'");
  }
  append_manifest_entry(layout.manifest, config.config_sha256, result, started, now_utc());
  return result;
}

std::string manifest_determinism_digest(const std::filesystem::path& manifest_path) {
  json doc = read_json_file(manifest_path);
  std::string digest = doc.value("determinism_digest", "");
  if (digest.empty()) {
    fail(Errc::invalid_input, manifest_path.string() + ": manifest has no digest");
  }
  return digest;
}

} // namespace kcare
