#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "kcare/anchoring.hpp"
#include "kcare/forge.hpp"
#include "kcare/gateway.hpp"
#include "kcare/labels.hpp"

namespace kcare {

struct AnchoringConfig {
  RankedListSource ranked_source;  // empty address => no query-side anchoring
  std::string click_log;           // path; empty => no click history
  ProductAnchorOptions product_options;
};

/// Typed view of the pipeline configuration document (a single JSON file).
struct PipelineConfig {
  std::uint64_t seed = 0;
  int workers = 4;

  ModelEndpoint sub_optimal;
  std::vector<ModelEndpoint> proposers;  // >= 2
  ModelEndpoint arbiter;
  ModelEndpoint quality_auditor;
  ModelEndpoint teacher;
  ModelEndpoint judge_model;
  ModelEndpoint embedder;
  ModelEndpoint p2q;

  AnchoringConfig anchoring;
  std::size_t tgki_limit = 1000;
  double abort_fraction = 0.5;
  int retrieval_k = 1;
  std::string rubric;  // empty -> built-in default
  RelevanceLabel fallback_label = RelevanceLabel::bad;
  int eval_depth = 10;
  std::vector<double> ab_baselines;

  std::string config_sha256;  // digest of the canonicalized document
};

/// Parses and validates the config document, collecting every violation.
/// Returns nullopt (with messages in `errors`) when invalid. A seed override
/// replaces the document's seed before endpoint seeds are derived.
std::optional<PipelineConfig> validate_config(const std::filesystem::path& path,
                                              std::vector<std::string>& errors,
                                              std::optional<std::uint64_t> seed_override = {},
                                              std::optional<int> workers_override = {});

/// Throwing variant: ConfigError aggregating all violations.
PipelineConfig validate_config(const std::filesystem::path& path,
                               std::optional<std::uint64_t> seed_override = {},
                               std::optional<int> workers_override = {});

/// Per-stage io; empty paths fall back to the conventional layout under
/// out_dir (anchors/, tgki/, proto/, index/, judge/, distill/, eval/).
struct StageIo {
  std::filesystem::path pairs;      // anchor, tgki-gen, proto-build, judge, distill
  std::filesystem::path gold;       // eval
  std::filesystem::path judgments;  // eval input (defaults to the judge output)
  std::filesystem::path sessions;   // eval, optional
  std::filesystem::path anchors_dir;
  std::filesystem::path repo;
  std::filesystem::path index;
  std::filesystem::path out_dir;   // run root; holds manifest.json
  std::filesystem::path out_file;  // single-file outputs (index, judge, distill, eval)
  bool resume = false;
};

struct StageResult {
  std::string stage;
  std::map<std::string, std::string> inputs;   // path -> sha256
  std::map<std::string, std::string> outputs;  // path -> sha256
  std::map<std::string, long> counters;
};

inline constexpr const char* kStageNames[] = {"anchor", "tgki-gen", "proto-build", "index",
                                              "judge",  "distill",  "eval"};

/// Executes one stage: verifies upstream artifacts (DependencyMissing names
/// the absent one), runs the stage, seals outputs, and appends a manifest
/// entry under out_dir/manifest.json.
StageResult run_stage(const std::string& name, const PipelineConfig& config,
                      const StageIo& io, const Gateway& gateway);

/// Digest over manifest entries minus timestamps: equal digests mean two
/// runs produced identical artifacts and counters.
std::string manifest_determinism_digest(const std::filesystem::path& manifest_path);

} // namespace kcare
