#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kcare/anchoring.hpp"
#include "kcare/forge.hpp"
#include "kcare/gateway.hpp"
#include "kcare/labels.hpp"
#include "kcare/types.hpp"

namespace kcare {

/// Retrieved precedent injected into the judgment prompt.
struct PrototypeContext {
  Prototype prototype;
  double score = 0.0;  // cosine similarity in [-1, 1]
};

/// Everything the judge may ground its decision in; every part optional.
struct JudgmentContext {
  std::optional<QueryAnchors> query_anchors;
  std::optional<ProductAnchors> product_anchors;
  std::optional<PrototypeContext> prototype;
};

/// Digest over the exact context content embedded into the prompt; judgments
/// record it so the grounding is auditable.
std::string context_digest(const JudgmentContext& ctx);

/// One-sentence-per-level grading rubric used when config provides none.
extern const char* const kDefaultRubric;

/// Deterministic prompt with fixed section order: rubric, query + anchors,
/// product + anchors, analogous precedent (when present), answer-format
/// instruction. Returns (system, user).
std::pair<std::string, std::string> assemble_prompt(const LabeledPair& pair,
                                                    const JudgmentContext& ctx,
                                                    const std::string& rubric);

struct RelevanceJudgment {
  PairKey key;
  RelevanceLabel predicted = RelevanceLabel::bad;
  std::string raw_output;
  std::string context_digest;
  bool fallback_applied = false;  // true iff predicted came from the fallback rule
  std::optional<std::string> prototype_id;
  std::optional<double> score;
};

struct JudgeOptions {
  std::string rubric;  // empty -> kDefaultRubric
  RelevanceLabel fallback = RelevanceLabel::bad;
  int workers = 4;
  double abort_fraction = 0.5;
};

/// One judgment: completion at the endpoint's temperature (0 by default),
/// label parsed from the final "label:" line; a parse failure earns one retry
/// with an appended format reminder, then the fallback label with the flag
/// set.
RelevanceJudgment judge_relevance(const LabeledPair& pair, const JudgmentContext& ctx,
                                  const Gateway& gateway, const ModelEndpoint& judge,
                                  const JudgeOptions& options = {});

/// Supplies each pair's context (anchor lookup + prototype retrieval).
using ContextProvider = std::function<JudgmentContext(const LabeledPair&)>;

/// Judges a batch on the worker pool; results follow input order. Transport
/// failures are tolerated up to the abort threshold and reported back via
/// the skipped-index list.
std::vector<RelevanceJudgment> judge_pairs(const std::vector<LabeledPair>& pairs,
                                           const ContextProvider& context_for,
                                           const Gateway& gateway, const ModelEndpoint& judge,
                                           const JudgeOptions& options,
                                           std::vector<std::size_t>* skipped = nullptr);

void save_judgments(const std::filesystem::path& path,
                    const std::vector<RelevanceJudgment>& judgments);
std::vector<RelevanceJudgment> load_judgments(const std::filesystem::path& path);

/// Label distillation over unlabeled pairs: judges each pair and writes the
/// judgment records (fallback-flagged rows are the trainer's to exclude).
/// Pairs must carry no gold labels.
std::vector<RelevanceJudgment> distill_labels(const std::vector<LabeledPair>& pairs,
                                              const ContextProvider& context_for,
                                              const Gateway& gateway,
                                              const ModelEndpoint& judge,
                                              const JudgeOptions& options,
                                              const std::filesystem::path& out_path);

} // namespace kcare
