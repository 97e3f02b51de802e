#include "kcare/judge.hpp"

#include <sstream>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "kcare/hash.hpp"
#include "kcare/worker_pool.hpp"

namespace kcare {

const char* const kDefaultRubric =
    "Perfect: the product fully satisfies the query's category, brand, and "
    "attribute constraints.\n"
    "Passable: the product relates to the query but misses a secondary "
    "constraint or is a broader substitute.\n"
    "Bad: the product contradicts the query's core intent, category, or brand.";

namespace {

constexpr std::string_view kFormatReminder =
    "Reply with a final line exactly of the form \"label: <Perfect|Passable|Bad>\".";

json context_json(const JudgmentContext& ctx) {
  json doc;
  if (ctx.query_anchors.has_value()) {
    json anchors = json::array();
    for (const auto& anchor : ctx.query_anchors->anchors) {
      anchors.push_back({{"product_title", anchor.product_title}, {"rank", anchor.rank}});
    }
    doc["query_anchors"] = std::move(anchors);
  } else {
    doc["query_anchors"] = nullptr;
  }
  if (ctx.product_anchors.has_value()) {
    json anchors = json::array();
    for (const auto& anchor : ctx.product_anchors->anchors) {
      anchors.push_back({{"query_text", anchor.query_text}, {"weight", anchor.weight}});
    }
    doc["product_anchors"] = std::move(anchors);
  } else {
    doc["product_anchors"] = nullptr;
  }
  if (ctx.prototype.has_value()) {
    doc["prototype"] = {{"id", ctx.prototype->prototype.id},
                        {"query_text", ctx.prototype->prototype.query.text},
                        {"product_title", ctx.prototype->prototype.product.title},
                        {"label", std::string(to_string(ctx.prototype->prototype.label))},
                        {"rationale", ctx.prototype->prototype.rationale_final},
                        {"score", ctx.prototype->score}};
  } else {
    doc["prototype"] = nullptr;
  }
  return doc;
}

} // namespace

std::string context_digest(const JudgmentContext& ctx) {
  return sha256_hex(canonical_dump(context_json(ctx)));
}

std::pair<std::string, std::string> assemble_prompt(const LabeledPair& pair,
                                                    const JudgmentContext& ctx,
                                                    const std::string& rubric) {
  if (ctx.prototype.has_value() &&
      (ctx.prototype->score < -1.0 || ctx.prototype->score > 1.0)) {
    fail(Errc::invariant, "prototype score outside [-1, 1]");
  }
  std::string system =
      "You judge the relevance of an e-commerce product to a search query.\n"
      "Rubric:\n" +
      (rubric.empty() ? std::string(kDefaultRubric) : rubric) +
      "\nAfter your reasoning, output a final line exactly of the form "
      "\"label: <Perfect|Passable|Bad>\".";

  std::ostringstream user;
  user << "query: " << pair.query.text << "\n";
  if (ctx.query_anchors.has_value() && !ctx.query_anchors->anchors.empty()) {
    user << "top-ranked products for this query:\n";
    for (const auto& anchor : ctx.query_anchors->anchors) {
      user << anchor.rank << ". " << anchor.product_title << "\n";
    }
  }
  user << "product: " << pair.product.title << "\n";
  std::string attrs = render_attributes(pair.product);
  if (!attrs.empty()) user << "attributes: " << attrs << "\n";
  if (ctx.product_anchors.has_value() && !ctx.product_anchors->anchors.empty()) {
    user << "queries whose clicks led to this product:\n";
    std::size_t i = 0;
    for (const auto& anchor : ctx.product_anchors->anchors) {
      user << ++i << ". " << anchor.query_text << "\n";
    }
  }
  if (ctx.prototype.has_value()) {
    const Prototype& proto = ctx.prototype->prototype;
    user << "analogous precedent:\n"
         << "precedent query: " << proto.query.text << "\n"
         << "precedent product: " << proto.product.title << "\n"
         << "precedent label: " << to_string(proto.label) << "\n"
         << "precedent rationale: " << proto.rationale_final << "\n"
         << "Use this precedent as an interpretative guide, not as the answer.\n";
  }
  user << "Assess the relevance of the product to the query.";
  return {std::move(system), user.str()};
}

RelevanceJudgment judge_relevance(const LabeledPair& pair, const JudgmentContext& ctx,
                                  const Gateway& gateway, const ModelEndpoint& judge,
                                  const JudgeOptions& options) {
  if (judge.role != ModelRole::judge) {
    fail(Errc::config, "judge_relevance requires an endpoint with role judge");
  }
  auto [system, user] = assemble_prompt(pair, ctx, options.rubric);

  RelevanceJudgment judgment;
  judgment.key = key_of(pair);
  judgment.context_digest = context_digest(ctx);
  if (ctx.prototype.has_value()) {
    judgment.prototype_id = ctx.prototype->prototype.id;
    judgment.score = ctx.prototype->score;
  }

  std::string raw = gateway.complete(judge, system, user).text;
  LabelParse parsed = parse_label(answer_region(raw));
  if (!parsed.ok()) {
    // One retry with an explicit format reminder appended to the user turn.
    raw = gateway.complete(judge, system, user + "\n\n" + std::string(kFormatReminder)).text;
    parsed = parse_label(answer_region(raw));
  }
  judgment.raw_output = raw;
  if (parsed.ok()) {
    judgment.predicted = *parsed.label;
  } else {
    judgment.predicted = options.fallback;
    judgment.fallback_applied = true;
  }
  return judgment;
}

std::vector<RelevanceJudgment> judge_pairs(const std::vector<LabeledPair>& pairs,
                                           const ContextProvider& context_for,
                                           const Gateway& gateway, const ModelEndpoint& judge,
                                           const JudgeOptions& options,
                                           std::vector<std::size_t>* skipped) {
  auto results = parallel_map(pairs, options.workers,
                              [&](const LabeledPair& pair, std::size_t) {
                                return judge_relevance(pair, context_for(pair), gateway,
                                                       judge, options);
                              });
  std::vector<RelevanceJudgment> judgments;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (tolerated_failure(results[i])) {
      ++failures;
      if (skipped != nullptr) skipped->push_back(i);
      continue;
    }
    judgments.push_back(std::move(*results[i].value));
  }
  enforce_abort_threshold(failures, pairs.size(), options.abort_fraction, "judge");
  return judgments;
}

void save_judgments(const std::filesystem::path& path,
                    const std::vector<RelevanceJudgment>& judgments) {
  std::vector<json> rows;
  rows.reserve(judgments.size());
  for (const auto& judgment : judgments) {
    json row = {{"query_id", judgment.key.query_id},
                {"product_id", judgment.key.product_id},
                {"predicted", std::string(to_string(judgment.predicted))},
                {"raw_sha256", sha256_hex(judgment.raw_output)},
                {"context_sha256", judgment.context_digest},
                {"fallback", judgment.fallback_applied}};
    row["prototype_id"] =
        judgment.prototype_id.has_value() ? json(*judgment.prototype_id) : json(nullptr);
    row["score"] = judgment.score.has_value() ? json(*judgment.score) : json(nullptr);
    rows.push_back(std::move(row));
  }
  write_jsonl(path, rows);
}

std::vector<RelevanceJudgment> load_judgments(const std::filesystem::path& path) {
  std::vector<RelevanceJudgment> judgments;
  std::size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    RelevanceJudgment judgment;
    judgment.key = PairKey{row.value("query_id", ""), row.value("product_id", "")};
    auto label = label_from_canonical(row.value("predicted", ""));
    if (!label.has_value()) {
      fail(Errc::invalid_input, path.string() + ": record " + std::to_string(line) +
                                    ": unknown predicted label");
    }
    judgment.predicted = *label;
    judgment.context_digest = row.value("context_sha256", "");
    judgment.fallback_applied = row.value("fallback", false);
    if (row.contains("prototype_id") && !row["prototype_id"].is_null()) {
      judgment.prototype_id = row["prototype_id"].get<std::string>();
    }
    if (row.contains("score") && !row["score"].is_null()) {
      judgment.score = row["score"].get<double>();
    }
    judgments.push_back(std::move(judgment));
  }
  return judgments;
}

std::vector<RelevanceJudgment> distill_labels(const std::vector<LabeledPair>& pairs,
                                              const ContextProvider& context_for,
                                              const Gateway& gateway,
                                              const ModelEndpoint& judge,
                                              const JudgeOptions& options,
                                              const std::filesystem::path& out_path) {
  for (const auto& pair : pairs) {
    if (pair.gold.has_value()) {
      fail(Errc::invalid_input, "distillation input must be unlabeled; pair (" +
                                    pair.query.id + ", " + pair.product.id +
                                    ") carries a label");
    }
  }
  auto judgments = judge_pairs(pairs, context_for, gateway, judge, options);
  save_judgments(out_path, judgments);
  return judgments;
}

} // namespace kcare
