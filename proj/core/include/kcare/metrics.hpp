#pragma once

#include <array>
#include <string>
#include <vector>

#include "kcare/labels.hpp"

namespace kcare {

/// counts[gold][predicted] over the axis order (Bad, Passable, Perfect).
struct ConfusionMatrix {
  std::array<std::array<long, kLabelCount>, kLabelCount> counts{};
  long total = 0;
};

ConfusionMatrix confusion(const std::vector<RelevanceLabel>& golds,
                          const std::vector<RelevanceLabel>& preds);

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;
};

struct EvalReport {
  std::array<ClassMetrics, kLabelCount> per_class;  // Bad, Passable, Perfect
  double macro_f1 = 0.0;     // unweighted mean over all three classes
  double weighted_f1 = 0.0;  // support-weighted mean
  double accuracy = 0.0;
  double bad_precision = 0.0;
  double bad_recall = 0.0;
  double bad_f1 = 0.0;
  double fallback_rate = 0.0;  // filled by the evaluation driver, not the matrix
};

/// Per-class precision/recall/F1 with the 0/0 -> 0 convention, macro and
/// support-weighted F1, and accuracy. Requires total >= 1.
EvalReport classification_metrics(const ConfusionMatrix& cm);

struct BadMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

/// The Bad row/column specialization of the per-class metrics.
BadMetrics bad_category_metrics(const ConfusionMatrix& cm);

/// One query's ranked results with gold labels; position is the rank.
struct RankedSession {
  std::string query_id;
  std::vector<std::pair<std::string, RelevanceLabel>> items;  // (product_id, gold)
};

/// Fraction of sessions whose first min(depth, length) items include at
/// least one Bad gold label. Throws EmptyInput on no sessions.
double bad_case_rate(const std::vector<RankedSession>& sessions, int depth);

struct AbReport {
  double baseline_mean = 0.0;
  double treatment = 0.0;
  double absolute_delta = 0.0;      // baseline_mean - treatment
  double relative_reduction = 0.0;  // absolute_delta / baseline_mean
};

/// Compares a treatment rate against the mean of baseline rates. All rates
/// must lie in [0, 1]; a zero baseline mean leaves the relative reduction
/// undefined and is rejected.
AbReport ab_report(const std::vector<double>& baselines, double treatment);

} // namespace kcare
