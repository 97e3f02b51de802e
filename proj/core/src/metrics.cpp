#include "kcare/metrics.hpp"

#include <algorithm>
#include <set>

#include "kcare/errors.hpp"

namespace kcare {

namespace {

double ratio(double numerator, double denominator) {
  return denominator == 0.0 ? 0.0 : numerator / denominator;
}

} // namespace

ConfusionMatrix confusion(const std::vector<RelevanceLabel>& golds,
                          const std::vector<RelevanceLabel>& preds) {
  if (golds.size() != preds.size()) {
    fail(Errc::length_mismatch, "confusion over " + std::to_string(golds.size()) +
                                    " golds and " + std::to_string(preds.size()) + " preds");
  }
  if (golds.empty()) {
    fail(Errc::empty_input, "confusion requires at least one labeled item");
  }
  ConfusionMatrix cm;
  for (std::size_t i = 0; i < golds.size(); ++i) {
    ++cm.counts[static_cast<std::size_t>(golds[i])][static_cast<std::size_t>(preds[i])];
  }
  cm.total = static_cast<long>(golds.size());
  return cm;
}

EvalReport classification_metrics(const ConfusionMatrix& cm) {
  if (cm.total < 1) {
    fail(Errc::empty_input, "classification metrics need a non-empty matrix");
  }
  EvalReport report;
  long trace = 0;
  double weighted = 0.0;
  double macro = 0.0;
  for (std::size_t c = 0; c < kLabelCount; ++c) {
    long tp = cm.counts[c][c];
    long fp = 0;
    long fn = 0;
    for (std::size_t other = 0; other < kLabelCount; ++other) {
      if (other == c) continue;
      fp += cm.counts[other][c];
      fn += cm.counts[c][other];
    }
    ClassMetrics& m = report.per_class[c];
    m.support = tp + fn;
    m.precision = ratio(static_cast<double>(tp), static_cast<double>(tp + fp));
    m.recall = ratio(static_cast<double>(tp), static_cast<double>(tp + fn));
    m.f1 = ratio(2.0 * m.precision * m.recall, m.precision + m.recall);
    trace += tp;
    macro += m.f1;
    weighted += static_cast<double>(m.support) * m.f1;
  }
  report.macro_f1 = macro / static_cast<double>(kLabelCount);
  report.weighted_f1 = weighted / static_cast<double>(cm.total);
  report.accuracy = static_cast<double>(trace) / static_cast<double>(cm.total);

  const ClassMetrics& bad = report.per_class[static_cast<std::size_t>(RelevanceLabel::bad)];
  report.bad_precision = bad.precision;
  report.bad_recall = bad.recall;
  report.bad_f1 = bad.f1;
  return report;
}

BadMetrics bad_category_metrics(const ConfusionMatrix& cm) {
  EvalReport report = classification_metrics(cm);
  return BadMetrics{report.bad_precision, report.bad_recall, report.bad_f1};
}

double bad_case_rate(const std::vector<RankedSession>& sessions, int depth) {
  if (sessions.empty()) {
    fail(Errc::empty_input, "bad_case_rate requires at least one session");
  }
  if (depth < 1) {
    fail(Errc::config, "bad_case_rate depth must be >= 1");
  }
  std::size_t offending = 0;
  for (const auto& session : sessions) {
    if (session.items.empty()) {
      fail(Errc::invalid_input, "session '" + session.query_id + "' has no items");
    }
    std::set<std::string> seen;
    for (const auto& [product_id, _] : session.items) {
      if (!seen.insert(product_id).second) {
        fail(Errc::invalid_input, "session '" + session.query_id +
                                      "' lists product '" + product_id + "' twice");
      }
    }
    std::size_t limit = std::min(session.items.size(), static_cast<std::size_t>(depth));
    for (std::size_t i = 0; i < limit; ++i) {
      if (session.items[i].second == RelevanceLabel::bad) {
        ++offending;
        break;
      }
    }
  }
  return static_cast<double>(offending) / static_cast<double>(sessions.size());
}

AbReport ab_report(const std::vector<double>& baselines, double treatment) {
  if (baselines.empty()) {
    fail(Errc::empty_input, "ab_report requires at least one baseline rate");
  }
  auto check_rate = [](double rate, const char* what) {
    if (rate < 0.0 || rate > 1.0) {
      fail(Errc::invalid_input, std::string(what) + " rate " + std::to_string(rate) +
                                    " outside [0, 1]");
    }
  };
  double sum = 0.0;
  for (double rate : baselines) {
    check_rate(rate, "baseline");
    sum += rate;
  }
  check_rate(treatment, "treatment");

  AbReport report;
  report.baseline_mean = sum / static_cast<double>(baselines.size());
  report.treatment = treatment;
  report.absolute_delta = report.baseline_mean - treatment;
  if (report.baseline_mean == 0.0) {
    fail(Errc::invalid_input, "relative reduction undefined for a zero baseline mean");
  }
  report.relative_reduction = report.absolute_delta / report.baseline_mean;
  return report;
}

} // namespace kcare
