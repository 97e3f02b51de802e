#pragma once

#include <optional>
#include <string>
#include <string_view>

namespace kcare {

/// Three-way relevance grade. Index order (Bad, Passable, Perfect) is the
/// canonical axis order for confusion matrices and per-class metrics.
enum class RelevanceLabel { bad = 0, passable = 1, perfect = 2 };

inline constexpr int kLabelCount = 3;

std::string_view to_string(RelevanceLabel label);

/// Exact canonical-string lookup ("Perfect"/"Passable"/"Bad", case-sensitive).
std::optional<RelevanceLabel> label_from_canonical(std::string_view text);

enum class LabelParseErrorKind { absent, ambiguous };

struct LabelParse {
  std::optional<RelevanceLabel> label;
  LabelParseErrorKind error = LabelParseErrorKind::absent;
  std::string raw;

  bool ok() const { return label.has_value(); }
};

/// Scans `text` for case-insensitive whole-token occurrences of the three
/// canonical label names. Exactly one distinct label -> that label; zero ->
/// absent; two or more distinct -> ambiguous. Tokens are maximal runs of
/// ASCII alphanumerics and '_', so "Badminton" never matches "Bad".
LabelParse parse_label(std::string_view text);

/// The answer region of a model response: everything after the last
/// case-insensitive "label:" marker up to the end of that line. Falls back to
/// the whole text when no marker is present.
std::string_view answer_region(std::string_view text);

} // namespace kcare
