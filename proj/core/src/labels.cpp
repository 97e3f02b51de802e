#include "kcare/labels.hpp"

#include <cctype>

namespace kcare {

std::string_view to_string(RelevanceLabel label) {
  switch (label) {
    case RelevanceLabel::bad: return "Bad";
    case RelevanceLabel::passable: return "Passable";
    case RelevanceLabel::perfect: return "Perfect";
  }
  return "Bad";
}

std::optional<RelevanceLabel> label_from_canonical(std::string_view text) {
  if (text == "Bad") return RelevanceLabel::bad;
  if (text == "Passable") return RelevanceLabel::passable;
  if (text == "Perfect") return RelevanceLabel::perfect;
  return std::nullopt;
}

namespace {

bool is_token_char(unsigned char c) {
  return std::isalnum(c) != 0 || c == '_';
}

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

} // namespace

LabelParse parse_label(std::string_view text) {
  bool seen[kLabelCount] = {false, false, false};
  std::size_t i = 0;
  while (i < text.size()) {
    if (!is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    std::size_t start = i;
    while (i < text.size() && is_token_char(static_cast<unsigned char>(text[i]))) {
      ++i;
    }
    std::string token = lower_ascii(text.substr(start, i - start));
    if (token == "bad") seen[0] = true;
    else if (token == "passable") seen[1] = true;
    else if (token == "perfect") seen[2] = true;
  }

  int distinct = (seen[0] ? 1 : 0) + (seen[1] ? 1 : 0) + (seen[2] ? 1 : 0);
  LabelParse result;
  result.raw = std::string(text);
  if (distinct == 1) {
    if (seen[0]) result.label = RelevanceLabel::bad;
    else if (seen[1]) result.label = RelevanceLabel::passable;
    else result.label = RelevanceLabel::perfect;
  } else {
    result.error = distinct == 0 ? LabelParseErrorKind::absent
                                 : LabelParseErrorKind::ambiguous;
  }
  return result;
}

std::string_view answer_region(std::string_view text) {
  static constexpr std::string_view kMarker = "label:";
  std::size_t marker_end = std::string_view::npos;
  for (std::size_t i = 0; i + kMarker.size() <= text.size(); ++i) {
    bool match = true;
    for (std::size_t j = 0; j < kMarker.size(); ++j) {
      if (std::tolower(static_cast<unsigned char>(text[i + j])) != kMarker[j]) {
        match = false;
        break;
      }
    }
    if (match) marker_end = i + kMarker.size();
  }
  if (marker_end == std::string_view::npos) return text;
  std::size_t line_end = text.find('\n', marker_end);
  if (line_end == std::string_view::npos) line_end = text.size();
  return text.substr(marker_end, line_end - marker_end);
}

} // namespace kcare
