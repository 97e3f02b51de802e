#include "kcare/types.hpp"

#include <cctype>

#include "kcare/errors.hpp"

namespace kcare {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::transport: return "Transport";
    case Errc::output_truncated: return "OutputTruncated";
    case Errc::dimension_mismatch: return "DimensionMismatch";
    case Errc::zero_vector: return "ZeroVector";
    case Errc::config: return "ConfigError";
    case Errc::io: return "IoError";
    case Errc::invariant: return "InvariantViolation";
    case Errc::missing_input: return "MissingInput";
    case Errc::dependency_missing: return "DependencyMissing";
    case Errc::key_mismatch: return "KeyMismatch";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::empty_input: return "EmptyInput";
    case Errc::invalid_input: return "InvalidInput";
    case Errc::empty_index: return "EmptyIndex";
  }
  return "Error";
}

Error::Error(Errc code, std::string message)
    : std::runtime_error(std::string(to_string(code)) + ": " + message),
      code_(code) {}

void fail(Errc code, std::string message) {
  throw Error(code, std::move(message));
}

PairKey key_of(const LabeledPair& pair) {
  return PairKey{pair.query.id, pair.product.id};
}

std::string trimmed(std::string_view text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return std::string(text.substr(begin, end - begin));
}

std::vector<std::string> validate_pair(const LabeledPair& pair) {
  std::vector<std::string> violations;
  if (trimmed(pair.query.text).empty()) {
    violations.push_back("query.text empty");
  }
  if (trimmed(pair.product.title).empty()) {
    violations.push_back("product.title empty");
  }
  for (std::size_t i = 0; i < pair.product.attributes.size(); ++i) {
    if (trimmed(pair.product.attributes[i].first).empty()) {
      violations.push_back("product.attributes[" + std::to_string(i) + "].name empty");
    }
  }
  return violations;
}

std::string render_attributes(const Product& product) {
  std::string out;
  for (std::size_t i = 0; i < product.attributes.size(); ++i) {
    if (i > 0) out += "; ";
    out += product.attributes[i].first;
    out += "=";
    out += product.attributes[i].second;
  }
  return out;
}

} // namespace kcare
