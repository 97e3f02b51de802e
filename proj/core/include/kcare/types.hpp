#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "kcare/labels.hpp"

namespace kcare {

struct Query {
  std::string id;
  std::string text;
};

struct Product {
  std::string id;
  std::string title;
  std::vector<std::pair<std::string, std::string>> attributes;
};

struct LabeledPair {
  Query query;
  Product product;
  std::optional<RelevanceLabel> gold;
};

/// (query_id, product_id) — the join key used by every stage file.
struct PairKey {
  std::string query_id;
  std::string product_id;

  auto operator<=>(const PairKey&) const = default;
};

PairKey key_of(const LabeledPair& pair);

/// One description per violated type invariant; empty means well-formed.
std::vector<std::string> validate_pair(const LabeledPair& pair);

std::string trimmed(std::string_view text);

/// Canonical "name=value; name=value" rendering shared by prompts and
/// embedding text.
std::string render_attributes(const Product& product);

} // namespace kcare
