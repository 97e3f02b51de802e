#include "kcare/fixtures.hpp"

#include <algorithm>
#include <cstdio>
#include <random>

#include "jsonl.hpp"
#include "kcare/errors.hpp"

namespace kcare {

namespace {

const char* const kCategories[] = {
    "running shoes", "hiking boots", "perfume",      "infant formula",
    "wireless earphones", "water bottle", "laptop sleeve", "desk lamp",
    "yoga mat",      "rice cooker",  "winter jacket", "coffee grinder",
};

const char* const kBrands[] = {
    "Aurora", "Northpeak", "Velara", "Casaway", "Lumio",   "Brighton",
    "Kestrel", "Monterra", "Oakfield", "Silverline", "Tundra", "Verve",
};

const char* const kModifiers[] = {
    "lightweight", "waterproof", "portable", "premium", "compact",
    "ergonomic",   "classic",    "travel",   "outdoor", "wide fit",
};

const char* const kColors[] = {"black", "white", "navy", "olive", "coral", "slate"};

template <typename T, std::size_t N>
const T& pick(const T (&values)[N], std::mt19937_64& rng) {
  return values[rng() % N];
}

/// Largest-remainder allocation of n items over kFixtureLabelWeights; exact
/// proportions up to rounding for every n.
std::array<std::size_t, kLabelCount> label_quota(std::size_t n) {
  std::array<std::size_t, kLabelCount> counts{};
  std::array<double, kLabelCount> remainders{};
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < kLabelCount; ++c) {
    double exact = static_cast<double>(n) * kFixtureLabelWeights[c];
    counts[c] = static_cast<std::size_t>(exact);
    remainders[c] = exact - static_cast<double>(counts[c]);
    assigned += counts[c];
  }
  while (assigned < n) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < kLabelCount; ++c) {
      if (remainders[c] > remainders[best]) best = c;
    }
    ++counts[best];
    remainders[best] = -1.0;
    ++assigned;
  }
  return counts;
}

} // namespace

std::vector<LabeledPair> synthesize_labeled_pairs(std::size_t n, std::uint64_t seed) {
  auto quota = label_quota(n);
  std::vector<RelevanceLabel> labels;
  labels.reserve(n);
  for (std::size_t c = 0; c < kLabelCount; ++c) {
    labels.insert(labels.end(), quota[c], static_cast<RelevanceLabel>(c));
  }
  std::mt19937_64 rng(seed);
  std::shuffle(labels.begin(), labels.end(), rng);

  std::vector<LabeledPair> pairs;
  pairs.reserve(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    LabeledPair pair;
    std::snprintf(id, sizeof(id), "q%05zu", i);
    pair.query.id = id;
    std::snprintf(id, sizeof(id), "p%05zu", i);
    pair.product.id = id;

    const char* category = pick(kCategories, rng);
    const char* brand = pick(kBrands, rng);
    const char* modifier = pick(kModifiers, rng);
    pair.query.text = std::string(brand) + " " + category;
    switch (labels[i]) {
      case RelevanceLabel::perfect:
        pair.product.title = std::string(brand) + " " + modifier + " " + category;
        pair.product.attributes.emplace_back("brand", brand);
        break;
      case RelevanceLabel::passable: {
        // Same category, different brand: related but not what was asked for.
        const char* other_brand = pick(kBrands, rng);
        pair.product.title = std::string(other_brand) + " " + modifier + " " + category;
        pair.product.attributes.emplace_back("brand", other_brand);
        break;
      }
      case RelevanceLabel::bad: {
        const char* other_category = pick(kCategories, rng);
        pair.product.title = std::string(pick(kBrands, rng)) + " " + other_category;
        break;
      }
    }
    pair.product.attributes.emplace_back("color", pick(kColors, rng));
    pair.gold = labels[i];
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

std::vector<RankedSession> synthesize_sessions(const std::vector<LabeledPair>& pairs,
                                               std::size_t session_length) {
  if (session_length < 1) {
    fail(Errc::config, "session_length must be >= 1");
  }
  std::vector<RankedSession> sessions;
  for (std::size_t start = 0; start < pairs.size(); start += session_length) {
    RankedSession session;
    session.query_id = pairs[start].query.id;
    std::size_t end = std::min(pairs.size(), start + session_length);
    for (std::size_t i = start; i < end; ++i) {
      if (!pairs[i].gold.has_value()) {
        fail(Errc::invariant, "sessions need gold labels; pair (" + pairs[i].query.id +
                                  ", " + pairs[i].product.id + ") has none");
      }
      session.items.emplace_back(pairs[i].product.id, *pairs[i].gold);
    }
    sessions.push_back(std::move(session));
  }
  return sessions;
}

void save_sessions(const std::filesystem::path& path,
                   const std::vector<RankedSession>& sessions) {
  std::vector<json> rows;
  rows.reserve(sessions.size());
  for (const auto& session : sessions) {
    json items = json::array();
    for (const auto& [product_id, label] : session.items) {
      items.push_back({{"product_id", product_id}, {"label", std::string(to_string(label))}});
    }
    rows.push_back({{"query_id", session.query_id}, {"items", std::move(items)}});
  }
  write_jsonl(path, rows);
}

std::vector<RankedSession> load_sessions(const std::filesystem::path& path) {
  std::vector<RankedSession> sessions;
  std::size_t line = 0;
  for (const auto& row : read_jsonl(path)) {
    ++line;
    RankedSession session;
    session.query_id = row.value("query_id", "");
    if (!row.contains("items") || !row["items"].is_array() || row["items"].empty()) {
      fail(Errc::invalid_input, path.string() + ": record " + std::to_string(line) +
                                    ": session needs a non-empty items array");
    }
    for (const auto& item : row["items"]) {
      auto label = label_from_canonical(item.value("label", ""));
      if (!label.has_value()) {
        fail(Errc::invalid_input, path.string() + ": record " + std::to_string(line) +
                                      ": unknown session item label");
      }
      session.items.emplace_back(item.value("product_id", ""), *label);
    }
    sessions.push_back(std::move(session));
  }
  return sessions;
}

} // namespace kcare
