#pragma once

// Shared test fixtures: a 50-pair corpus with fully scripted mock models
// whose stage outcomes are hand-traceable, plus filesystem helpers.
//
// Corpus layout:
//   q001..q009  varied gold labels; the sub-optimal script answers a wrong
//               label for each -> 9 disagreement hard cases.
//   q010        gold Bad; the sub-optimal script answers gibberish -> 1
//               parse-failure hard case.
//   q011..q050  gold Perfect; the script's fall-through answers Perfect ->
//               agreement, never mined.
// Arbitration: q001 rejected (judge: 0), q002 unparseable (maps to judge* 0),
// everything else endorsed -> 8 consensus cases. Audit: q003 REJECT -> 7
// final prototypes.

#include <cstdio>
#include <filesystem>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "kcare/anchoring.hpp"
#include "kcare/forge.hpp"
#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare::testing {

inline constexpr std::size_t kFixtureHardCases = 10;
inline constexpr std::size_t kFixtureConsensus = 8;
inline constexpr std::size_t kFixturePrototypes = 7;

inline std::string fixture_id(char prefix, std::size_t n) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%c%03zu", prefix, n);
  return buf;
}

inline std::vector<LabeledPair> forge_fixture_pairs() {
  // Wrong-label script targets for q001..q009 (gold, scripted answer).
  static const std::pair<RelevanceLabel, const char*> kSeeded[] = {
      {RelevanceLabel::perfect, "Bad"},      {RelevanceLabel::bad, "Perfect"},
      {RelevanceLabel::perfect, "Passable"}, {RelevanceLabel::passable, "Perfect"},
      {RelevanceLabel::perfect, "Bad"},      {RelevanceLabel::bad, "Passable"},
      {RelevanceLabel::perfect, "Bad"},      {RelevanceLabel::passable, "Bad"},
      {RelevanceLabel::perfect, "Bad"},
  };
  static const char* kNouns[] = {"running shoes", "coffee grinder", "wool blanket",
                                 "desk organizer", "garden trowel", "bike pump",
                                 "reading lamp", "travel adapter", "phone stand",
                                 "water bottle"};
  std::vector<LabeledPair> pairs;
  pairs.reserve(50);
  for (std::size_t i = 1; i <= 50; ++i) {
    LabeledPair pair;
    pair.query.id = fixture_id('q', i);
    pair.product.id = fixture_id('p', i);
    const char* noun = kNouns[(i - 1) % 10];
    pair.query.text = "find " + pair.query.id + " " + noun;
    pair.product.title = "product " + pair.product.id + " " + noun + " classic";
    if (i % 3 == 0) {
      pair.product.attributes.emplace_back("material", "steel");
    }
    if (i <= 9) {
      pair.gold = kSeeded[i - 1].first;
    } else if (i == 10) {
      pair.gold = RelevanceLabel::bad;
    } else {
      pair.gold = RelevanceLabel::perfect;
    }
    pairs.push_back(std::move(pair));
  }
  return pairs;
}

/// Sub-optimal model: wrong label for q001..q009, gibberish for q010,
/// agreeing "Perfect" for everything else.
inline ModelEndpoint fixture_sub_model() {
  static const char* kWrong[] = {"Bad",      "Perfect", "Passable", "Perfect", "Bad",
                                 "Passable", "Bad",     "Bad",      "Bad"};
  std::vector<ScriptRule> rules;
  for (std::size_t i = 1; i <= 9; ++i) {
    rules.push_back({fixture_id('q', i),
                     "The pair looks mismatched to this grader.\nlabel: " +
                         std::string(kWrong[i - 1])});
  }
  rules.push_back({"q010", "inconclusive output without any verdict token"});
  rules.push_back({"", "The title answers the query directly.\nlabel: Perfect"});
  return mock_script(ModelRole::sub_optimal, "fixture-sub", 11, std::move(rules));
}

/// Sub-optimal model that always answers the gold label (null mining case).
inline ModelEndpoint fixture_agreeing_sub(const std::vector<LabeledPair>& pairs) {
  std::vector<ScriptRule> rules;
  for (const auto& pair : pairs) {
    rules.push_back({pair.query.id,
                     "Echoing the annotation.\nlabel: " + std::string(to_string(*pair.gold))});
  }
  rules.push_back({"", "no verdict"});
  return mock_script(ModelRole::sub_optimal, "fixture-sub-agree", 12, std::move(rules));
}

inline std::vector<ModelEndpoint> fixture_proposers() {
  std::vector<ModelEndpoint> proposers;
  proposers.push_back(mock_script(
      ModelRole::proposer, "fixture-prop-a", 21,
      {{"", "judge: 1\nthe annotation matches the visible evidence."}}));
  proposers.push_back(mock_script(
      ModelRole::proposer, "fixture-prop-b", 22,
      {{"q003", "judge: 0\nthe grade overlooks a series mismatch."},
       {"", "judge: 1\nthe label is consistent with the title."}}));
  return proposers;
}

inline ModelEndpoint fixture_arbiter() {
  return mock_script(
      ModelRole::arbiter, "fixture-arb", 31,
      {{"q001", "judge: 0\nthe human label contradicts the category evidence."},
       {"q002", "uncertain, cannot settle this one"},
       {"", "judge: 1\nthe consensus rationale holds up."}});
}

inline ModelEndpoint fixture_auditor() {
  return mock_script(ModelRole::quality_auditor, "fixture-audit", 41,
                     {{"q003", "REJECT"},
                      {"", "The verdict follows from the evidence: the cited attributes "
                           "decide the grade."}});
}

inline ForgeEndpoints fixture_forge_endpoints() {
  ForgeEndpoints endpoints;
  endpoints.sub_model = fixture_sub_model();
  endpoints.proposers = fixture_proposers();
  endpoints.arbiter = fixture_arbiter();
  endpoints.auditor = fixture_auditor();
  return endpoints;
}

/// Queries q001..q030 get ranked-list anchors; products p001..p020 get click
/// anchors (counts descend so ordering is visible); the rest have none.
inline std::map<std::string, QueryAnchors> fixture_query_anchors() {
  std::map<std::string, QueryAnchors> anchors;
  for (std::size_t i = 1; i <= 50; ++i) {
    QueryAnchors qa;
    qa.query_id = fixture_id('q', i);
    if (i <= 30) {
      qa.source = QueryAnchorSource::ranking;
      for (int r = 1; r <= 3; ++r) {
        qa.anchors.push_back({"top seller " + qa.query_id + " option " + std::to_string(r), r});
      }
    }
    anchors[qa.query_id] = std::move(qa);
  }
  return anchors;
}

inline std::map<std::string, ProductAnchors> fixture_product_anchors() {
  std::map<std::string, ProductAnchors> anchors;
  for (std::size_t i = 1; i <= 50; ++i) {
    ProductAnchors pa;
    pa.product_id = fixture_id('p', i);
    if (i <= 20) {
      pa.source = ProductAnchorSource::clicks;
      pa.anchors.push_back({"bought " + pa.product_id + " often", 40.0});
      pa.anchors.push_back({"searched " + pa.product_id, 12.0});
    }
    anchors[pa.product_id] = std::move(pa);
  }
  return anchors;
}

inline std::vector<AnchoredPair> fixture_anchored_pairs() {
  auto pairs = forge_fixture_pairs();
  auto qa = fixture_query_anchors();
  auto pa = fixture_product_anchors();
  std::vector<AnchoredPair> anchored;
  anchored.reserve(pairs.size());
  for (const auto& pair : pairs) {
    AnchoredPair ap;
    ap.pair = pair;
    if (auto it = qa.find(pair.query.id); it != qa.end() && !it->second.anchors.empty()) {
      ap.query_anchors = it->second;
    }
    if (auto it = pa.find(pair.product.id); it != pa.end() && !it->second.anchors.empty()) {
      ap.product_anchors = it->second;
    }
    anchored.push_back(std::move(ap));
  }
  return anchored;
}

/// Unique scratch directory, removed on destruction.
class TempDir {
public:
  explicit TempDir(const std::string& tag) {
    std::random_device rd;
    std::uniform_int_distribution<unsigned long long> dist;
    path_ = std::filesystem::temp_directory_path() /
            ("kcare-" + tag + "-" + std::to_string(dist(rd)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

private:
  std::filesystem::path path_;
};

/// Restores the previous working directory on scope exit.
class DirGuard {
public:
  explicit DirGuard(const std::filesystem::path& to) {
    previous_ = std::filesystem::current_path();
    std::filesystem::current_path(to);
  }
  ~DirGuard() {
    std::error_code ec;
    std::filesystem::current_path(previous_, ec);
  }
  DirGuard(const DirGuard&) = delete;
  DirGuard& operator=(const DirGuard&) = delete;

private:
  std::filesystem::path previous_;
};

} // namespace kcare::testing
