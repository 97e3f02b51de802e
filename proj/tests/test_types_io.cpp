#include <fstream>

#include "doctest.h"
#include "kcare/errors.hpp"
#include "kcare/pairs_io.hpp"
#include "kcare/types.hpp"
#include "support/fixtures.hpp"

using namespace kcare;
using kcare::testing::TempDir;

namespace {

LabeledPair sample_pair() {
  LabeledPair pair;
  pair.query = {"q1", "trail shoes"};
  pair.product = {"p1", "Ridge trail shoes", {{"brand", "Ridge"}, {"color", "sand"}}};
  pair.gold = RelevanceLabel::perfect;
  return pair;
}

void write_lines(const std::filesystem::path& path, const std::vector<std::string>& lines) {
  std::ofstream out(path);
  for (const auto& line : lines) out << line << '\n';
}

} // namespace

TEST_SUITE("types-io") {

TEST_CASE("validate_pair flags every violated invariant") {
  CHECK(validate_pair(sample_pair()).empty());

  LabeledPair bad;
  bad.query = {"q1", "  "};
  bad.product = {"p1", "", {}};
  bad.product.attributes.emplace_back("", "x");
  auto problems = validate_pair(bad);
  REQUIRE(problems.size() == 3);  // blank text, blank title, nameless attribute
  CHECK(problems[0] == "query.text empty");
  CHECK(problems[1] == "product.title empty");
  CHECK(problems[2] == "product.attributes[0].name empty");
}

TEST_CASE("render_attributes joins name=value pairs") {
  CHECK(render_attributes(sample_pair().product) == "brand=Ridge; color=sand");
  Product bare{"p", "title", {}};
  CHECK(render_attributes(bare).empty());
}

TEST_CASE("key_of extracts the join key") {
  PairKey key = key_of(sample_pair());
  CHECK(key.query_id == "q1");
  CHECK(key.product_id == "p1");
  CHECK(key == (PairKey{"q1", "p1"}));
  CHECK(key < (PairKey{"q2", "a"}));
}

TEST_CASE("pairs round-trip through JSONL") {
  TempDir dir("pairs");
  auto pairs = kcare::testing::forge_fixture_pairs();
  auto path = dir.path() / "pairs.jsonl";
  save_labeled_pairs(path, pairs);
  auto loaded = load_labeled_pairs(path, LabelPolicy::require);
  REQUIRE(loaded.size() == pairs.size());
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    CHECK(loaded[i].query.id == pairs[i].query.id);
    CHECK(loaded[i].query.text == pairs[i].query.text);
    CHECK(loaded[i].product.title == pairs[i].product.title);
    CHECK(loaded[i].product.attributes == pairs[i].product.attributes);
    CHECK(loaded[i].gold == pairs[i].gold);
  }
}

TEST_CASE("label policies") {
  TempDir dir("policy");
  auto path = dir.path() / "pairs.jsonl";
  write_lines(path,
              {R"({"query_id":"q1","query_text":"a","product_id":"p1","product_title":"t","attributes":[],"label":"Bad"})",
               R"({"query_id":"q2","query_text":"b","product_id":"p2","product_title":"u","attributes":[],"label":null})"});
  CHECK(load_labeled_pairs(path).size() == 2);
  CHECK_THROWS_AS(load_labeled_pairs(path, LabelPolicy::require), Error);
  CHECK_THROWS_AS(load_labeled_pairs(path, LabelPolicy::forbid), Error);
}

TEST_CASE("dataset-level id consistency is enforced") {
  TempDir dir("consistency");
  auto path = dir.path() / "pairs.jsonl";
  write_lines(path,
              {R"({"query_id":"q1","query_text":"first text","product_id":"p1","product_title":"t","attributes":[],"label":"Bad"})",
               R"({"query_id":"q1","query_text":"different text","product_id":"p2","product_title":"u","attributes":[],"label":"Bad"})"});
  try {
    load_labeled_pairs(path);
    CHECK(false);
  } catch (const Error& e) {
    CHECK(e.code() == Errc::invalid_input);
    CHECK(std::string(e.what()).find("q1") != std::string::npos);
  }
}

TEST_CASE("malformed rows are reported with their record numbers") {
  TempDir dir("malformed");
  auto path = dir.path() / "pairs.jsonl";
  write_lines(path,
              {R"({"query_id":"q1","query_text":"a","product_id":"p1","product_title":"t","attributes":[],"label":"Bad"})",
               R"({"query_id":"","query_text":"","product_id":"p2","product_title":"u","attributes":[],"label":"Odd"})"});
  try {
    load_labeled_pairs(path);
    CHECK(false);
  } catch (const Error& e) {
    std::string what = e.what();
    CHECK(what.find("record 2") != std::string::npos);
    CHECK(what.find("Odd") != std::string::npos);
  }

  // A syntactically broken line is located by file:line instead.
  auto broken = dir.path() / "broken.jsonl";
  write_lines(broken,
              {R"({"query_id":"q1","query_text":"a","product_id":"p1","product_title":"t","attributes":[],"label":"Bad"})",
               "{not json"});
  try {
    load_labeled_pairs(broken);
    CHECK(false);
  } catch (const Error& e) {
    std::string what = e.what();
    CHECK(what.find(":2:") != std::string::npos);
    CHECK(what.find("malformed") != std::string::npos);
  }
}

TEST_CASE("unknown label strings are rejected") {
  TempDir dir("label");
  auto path = dir.path() / "pairs.jsonl";
  write_lines(path,
              {R"({"query_id":"q1","query_text":"a","product_id":"p1","product_title":"t","attributes":[],"label":"Great"})"});
  CHECK_THROWS_AS(load_labeled_pairs(path), Error);
}

} // TEST_SUITE
