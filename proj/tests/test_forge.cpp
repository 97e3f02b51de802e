#include <algorithm>
#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "kcare/errors.hpp"
#include "kcare/forge.hpp"
#include "kcare/gateway.hpp"
#include "support/fixtures.hpp"

using namespace kcare;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

template <typename Fn>
Errc code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected a kcare::Error");
  return Errc::invariant;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  REQUIRE(in.good());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

std::vector<json> read_rows(const fs::path& path) {
  std::vector<json> rows;
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) rows.push_back(json::parse(line));
  }
  return rows;
}

std::set<std::string> query_ids(const fs::path& path) {
  std::set<std::string> ids;
  for (const auto& row : read_rows(path)) ids.insert(row.value("query_id", ""));
  return ids;
}

ModelEndpoint dead_proposer(const std::string& name) {
  ModelEndpoint endpoint;
  endpoint.role = ModelRole::proposer;
  endpoint.name = name;
  endpoint.transport = TransportKind::remote;
  endpoint.address = "http://127.0.0.1:9/chat";  // nothing listens on the discard port
  endpoint.retry_attempts = 1;
  endpoint.retry_backoff_ms = 1;
  endpoint.timeout_ms = 1000;
  return endpoint;
}

/// Applies scripted first-match rules the way the mock transport does, so a
/// remote test server can mirror a fixture script.
std::string scripted_reply(const std::vector<ScriptRule>& rules, const std::string& haystack) {
  for (const auto& rule : rules) {
    if (rule.match.empty() || haystack.find(rule.match) != std::string::npos) {
      return rule.output;
    }
  }
  return "";
}

/// Chat server that answers probe prompts with the wrong-label fixture script
/// and audit prompts with the REJECT-q003 fixture script, counting each kind.
class ForgeServer {
public:
  ForgeServer()
      : probe_rules_(testing::fixture_sub_model().script),
        audit_rules_(testing::fixture_auditor().script) {
    server_.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
      json body = json::parse(req.body);
      std::string system = body["messages"][0]["content"].get<std::string>();
      std::string user = body["messages"][1]["content"].get<std::string>();
      std::string content;
      if (system.rfind("Audit the rationale", 0) == 0) {
        ++audit_calls;
        content = scripted_reply(audit_rules_, user);
      } else {
        ++probe_calls;
        content = scripted_reply(probe_rules_, user);
      }
      json reply = {{"choices",
                     json::array({{{"message", {{"role", "assistant"}, {"content", content}}},
                                   {"finish_reason", "stop"}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~ForgeServer() {
    server_.stop();
    thread_.join();
  }

  ModelEndpoint endpoint(ModelRole role, const std::string& name) const {
    ModelEndpoint ep;
    ep.role = role;
    ep.name = name;
    ep.transport = TransportKind::remote;
    ep.address = "http://127.0.0.1:" + std::to_string(port_) + "/chat";
    ep.retry_attempts = 2;
    ep.retry_backoff_ms = 1;
    ep.timeout_ms = 10000;
    return ep;
  }

  std::atomic<int> probe_calls{0};
  std::atomic<int> audit_calls{0};

private:
  std::vector<ScriptRule> probe_rules_;
  std::vector<ScriptRule> audit_rules_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

Prototype simple_prototype(const std::string& qid, const std::string& pid,
                           const std::string& rationale) {
  Prototype proto;
  proto.id = prototype_id(PairKey{qid, pid});
  proto.query = Query{qid, "find " + qid};
  proto.product = Product{pid, "product " + pid, {}};
  proto.label = RelevanceLabel::passable;
  proto.rationale_final = rationale;
  proto.arbitration.judge_star = 1;
  proto.arbitration.rationale_star = "endorsed";
  return proto;
}

} // namespace

TEST_SUITE("forge") {

TEST_CASE("prototype ids are stable, short, and separator-safe") {
  PairKey key{"q1", "p1"};
  std::string id = prototype_id(key);
  CHECK(id == prototype_id(key));
  CHECK(id.size() == 16);
  CHECK(id.find_first_not_of("0123456789abcdef") == std::string::npos);
  CHECK(id != prototype_id(PairKey{"q1", "p2"}));
  CHECK(id != prototype_id(PairKey{"q2", "p1"}));
  // Concatenation without a separator would collide these two keys.
  CHECK(prototype_id(PairKey{"ab", "c"}) != prototype_id(PairKey{"a", "bc"}));
}

TEST_CASE("the probe prompt shows the pair and demands a verdict line") {
  auto pairs = testing::forge_fixture_pairs();
  auto [system, user] = relevance_probe_prompt(pairs[2]);  // q003 carries an attribute
  CHECK(system.find("label: <Perfect|Passable|Bad>") != std::string::npos);
  CHECK(user ==
        "query: find q003 wool blanket\n"
        "product: product p003 wool blanket classic\n"
        "attributes: material=steel");

  auto [system_bare, user_bare] = relevance_probe_prompt(pairs[0]);  // q001 has none
  CHECK(system_bare == system);
  CHECK(user_bare ==
        "query: find q001 running shoes\n"
        "product: product p001 running shoes classic");
}

TEST_CASE("mining keeps exactly the disagreements and flags unparseable output") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  ForgeOptions options;
  options.workers = 4;
  ForgeCounts counts;

  auto hard = mine_hard_cases(pairs, gateway, testing::fixture_sub_model(), options, &counts);
  REQUIRE(hard.size() == testing::kFixtureHardCases);
  for (std::size_t i = 0; i < hard.size(); ++i) {
    CHECK(hard[i].pair.query.id == testing::fixture_id('q', i + 1));
  }
  CHECK(counts.input_pairs == 50);
  CHECK(counts.hard_cases == 10);
  CHECK(counts.hard_parse_flags == 1);
  CHECK(counts.stage_failures == 0);

  // q001: scripted "Bad" against gold Perfect.
  CHECK(hard[0].sub_prediction == RelevanceLabel::bad);
  CHECK(hard[0].pair.gold == RelevanceLabel::perfect);
  CHECK_FALSE(hard[0].parse_flag);
  // q010: gibberish, no parsable prediction.
  CHECK(hard[9].parse_flag);
  CHECK_FALSE(hard[9].sub_prediction.has_value());
}

TEST_CASE("an agreeing grader mines nothing") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  ForgeOptions options;
  ForgeCounts counts;
  auto hard =
      mine_hard_cases(pairs, gateway, testing::fixture_agreeing_sub(pairs), options, &counts);
  CHECK(hard.empty());
  CHECK(counts.input_pairs == 50);
  CHECK(counts.hard_cases == 0);
  CHECK(counts.hard_parse_flags == 0);
}

TEST_CASE("mining validates gold labels and the grader role") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  ForgeOptions options;

  std::vector<LabeledPair> unlabeled{pairs[0]};
  unlabeled[0].gold.reset();
  CHECK(code_of([&] {
          mine_hard_cases(unlabeled, gateway, testing::fixture_sub_model(), options);
        }) == Errc::missing_input);

  CHECK(code_of([&] {
          mine_hard_cases(pairs, gateway, testing::fixture_arbiter(), options);
        }) == Errc::config);
}

TEST_CASE("proposals capture each verifier's verdict") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  auto set = propose(pairs[2], gateway, testing::fixture_proposers());  // q003
  REQUIRE(set.proposals.size() == 2);
  CHECK(set.failed_proposers.empty());
  CHECK(set.proposals[0].proposer == "fixture-prop-a");
  CHECK(set.proposals[0].judge == 1);
  CHECK(set.proposals[0].rationale == "the annotation matches the visible evidence.");
  CHECK_FALSE(set.proposals[0].parse_flag);
  CHECK(set.proposals[1].proposer == "fixture-prop-b");
  CHECK(set.proposals[1].judge == 0);
  CHECK(set.proposals[1].rationale == "the grade overlooks a series mismatch.");
  CHECK_FALSE(set.proposals[1].parse_flag);
}

TEST_CASE("unusable proposer replies are flagged and count as disputes") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  std::vector<ModelEndpoint> odd;
  odd.push_back(mock_script(ModelRole::proposer, "prop-bad-value", 61,
                            {{"", "judge: 2\nconfused verdict"}}));
  odd.push_back(mock_script(ModelRole::proposer, "prop-no-rationale", 62, {{"", "judge: 1"}}));
  auto set = propose(pairs[0], gateway, odd);
  REQUIRE(set.proposals.size() == 2);
  for (const auto& proposal : set.proposals) {
    CHECK(proposal.parse_flag);
    CHECK(proposal.judge == 0);
    CHECK(proposal.rationale.empty());
  }

  // Marker casing and spacing are forgiven as long as the value parses.
  std::vector<ModelEndpoint> lax;
  lax.push_back(mock_script(ModelRole::proposer, "prop-upper", 66,
                            {{"", "JUDGE: 0\nupper-case marker"}}));
  lax.push_back(
      mock_script(ModelRole::proposer, "prop-tight", 67, {{"", "judge:1\nno space after colon"}}));
  auto lax_set = propose(pairs[0], gateway, lax);
  REQUIRE(lax_set.proposals.size() == 2);
  CHECK(lax_set.proposals[0].judge == 0);
  CHECK(lax_set.proposals[0].rationale == "upper-case marker");
  CHECK_FALSE(lax_set.proposals[0].parse_flag);
  CHECK(lax_set.proposals[1].judge == 1);
  CHECK(lax_set.proposals[1].rationale == "no space after colon");
  CHECK_FALSE(lax_set.proposals[1].parse_flag);
}

TEST_CASE("a dead proposer is recorded while the rest proceed") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  auto mixed = testing::fixture_proposers();
  mixed.push_back(dead_proposer("prop-dead"));
  auto set = propose(pairs[4], gateway, mixed);
  CHECK(set.proposals.size() == 2);
  REQUIRE(set.failed_proposers.size() == 1);
  CHECK(set.failed_proposers[0] == "prop-dead");
}

TEST_CASE("proposal stage validates its inputs and total failure") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  CHECK(code_of([&] {
          propose(pairs[0], gateway, {dead_proposer("dead-a"), dead_proposer("dead-b")});
        }) == Errc::transport);

  CHECK(code_of([&] {
          propose(pairs[0], gateway, {testing::fixture_proposers()[0]});
        }) == Errc::config);

  std::vector<ModelEndpoint> wrong_role{testing::fixture_proposers()[0],
                                        testing::fixture_arbiter()};
  CHECK(code_of([&] { propose(pairs[0], gateway, wrong_role); }) == Errc::config);
}

TEST_CASE("arbitration follows the verdict line and survives junk output") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  auto proposers = testing::fixture_proposers();
  auto arbiter = testing::fixture_arbiter();

  auto rejected = arbitrate(pairs[0], propose(pairs[0], gateway, proposers).proposals, gateway,
                            arbiter);  // q001
  CHECK(rejected.judge_star == 0);
  CHECK_FALSE(rejected.parse_flag);
  CHECK(rejected.rationale_star == "the human label contradicts the category evidence.");

  auto garbled = arbitrate(pairs[1], propose(pairs[1], gateway, proposers).proposals, gateway,
                           arbiter);  // q002: no verdict line at all
  CHECK(garbled.judge_star == 0);
  CHECK(garbled.parse_flag);
  CHECK(garbled.rationale_star.empty());

  auto endorsed = arbitrate(pairs[4], propose(pairs[4], gateway, proposers).proposals, gateway,
                            arbiter);  // q005
  CHECK(endorsed.judge_star == 1);
  CHECK_FALSE(endorsed.parse_flag);
  CHECK(endorsed.rationale_star == "the consensus rationale holds up.");

  CHECK(code_of([&] { arbitrate(pairs[0], {}, gateway, arbiter); }) == Errc::empty_input);
  CHECK(code_of([&] {
          arbitrate(pairs[0], propose(pairs[0], gateway, proposers).proposals, gateway,
                    testing::fixture_auditor());
        }) == Errc::config);
}

TEST_CASE("the arbiter sees numbered, attributed proposals") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  std::vector<Proposal> listing;
  listing.push_back(Proposal{"alpha", 1, "solid reasoning", false});
  Proposal flagged;
  flagged.proposer = "beta";
  flagged.judge = 0;
  flagged.parse_flag = true;
  listing.push_back(flagged);

  // Each spy rule is keyed on one exact listing line, so it can only fire if
  // the arbitration prompt renders that line.
  auto spy_flagged = mock_script(
      ModelRole::arbiter, "arb-spy-flagged", 63,
      {{"2. beta: judge=0 (unparseable response)", "judge: 1\nsaw the flagged entry."},
       {"", "judge: 0\nthe expected listing line is missing"}});
  auto flagged_result = arbitrate(pairs[0], listing, gateway, spy_flagged);
  CHECK(flagged_result.judge_star == 1);
  CHECK(flagged_result.rationale_star == "saw the flagged entry.");

  auto spy_rationale =
      mock_script(ModelRole::arbiter, "arb-spy-rationale", 64,
                  {{"1. alpha: judge=1\nsolid reasoning", "judge: 1\nsaw the first entry."},
                   {"", "judge: 0\nthe expected listing line is missing"}});
  auto rationale_result = arbitrate(pairs[0], listing, gateway, spy_rationale);
  CHECK(rationale_result.judge_star == 1);
  CHECK(rationale_result.rationale_star == "saw the first entry.");
}

TEST_CASE("the audit returns polish verbatim or rejects") {
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  auto auditor = testing::fixture_auditor();

  CHECK_FALSE(linguistic_audit(pairs[2], "weak rationale", gateway, auditor).has_value());

  auto accepted = linguistic_audit(pairs[4], "fine rationale", gateway, auditor);
  REQUIRE(accepted.has_value());
  CHECK(*accepted ==
        "The verdict follows from the evidence: the cited attributes decide the grade.");

  auto blank = mock_script(ModelRole::quality_auditor, "audit-blank", 65, {{"", "  \n  "}});
  CHECK_FALSE(linguistic_audit(pairs[4], "fine rationale", gateway, blank).has_value());

  CHECK(code_of([&] { linguistic_audit(pairs[4], "", gateway, auditor); }) == Errc::empty_input);
  CHECK(code_of([&] {
          linguistic_audit(pairs[4], "fine rationale", gateway, testing::fixture_arbiter());
        }) == Errc::config);
}

TEST_CASE("repository synthesis walks the funnel and seals each stage") {
  testing::TempDir dir("forge-funnel");
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  ForgeOptions options;
  options.workers = 4;
  ForgeCounts counts;

  Repository repo = build_repository(pairs, gateway, testing::fixture_forge_endpoints(),
                                     dir.path(), options, &counts);

  CHECK(counts.input_pairs == 50);
  CHECK(counts.hard_cases == 10);
  CHECK(counts.hard_parse_flags == 1);
  CHECK(counts.proposal_sets == 10);
  CHECK(counts.proposer_failures == 0);
  CHECK(counts.consensus == 8);
  CHECK(counts.arbiter_parse_flags == 1);
  CHECK(counts.audited == 7);
  CHECK(counts.audit_rejects == 1);
  CHECK(counts.stage_failures == 0);

  for (const char* name : {"d_hard.jsonl", "proposals.jsonl", "d_cons.jsonl", "d_proto.jsonl"}) {
    CHECK(fs::exists(dir.path() / name));
    CHECK(fs::exists(dir.path() / (std::string(name) + ".seal.json")));
  }

  // The funnel only narrows: every stage's keys come from the stage before.
  auto hard_ids = query_ids(dir.path() / "d_hard.jsonl");
  auto cons_ids = query_ids(dir.path() / "d_cons.jsonl");
  auto proto_ids = query_ids(dir.path() / "d_proto.jsonl");
  CHECK(hard_ids.size() == 10);
  CHECK(cons_ids.size() == 8);
  CHECK(proto_ids.size() == 7);
  CHECK(std::includes(hard_ids.begin(), hard_ids.end(), cons_ids.begin(), cons_ids.end()));
  CHECK(std::includes(cons_ids.begin(), cons_ids.end(), proto_ids.begin(), proto_ids.end()));
  CHECK_FALSE(cons_ids.count("q001"));   // arbiter rejected the label
  CHECK_FALSE(cons_ids.count("q002"));   // arbiter output unusable
  CHECK_FALSE(proto_ids.count("q003"));  // audit rejected the rationale

  REQUIRE(repo.prototypes.size() == testing::kFixturePrototypes);
  const Prototype& first = repo.prototypes[0];
  CHECK(first.query.id == "q004");
  CHECK(first.label == RelevanceLabel::passable);
  CHECK(first.id == prototype_id(PairKey{"q004", "p004"}));
  CHECK(first.rationale_final ==
        "The verdict follows from the evidence: the cited attributes decide the grade.");
  CHECK(first.arbitration.judge_star == 1);
  CHECK(first.proposals.size() == 2);

  CHECK(repo.version.size() == 64);
  CHECK(repo.version == repository_version(repo.prototypes));

  Repository loaded = load_repository(dir.path() / "d_proto.jsonl");
  CHECK(loaded.version == repo.version);
  REQUIRE(loaded.prototypes.size() == repo.prototypes.size());
  for (std::size_t i = 0; i < repo.prototypes.size(); ++i) {
    CHECK(loaded.prototypes[i].id == repo.prototypes[i].id);
    CHECK(loaded.prototypes[i].rationale_final == repo.prototypes[i].rationale_final);
    CHECK(loaded.prototypes[i].label == repo.prototypes[i].label);
    CHECK(loaded.prototypes[i].proposals.size() == repo.prototypes[i].proposals.size());
    CHECK(loaded.prototypes[i].arbitration.rationale_star ==
          repo.prototypes[i].arbitration.rationale_star);
  }
}

TEST_CASE("resume reuses sealed stages and recomputes only downstream of a change") {
  ForgeServer server;
  testing::TempDir dir("forge-resume");
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();

  ForgeEndpoints endpoints = testing::fixture_forge_endpoints();
  endpoints.sub_model = server.endpoint(ModelRole::sub_optimal, "remote-sub");
  endpoints.auditor = server.endpoint(ModelRole::quality_auditor, "remote-audit");

  ForgeOptions options;
  options.workers = 4;
  options.resume = true;

  ForgeCounts counts;
  Repository fresh = build_repository(pairs, gateway, endpoints, dir.path(), options, &counts);
  CHECK(fresh.prototypes.size() == 7);
  CHECK(server.probe_calls == 50);
  CHECK(server.audit_calls == 8);
  std::string proto_bytes = slurp(dir.path() / "d_proto.jsonl");
  std::string hard_bytes = slurp(dir.path() / "d_hard.jsonl");

  // Unchanged inputs: every stage reloads from its seal, no model traffic.
  ForgeCounts resumed_counts;
  Repository resumed =
      build_repository(pairs, gateway, endpoints, dir.path(), options, &resumed_counts);
  CHECK(server.probe_calls == 50);
  CHECK(server.audit_calls == 8);
  CHECK(resumed.version == fresh.version);
  CHECK(slurp(dir.path() / "d_proto.jsonl") == proto_bytes);
  CHECK(resumed_counts.hard_cases == 10);
  CHECK(resumed_counts.consensus == 8);
  CHECK(resumed_counts.audited == 7);

  // Dropping an easy pair reruns mining, but the mined file comes out
  // byte-identical, so every later seal still holds.
  std::vector<LabeledPair> without_easy(pairs.begin(), pairs.end() - 1);  // drop q050
  Repository after_easy =
      build_repository(without_easy, gateway, endpoints, dir.path(), options, nullptr);
  CHECK(server.probe_calls == 99);  // 50 + 49 re-probes
  CHECK(server.audit_calls == 8);   // audit seal still current
  CHECK(after_easy.version == fresh.version);
  CHECK(slurp(dir.path() / "d_hard.jsonl") == hard_bytes);

  // Dropping a pair that became a prototype changes the funnel, so the
  // stages downstream of the change recompute.
  std::vector<LabeledPair> without_hard = pairs;
  without_hard.erase(without_hard.begin() + 3);  // drop q004
  ForgeCounts changed_counts;
  Repository changed =
      build_repository(without_hard, gateway, endpoints, dir.path(), options, &changed_counts);
  CHECK(server.probe_calls == 148);  // another 49 re-probes
  CHECK(server.audit_calls == 15);   // 8 + 7 consensus cases re-audited
  CHECK(changed_counts.hard_cases == 9);
  CHECK(changed_counts.consensus == 7);
  CHECK(changed_counts.audited == 6);
  CHECK(changed.prototypes.size() == 6);
  CHECK(changed.version != fresh.version);
}

TEST_CASE("a corrupted stage file defeats its seal and is rebuilt") {
  testing::TempDir dir("forge-corrupt");
  Gateway gateway;
  auto pairs = testing::forge_fixture_pairs();
  auto endpoints = testing::fixture_forge_endpoints();
  ForgeOptions options;
  options.workers = 4;
  options.resume = true;

  Repository fresh = build_repository(pairs, gateway, endpoints, dir.path(), options, nullptr);
  std::string clean_cons = slurp(dir.path() / "d_cons.jsonl");

  {
    std::ofstream out(dir.path() / "d_cons.jsonl", std::ios::app);
    out << "{\"query_id\":\"q999\",\"judge_star\":1}\n";
  }
  REQUIRE(slurp(dir.path() / "d_cons.jsonl") != clean_cons);

  Repository rebuilt = build_repository(pairs, gateway, endpoints, dir.path(), options, nullptr);
  CHECK(rebuilt.version == fresh.version);
  CHECK(slurp(dir.path() / "d_cons.jsonl") == clean_cons);
}

TEST_CASE("loading rejects duplicate ids and incomplete prototypes") {
  testing::TempDir dir("forge-load");

  Repository duplicated;
  duplicated.prototypes.push_back(simple_prototype("q1", "p1", "first rationale"));
  duplicated.prototypes.push_back(simple_prototype("q1", "p1", "second rationale"));
  auto dup_path = dir.path() / "dup.jsonl";
  save_repository(dup_path, duplicated);
  CHECK(code_of([&] { load_repository(dup_path); }) == Errc::invariant);

  Repository hollow;
  hollow.prototypes.push_back(simple_prototype("q2", "p2", ""));
  auto hollow_path = dir.path() / "hollow.jsonl";
  save_repository(hollow_path, hollow);
  CHECK(code_of([&] { load_repository(hollow_path); }) == Errc::invalid_input);
}

TEST_CASE("the repository version is a pure content function") {
  std::vector<Prototype> protos;
  protos.push_back(simple_prototype("q1", "p1", "rationale one"));
  protos.push_back(simple_prototype("q2", "p2", "rationale two"));
  auto copy = protos;
  CHECK(repository_version(protos) == repository_version(copy));

  copy[0].rationale_final += " amended";
  CHECK(repository_version(protos) != repository_version(copy));

  auto reordered = protos;
  std::swap(reordered[0], reordered[1]);
  CHECK(repository_version(protos) != repository_version(reordered));
}

} // TEST_SUITE("forge")
