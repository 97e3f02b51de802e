#include <atomic>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "kcare/errors.hpp"
#include "kcare/gateway.hpp"
#include "kcare/judge.hpp"
#include "support/fixtures.hpp"

using namespace kcare;
using nlohmann::json;

namespace {

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

LabeledPair river_pair() {
  LabeledPair pair;
  pair.query = Query{"q1", "wading shoes"};
  pair.product = Product{"p1", "creek tracer shoes", {{"sole", "grip"}, {"drainage", "fast"}}};
  return pair;
}

Prototype river_precedent() {
  Prototype proto;
  proto.id = "feedfacefeedface";
  proto.query = Query{"qp", "river sandals"};
  proto.product = Product{"pp", "canyon strap sandals", {}};
  proto.label = RelevanceLabel::perfect;
  proto.rationale_final = "the strap design matches in-water use, which the query demands";
  proto.arbitration.judge_star = 1;
  return proto;
}

JudgmentContext full_context() {
  JudgmentContext ctx;
  QueryAnchors qa;
  qa.query_id = "q1";
  qa.source = QueryAnchorSource::ranking;
  qa.anchors.push_back(QueryAnchor{"creek shoes pro", 3});
  qa.anchors.push_back(QueryAnchor{"river grip sneaker", 7});
  ctx.query_anchors = std::move(qa);
  ProductAnchors pa;
  pa.product_id = "p1";
  pa.source = ProductAnchorSource::clicks;
  pa.anchors.push_back(ProductAnchor{"shoes for stream hiking", 41.0});
  pa.anchors.push_back(ProductAnchor{"water hiking footwear", 9.0});
  ctx.product_anchors = std::move(pa);
  ctx.prototype = PrototypeContext{river_precedent(), 0.82};
  return ctx;
}

ModelEndpoint steady_judge(const std::string& reply, std::uint64_t seed) {
  return mock_script(ModelRole::judge, "judge-steady-" + std::to_string(seed), seed,
                     {{"", reply}});
}

/// Judge server that refuses one poisoned pair and grades the rest, for
/// exercising partial transport failure in a batch.
class FlakyJudgeServer {
public:
  explicit FlakyJudgeServer(std::string poison) : poison_(std::move(poison)) {
    server_.Post("/chat", [this](const httplib::Request& req, httplib::Response& res) {
      ++calls;
      if (req.body.find(poison_) != std::string::npos) {
        res.status = 503;
        return;
      }
      json reply = {{"choices", json::array({{{"message",
                                               {{"role", "assistant"},
                                                {"content", "Evidence reviewed.\nlabel: Perfect"}}},
                                              {"finish_reason", "stop"}}})}};
      res.set_content(reply.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FlakyJudgeServer() {
    server_.stop();
    thread_.join();
  }

  ModelEndpoint endpoint() const {
    ModelEndpoint ep;
    ep.role = ModelRole::judge;
    ep.name = "remote-judge";
    ep.transport = TransportKind::remote;
    ep.address = "http://127.0.0.1:" + std::to_string(port_) + "/chat";
    ep.retry_attempts = 2;
    ep.retry_backoff_ms = 1;
    ep.timeout_ms = 10000;
    return ep;
  }

  std::atomic<int> calls{0};

private:
  std::string poison_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

} // namespace

TEST_SUITE("judge") {

TEST_CASE("the prompt lays out rubric, anchors, precedent, and the ask in order") {
  LabeledPair pair = river_pair();
  JudgmentContext ctx = full_context();

  auto [system, user] = assemble_prompt(pair, ctx, "");
  CHECK(system.rfind("You judge the relevance", 0) == 0);
  CHECK(system.find(kDefaultRubric) != std::string::npos);
  CHECK(system.find("label: <Perfect|Passable|Bad>") != std::string::npos);

  CHECK(user ==
        "query: wading shoes\n"
        "top-ranked products for this query:\n"
        "3. creek shoes pro\n"
        "7. river grip sneaker\n"
        "product: creek tracer shoes\n"
        "attributes: sole=grip; drainage=fast\n"
        "queries whose clicks led to this product:\n"
        "1. shoes for stream hiking\n"
        "2. water hiking footwear\n"
        "analogous precedent:\n"
        "precedent query: river sandals\n"
        "precedent product: canyon strap sandals\n"
        "precedent label: Perfect\n"
        "precedent rationale: the strap design matches in-water use, which the query demands\n"
        "Use this precedent as an interpretative guide, not as the answer.\n"
        "Assess the relevance of the product to the query.");

  LabeledPair bare_pair;
  bare_pair.query = Query{"q2", "desk lamp"};
  bare_pair.product = Product{"p2", "clamp lamp", {}};
  auto [bare_system, bare_user] = assemble_prompt(bare_pair, JudgmentContext{}, "");
  CHECK(bare_system == system);
  CHECK(bare_user ==
        "query: desk lamp\n"
        "product: clamp lamp\n"
        "Assess the relevance of the product to the query.");

  auto [custom_system, custom_user] = assemble_prompt(pair, ctx, "One-line house rubric.");
  CHECK(custom_system.find("One-line house rubric.") != std::string::npos);
  CHECK(custom_system.find(kDefaultRubric) == std::string::npos);
  CHECK(custom_user == user);

  JudgmentContext out_of_range = ctx;
  out_of_range.prototype->score = 1.5;
  CHECK(code_of([&] { assemble_prompt(pair, out_of_range, ""); }) == Errc::invariant);
  out_of_range.prototype->score = -1.5;
  CHECK(code_of([&] { assemble_prompt(pair, out_of_range, ""); }) == Errc::invariant);
}

TEST_CASE("a judgment parses the final label line and records its grounding") {
  Gateway gateway;
  LabeledPair pair = river_pair();
  JudgmentContext ctx = full_context();

  auto judge = steady_judge("The grip sole and drainage confirm in-water use.\nlabel: Passable",
                            71);
  RelevanceJudgment judgment = judge_relevance(pair, ctx, gateway, judge);
  CHECK(judgment.key.query_id == "q1");
  CHECK(judgment.key.product_id == "p1");
  CHECK(judgment.predicted == RelevanceLabel::passable);
  CHECK_FALSE(judgment.fallback_applied);
  CHECK(judgment.raw_output ==
        "The grip sole and drainage confirm in-water use.\nlabel: Passable");
  CHECK(judgment.context_digest == context_digest(ctx));
  REQUIRE(judgment.prototype_id.has_value());
  CHECK(*judgment.prototype_id == "feedfacefeedface");
  REQUIRE(judgment.score.has_value());
  CHECK(*judgment.score == doctest::Approx(0.82));

  RelevanceJudgment bare = judge_relevance(pair, JudgmentContext{}, gateway, judge);
  CHECK_FALSE(bare.prototype_id.has_value());
  CHECK_FALSE(bare.score.has_value());
  CHECK(bare.context_digest == context_digest(JudgmentContext{}));
  CHECK(bare.context_digest != judgment.context_digest);

  CHECK(code_of([&] {
          judge_relevance(pair, ctx, gateway, testing::fixture_arbiter());
        }) == Errc::config);
}

TEST_CASE("a malformed reply earns one retry with the format reminder") {
  Gateway gateway;
  LabeledPair pair = river_pair();

  // The script only answers properly when the retry's format reminder is in
  // the prompt, so a parsed verdict proves the retry happened.
  auto flaky = mock_script(ModelRole::judge, "judge-flaky", 72,
                           {{"Reply with a final line exactly of the form",
                             "Second pass.\nlabel: Bad"},
                            {"", "the model rambles on without any verdict"}});
  RelevanceJudgment judgment = judge_relevance(pair, JudgmentContext{}, gateway, flaky);
  CHECK(judgment.predicted == RelevanceLabel::bad);
  CHECK_FALSE(judgment.fallback_applied);
  CHECK(judgment.raw_output == "Second pass.\nlabel: Bad");
}

TEST_CASE("persistent refusal falls back to the configured label") {
  Gateway gateway;
  LabeledPair pair = river_pair();
  auto mute = steady_judge("still no verdict to be found here", 73);

  RelevanceJudgment defaulted = judge_relevance(pair, JudgmentContext{}, gateway, mute);
  CHECK(defaulted.predicted == RelevanceLabel::bad);
  CHECK(defaulted.fallback_applied);
  CHECK(defaulted.raw_output == "still no verdict to be found here");

  JudgeOptions options;
  options.fallback = RelevanceLabel::passable;
  RelevanceJudgment configured =
      judge_relevance(pair, JudgmentContext{}, gateway, mute, options);
  CHECK(configured.predicted == RelevanceLabel::passable);
  CHECK(configured.fallback_applied);
}

TEST_CASE("the context digest tracks every grounding component") {
  JudgmentContext bare;
  JudgmentContext with_query = bare;
  with_query.query_anchors = full_context().query_anchors;
  JudgmentContext with_both = with_query;
  with_both.product_anchors = full_context().product_anchors;
  JudgmentContext with_all = with_both;
  with_all.prototype = full_context().prototype;

  std::set<std::string> digests{context_digest(bare), context_digest(with_query),
                                context_digest(with_both), context_digest(with_all)};
  CHECK(digests.size() == 4);  // every added component changes the digest

  JudgmentContext rescored = with_all;
  rescored.prototype->score = 0.11;
  CHECK(context_digest(rescored) != context_digest(with_all));

  JudgmentContext copy = with_all;
  CHECK(context_digest(copy) == context_digest(with_all));
}

TEST_CASE("judgment records round-trip apart from the hashed raw output") {
  testing::TempDir dir("judge-io");
  Gateway gateway;
  LabeledPair pair = river_pair();
  auto judge = steady_judge("Verdict made.\nlabel: Perfect", 74);

  std::vector<RelevanceJudgment> judgments;
  judgments.push_back(judge_relevance(pair, full_context(), gateway, judge));
  judgments.push_back(judge_relevance(pair, JudgmentContext{}, gateway, judge));

  auto path = dir.path() / "judgments.jsonl";
  save_judgments(path, judgments);
  auto loaded = load_judgments(path);
  REQUIRE(loaded.size() == 2);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].key.query_id == judgments[i].key.query_id);
    CHECK(loaded[i].key.product_id == judgments[i].key.product_id);
    CHECK(loaded[i].predicted == judgments[i].predicted);
    CHECK(loaded[i].context_digest == judgments[i].context_digest);
    CHECK(loaded[i].fallback_applied == judgments[i].fallback_applied);
    CHECK(loaded[i].prototype_id == judgments[i].prototype_id);
    CHECK(loaded[i].score == judgments[i].score);
    // Only the raw output's digest is persisted.
    CHECK(loaded[i].raw_output.empty());
  }

  auto bad_path = dir.path() / "bad.jsonl";
  {
    std::ofstream out(bad_path);
    out << R"({"query_id":"q1","product_id":"p1","predicted":"Great"})" << "\n";
  }
  CHECK(code_of([&] { load_judgments(bad_path); }) == Errc::invalid_input);
}

TEST_CASE("batch judging preserves order and reports transport skips") {
  Gateway gateway;
  auto all_pairs = testing::forge_fixture_pairs();
  std::vector<LabeledPair> pairs(all_pairs.begin(), all_pairs.begin() + 6);
  ContextProvider bare_context = [](const LabeledPair&) { return JudgmentContext{}; };
  JudgeOptions options;
  options.workers = 3;

  auto judge = steady_judge("Read the evidence.\nlabel: Perfect", 75);
  std::vector<std::size_t> skipped;
  auto judgments = judge_pairs(pairs, bare_context, gateway, judge, options, &skipped);
  REQUIRE(judgments.size() == 6);
  CHECK(skipped.empty());
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(judgments[i].key.query_id == pairs[i].query.id);
  }

  FlakyJudgeServer server("q003");
  skipped.clear();
  auto partial = judge_pairs(pairs, bare_context, gateway, server.endpoint(), options, &skipped);
  REQUIRE(partial.size() == 5);
  REQUIRE(skipped.size() == 1);
  CHECK(skipped[0] == 2);  // q003 refused at the transport level
  CHECK(partial[2].key.query_id == "q004");
  for (const auto& judgment : partial) {
    CHECK(judgment.predicted == RelevanceLabel::perfect);
  }

  // Losing more than the abort fraction is a stage failure, not a result.
  ModelEndpoint dead;
  dead.role = ModelRole::judge;
  dead.name = "judge-dead";
  dead.transport = TransportKind::remote;
  dead.address = "http://127.0.0.1:9/chat";
  dead.retry_attempts = 1;
  dead.retry_backoff_ms = 1;
  dead.timeout_ms = 1000;
  CHECK(code_of([&] { judge_pairs(pairs, bare_context, gateway, dead, options); }) ==
        Errc::transport);
}

TEST_CASE("distillation refuses gold labels and writes judgment records") {
  testing::TempDir dir("judge-distill");
  Gateway gateway;
  auto all_pairs = testing::forge_fixture_pairs();
  std::vector<LabeledPair> unlabeled(all_pairs.begin(), all_pairs.begin() + 5);
  for (auto& pair : unlabeled) pair.gold.reset();
  ContextProvider bare_context = [](const LabeledPair&) { return JudgmentContext{}; };
  auto judge = steady_judge("Weighed the constraints.\nlabel: Passable", 76);

  auto out_path = dir.path() / "labels.jsonl";
  auto judgments =
      distill_labels(unlabeled, bare_context, gateway, judge, JudgeOptions{}, out_path);
  REQUIRE(judgments.size() == 5);
  auto persisted = load_judgments(out_path);
  REQUIRE(persisted.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(persisted[i].key.query_id == unlabeled[i].query.id);
    CHECK(persisted[i].predicted == RelevanceLabel::passable);
  }

  CHECK(code_of([&] {
          distill_labels({all_pairs[0]}, bare_context, gateway, judge, JudgeOptions{},
                         dir.path() / "never.jsonl");
        }) == Errc::invalid_input);
}

} // TEST_SUITE("judge")
