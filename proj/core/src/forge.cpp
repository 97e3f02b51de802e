#include "kcare/forge.hpp"

#include <cctype>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "kcare/hash.hpp"
#include "kcare/worker_pool.hpp"
#include "rows.hpp"

namespace kcare {

namespace {

std::string pair_block(const LabeledPair& pair) {
  std::string block = "query: " + pair.query.text + "\nproduct: " + pair.product.title;
  std::string attrs = render_attributes(pair.product);
  if (!attrs.empty()) block += "\nattributes: " + attrs;
  return block;
}

std::string gold_or_fail(const LabeledPair& pair, std::string_view stage) {
  if (!pair.gold.has_value()) {
    fail(Errc::missing_input, std::string(stage) + " requires a gold label for pair (" +
                                  pair.query.id + ", " + pair.product.id + ")");
  }
  return std::string(to_string(*pair.gold));
}

/// Parses a "judge: 0|1" line plus free-text rationale. Returns false when no
/// such line exists or its value is neither 0 nor 1.
bool parse_judge_response(const std::string& text, int& judge, std::string& rationale) {
  std::istringstream in(text);
  std::string line;
  bool found = false;
  std::string rest;
  while (std::getline(in, line)) {
    std::string t = trimmed(line);
    std::string lower = t;
    for (char& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (!found && lower.rfind("judge:", 0) == 0) {
      std::string value = trimmed(t.substr(6));
      if (value != "0" && value != "1") return false;
      judge = value == "1" ? 1 : 0;
      found = true;
      continue;
    }
    if (!rest.empty()) rest += "\n";
    rest += line;
  }
  if (!found) return false;
  rationale = trimmed(rest);
  return true;
}

struct StageSeal {
  std::string content_sha256;
  std::string input_sha256;
  std::size_t records = 0;
};

std::filesystem::path seal_path(const std::filesystem::path& file) {
  std::filesystem::path sealed = file;
  sealed += ".seal.json";
  return sealed;
}

void write_seal(const std::filesystem::path& file, const std::string& input_digest,
                std::size_t records, const json& extra = json::object()) {
  json doc = extra;
  doc["sha256"] = sha256_file_hex(file);
  doc["input_sha256"] = input_digest;
  doc["records"] = records;
  write_json_file(seal_path(file), doc);
}

/// A stage output is current when both file and seal exist, the seal binds
/// the same inputs, and the file content still matches its recorded digest.
bool stage_current(const std::filesystem::path& file, const std::string& input_digest) {
  std::error_code ec;
  if (!std::filesystem::exists(file, ec) || !std::filesystem::exists(seal_path(file), ec)) {
    return false;
  }
  json seal;
  try {
    seal = read_json_file(seal_path(file));
  } catch (const Error&) {
    return false;
  }
  return seal.value("input_sha256", "") == input_digest &&
         seal.value("sha256", "") == sha256_file_hex(file);
}

std::string pairs_digest(const std::vector<LabeledPair>& pairs) {
  json rows = json::array();
  for (const auto& pair : pairs) rows.push_back(pair_row(pair));
  return sha256_hex(canonical_dump(rows));
}

json proposal_to_json(const Proposal& proposal) {
  return {{"proposer", proposal.proposer},
          {"judge", proposal.judge},
          {"rationale", proposal.rationale},
          {"parse_flag", proposal.parse_flag}};
}

Proposal proposal_from_json(const json& row) {
  Proposal proposal;
  proposal.proposer = row.value("proposer", "");
  proposal.judge = row.value("judge", 0);
  proposal.rationale = row.value("rationale", "");
  proposal.parse_flag = row.value("parse_flag", false);
  return proposal;
}

} // namespace

std::string prototype_id(const PairKey& key) {
  return sha256_hex(key.query_id + '\x1f' + key.product_id).substr(0, 16);
}

std::pair<std::string, std::string> relevance_probe_prompt(const LabeledPair& pair) {
  std::string system =
      "Assess the relevance of the product to the query. After your reasoning, "
      "output a final line exactly of the form \"label: <Perfect|Passable|Bad>\".";
  return {system, pair_block(pair)};
}

std::vector<HardCase> mine_hard_cases(const std::vector<LabeledPair>& labeled,
                                      const Gateway& gateway, const ModelEndpoint& sub_model,
                                      const ForgeOptions& options, ForgeCounts* counts) {
  if (sub_model.role != ModelRole::sub_optimal) {
    fail(Errc::config, "mine_hard_cases requires an endpoint with role sub_optimal");
  }
  for (const auto& pair : labeled) gold_or_fail(pair, "mine_hard_cases");

  ProbePromptBuilder build_prompt =
      options.probe_prompt ? options.probe_prompt : relevance_probe_prompt;

  auto results = parallel_map(labeled, options.workers,
                              [&](const LabeledPair& pair, std::size_t) {
                                auto [system, user] = build_prompt(pair);
                                return gateway.complete(sub_model, system, user).text;
                              });

  std::vector<HardCase> hard;
  std::size_t failures = 0;
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    if (tolerated_failure(results[i])) {
      ++failures;
      continue;
    }
    LabelParse parsed = parse_label(answer_region(*results[i].value));
    if (parsed.ok() && *parsed.label == *labeled[i].gold) continue;
    HardCase hc;
    hc.pair = labeled[i];
    hc.sub_prediction = parsed.label;
    hc.parse_flag = !parsed.ok();
    hard.push_back(std::move(hc));
  }
  if (counts != nullptr) {
    counts->input_pairs = labeled.size();
    counts->hard_cases = hard.size();
    counts->stage_failures += failures;
    for (const auto& hc : hard) {
      if (hc.parse_flag) ++counts->hard_parse_flags;
    }
  }
  enforce_abort_threshold(failures, labeled.size(), options.abort_fraction, "mine-hard-cases");
  return hard;
}

ProposalSet propose(const LabeledPair& pair, const Gateway& gateway,
                    const std::vector<ModelEndpoint>& proposers) {
  if (proposers.size() < 2) {
    fail(Errc::config, "propose requires at least two proposers");
  }
  for (const auto& proposer : proposers) {
    if (proposer.role != ModelRole::proposer) {
      fail(Errc::config, "endpoint '" + proposer.name + "' is not a proposer");
    }
  }
  std::string label = gold_or_fail(pair, "propose");

  std::string system =
      "Verify whether the human relevance label for this query-product pair is "
      "correct. Output a line \"judge: 1\" if the label is correct or \"judge: 0\" "
      "if it is wrong, followed by your rationale.";
  std::string user = pair_block(pair) + "\nlabel: " + label;

  ProposalSet set;
  for (const auto& proposer : proposers) {
    std::string text;
    try {
      text = gateway.complete(proposer, system, user).text;
    } catch (const Error&) {
      set.failed_proposers.push_back(proposer.name);
      continue;
    }
    Proposal proposal;
    proposal.proposer = proposer.name;
    int judge = 0;
    std::string rationale;
    if (parse_judge_response(text, judge, rationale) && !rationale.empty()) {
      proposal.judge = judge;
      proposal.rationale = std::move(rationale);
    } else {
      proposal.judge = 0;
      proposal.parse_flag = true;
    }
    set.proposals.push_back(std::move(proposal));
  }
  if (set.proposals.empty()) {
    fail(Errc::transport, "all proposers failed for pair (" + pair.query.id + ", " +
                              pair.product.id + ")");
  }
  return set;
}

ArbitrationResult arbitrate(const LabeledPair& pair, const std::vector<Proposal>& proposals,
                            const Gateway& gateway, const ModelEndpoint& arbiter) {
  if (arbiter.role != ModelRole::arbiter) {
    fail(Errc::config, "arbitrate requires an endpoint with role arbiter");
  }
  if (proposals.empty()) {
    fail(Errc::empty_input, "arbitrate requires at least one proposal");
  }
  std::string label = gold_or_fail(pair, "arbitrate");

  std::string system =
      "Adjudicate the proposals about whether the human relevance label is correct. "
      "Output a line \"judge: 1\" to confirm the label or \"judge: 0\" to reject it, "
      "followed by one consolidated rationale.";
  std::ostringstream user;
  user << pair_block(pair) << "\nlabel: " << label << "\nproposals:\n";
  for (std::size_t i = 0; i < proposals.size(); ++i) {
    user << (i + 1) << ". " << proposals[i].proposer << ": judge=" << proposals[i].judge;
    if (proposals[i].parse_flag) {
      user << " (unparseable response)";
    } else {
      user << "\n" << proposals[i].rationale;
    }
    user << "\n";
  }

  std::string text = gateway.complete(arbiter, system, user.str()).text;
  ArbitrationResult result;
  int judge = 0;
  std::string rationale;
  if (!parse_judge_response(text, judge, rationale) || (judge == 1 && rationale.empty())) {
    result.judge_star = 0;
    result.parse_flag = true;
    return result;
  }
  result.judge_star = judge;
  result.rationale_star = std::move(rationale);
  return result;
}

std::optional<std::string> linguistic_audit(const LabeledPair& pair,
                                            const std::string& rationale_star,
                                            const Gateway& gateway,
                                            const ModelEndpoint& auditor) {
  if (auditor.role != ModelRole::quality_auditor) {
    fail(Errc::config, "linguistic_audit requires an endpoint with role quality_auditor");
  }
  if (rationale_star.empty()) {
    fail(Errc::empty_input, "linguistic_audit requires a non-empty rationale");
  }
  std::string label = gold_or_fail(pair, "linguistic_audit");

  std::string system =
      "Audit the rationale for fluency, logical coherence, and completeness. Reply "
      "with a polished rewrite of the rationale, or with the single token REJECT if "
      "it cannot stand.";
  std::string user = pair_block(pair) + "\nlabel: " + label + "\nrationale: " + rationale_star;

  std::string text = gateway.complete(auditor, system, user).text;
  std::string t = trimmed(text);
  if (t.empty() || t == "REJECT") return std::nullopt;
  return text;
}

std::string repository_version(const std::vector<Prototype>& prototypes) {
  std::string blob;
  for (const auto& proto : prototypes) {
    json trace_proposals = json::array();
    for (const auto& proposal : proto.proposals) {
      trace_proposals.push_back(proposal_to_json(proposal));
    }
    json row = {
        {"id", proto.id},
        {"query_id", proto.query.id},
        {"product_id", proto.product.id},
        {"label", std::string(to_string(proto.label))},
        {"rationale_final", proto.rationale_final},
        {"proposals", std::move(trace_proposals)},
        {"judge_star", proto.arbitration.judge_star},
        {"rationale_star", proto.arbitration.rationale_star},
    };
    blob += canonical_dump(row);
    blob += '\n';
  }
  return sha256_hex(blob);
}

void save_repository(const std::filesystem::path& path, const Repository& repo) {
  std::vector<json> rows;
  rows.reserve(repo.prototypes.size());
  for (const auto& proto : repo.prototypes) {
    json row = pair_row(LabeledPair{proto.query, proto.product, proto.label});
    row["id"] = proto.id;
    json trace_proposals = json::array();
    for (const auto& proposal : proto.proposals) {
      trace_proposals.push_back(proposal_to_json(proposal));
    }
    row["trace"] = {{"proposals", std::move(trace_proposals)},
                    {"arbitration",
                     {{"judge_star", proto.arbitration.judge_star},
                      {"rationale_star", proto.arbitration.rationale_star},
                      {"parse_flag", proto.arbitration.parse_flag}}},
                    {"audit_verdict", "accepted"}};
    row["rationale_final"] = proto.rationale_final;
    rows.push_back(std::move(row));
  }
  write_jsonl(path, rows);
}

Repository load_repository(const std::filesystem::path& path) {
  Repository repo;
  for (const auto& row : read_jsonl(path)) {
    LabeledPair pair = pair_from_row_strict(row, path.string());
    Prototype proto;
    proto.id = row.value("id", "");
    proto.query = pair.query;
    proto.product = pair.product;
    if (!pair.gold.has_value()) {
      fail(Errc::invalid_input, path.string() + ": prototype lacks a label");
    }
    proto.label = *pair.gold;
    proto.rationale_final = row.value("rationale_final", "");
    if (proto.id.empty() || proto.rationale_final.empty()) {
      fail(Errc::invalid_input,
           path.string() + ": prototype needs id and non-empty rationale_final");
    }
    if (row.contains("trace")) {
      const json& trace = row["trace"];
      if (trace.contains("proposals")) {
        for (const auto& entry : trace["proposals"]) {
          proto.proposals.push_back(proposal_from_json(entry));
        }
      }
      if (trace.contains("arbitration")) {
        const json& arb = trace["arbitration"];
        proto.arbitration.judge_star = arb.value("judge_star", 0);
        proto.arbitration.rationale_star = arb.value("rationale_star", "");
        proto.arbitration.parse_flag = arb.value("parse_flag", false);
      }
    }
    repo.prototypes.push_back(std::move(proto));
  }
  std::set<std::string> ids;
  for (const auto& proto : repo.prototypes) {
    if (!ids.insert(proto.id).second) {
      fail(Errc::invariant, path.string() + ": duplicate prototype id '" + proto.id + "'");
    }
  }
  repo.version = repository_version(repo.prototypes);
  return repo;
}

Repository build_repository(const std::vector<LabeledPair>& labeled, const Gateway& gateway,
                            const ForgeEndpoints& endpoints,
                            const std::filesystem::path& out_dir, const ForgeOptions& options,
                            ForgeCounts* counts) {
  if (endpoints.proposers.size() < 2) {
    fail(Errc::config, "build_repository requires at least two proposers");
  }
  std::filesystem::create_directories(out_dir);

  ForgeCounts local;
  ForgeCounts* c = counts != nullptr ? counts : &local;
  *c = ForgeCounts{};
  c->input_pairs = labeled.size();

  std::vector<const ModelEndpoint*> proposer_ptrs;
  for (const auto& proposer : endpoints.proposers) proposer_ptrs.push_back(&proposer);

  const auto d_hard_path = out_dir / "d_hard.jsonl";
  const auto proposals_path = out_dir / "proposals.jsonl";
  const auto d_cons_path = out_dir / "d_cons.jsonl";
  const auto d_proto_path = out_dir / "d_proto.jsonl";

  // ---- Stage 1: hard-case mining -----------------------------------------
  std::string hard_input_digest =
      sha256_hex(pairs_digest(labeled) + '\x1f' + endpoints_digest({&endpoints.sub_model}));
  std::vector<HardCase> hard;
  if (options.resume && stage_current(d_hard_path, hard_input_digest)) {
    for (const auto& row : read_jsonl(d_hard_path)) {
      HardCase hc;
      hc.pair = pair_from_row_strict(row, d_hard_path.string());
      if (!hc.pair.gold.has_value()) {
        fail(Errc::invalid_input, d_hard_path.string() + ": hard case lacks a gold label");
      }
      if (row.contains("sub_prediction") && !row["sub_prediction"].is_null()) {
        hc.sub_prediction = label_from_canonical(row["sub_prediction"].get<std::string>());
      }
      hc.parse_flag = row.value("parse_flag", false);
      hard.push_back(std::move(hc));
    }
    c->hard_cases = hard.size();
    for (const auto& hc : hard) {
      if (hc.parse_flag) ++c->hard_parse_flags;
    }
  } else {
    hard = mine_hard_cases(labeled, gateway, endpoints.sub_model, options, c);
    std::vector<json> rows;
    for (const auto& hc : hard) {
      json row = pair_row(hc.pair);
      if (hc.sub_prediction.has_value()) {
        row["sub_prediction"] = std::string(to_string(*hc.sub_prediction));
      } else {
        row["sub_prediction"] = nullptr;
      }
      row["parse_flag"] = hc.parse_flag;
      rows.push_back(std::move(row));
    }
    write_jsonl(d_hard_path, rows);
    write_seal(d_hard_path, hard_input_digest, rows.size());
  }

  // ---- Stage 2: ensemble proposals ---------------------------------------
  std::string proposals_input_digest =
      sha256_hex(sha256_file_hex(d_hard_path) + '\x1f' + endpoints_digest(proposer_ptrs));
  std::vector<std::optional<ProposalSet>> proposal_sets(hard.size());
  if (options.resume && stage_current(proposals_path, proposals_input_digest)) {
    std::map<PairKey, ProposalSet> by_key;
    for (const auto& row : read_jsonl(proposals_path)) {
      ProposalSet set;
      for (const auto& entry : row.value("proposals", json::array())) {
        set.proposals.push_back(proposal_from_json(entry));
      }
      for (const auto& name : row.value("failed_proposers", json::array())) {
        set.failed_proposers.push_back(name.get<std::string>());
      }
      by_key[PairKey{row.value("query_id", ""), row.value("product_id", "")}] = std::move(set);
    }
    for (std::size_t i = 0; i < hard.size(); ++i) {
      auto it = by_key.find(key_of(hard[i].pair));
      if (it != by_key.end()) proposal_sets[i] = it->second;
    }
    c->proposal_sets = by_key.size();
  } else {
    auto results = parallel_map(hard, options.workers, [&](const HardCase& hc, std::size_t) {
      return propose(hc.pair, gateway, endpoints.proposers);
    });
    std::size_t failures = 0;
    std::vector<json> rows;
    for (std::size_t i = 0; i < hard.size(); ++i) {
      if (tolerated_failure(results[i])) {
        ++failures;
        continue;
      }
      proposal_sets[i] = std::move(results[i].value);
      json list = json::array();
      for (const auto& proposal : proposal_sets[i]->proposals) {
        list.push_back(proposal_to_json(proposal));
      }
      rows.push_back({{"query_id", hard[i].pair.query.id},
                      {"product_id", hard[i].pair.product.id},
                      {"proposals", std::move(list)},
                      {"failed_proposers", proposal_sets[i]->failed_proposers}});
      c->proposer_failures += proposal_sets[i]->failed_proposers.size();
    }
    c->proposal_sets = rows.size();
    c->stage_failures += failures;
    enforce_abort_threshold(failures, hard.size(), options.abort_fraction, "propose");
    write_jsonl(proposals_path, rows);
    write_seal(proposals_path, proposals_input_digest, rows.size());
  }

  // ---- Stage 3: arbitration ----------------------------------------------
  struct ConsCase {
    const HardCase* hc;
    ArbitrationResult arbitration;
    const ProposalSet* proposals;
  };
  std::string cons_input_digest =
      sha256_hex(sha256_file_hex(proposals_path) + '\x1f' + endpoints_digest({&endpoints.arbiter}));
  std::vector<ConsCase> cons;
  if (options.resume && stage_current(d_cons_path, cons_input_digest)) {
    std::map<PairKey, ArbitrationResult> by_key;
    for (const auto& row : read_jsonl(d_cons_path)) {
      ArbitrationResult result;
      result.judge_star = row.value("judge_star", 0);
      result.rationale_star = row.value("rationale_star", "");
      result.parse_flag = row.value("parse_flag", false);
      by_key[PairKey{row.value("query_id", ""), row.value("product_id", "")}] = std::move(result);
    }
    for (std::size_t i = 0; i < hard.size(); ++i) {
      if (!proposal_sets[i].has_value()) continue;
      auto it = by_key.find(key_of(hard[i].pair));
      if (it != by_key.end()) {
        cons.push_back(ConsCase{&hard[i], it->second, &*proposal_sets[i]});
      }
    }
    c->consensus = cons.size();
  } else {
    struct ArbJob {
      std::size_t index;
    };
    std::vector<ArbJob> jobs;
    for (std::size_t i = 0; i < hard.size(); ++i) {
      if (proposal_sets[i].has_value()) jobs.push_back(ArbJob{i});
    }
    auto results = parallel_map(jobs, options.workers, [&](const ArbJob& job, std::size_t) {
      return arbitrate(hard[job.index].pair, proposal_sets[job.index]->proposals, gateway,
                       endpoints.arbiter);
    });
    std::size_t failures = 0;
    std::vector<json> rows;
    for (std::size_t j = 0; j < jobs.size(); ++j) {
      if (tolerated_failure(results[j])) {
        ++failures;
        continue;
      }
      const ArbitrationResult& result = *results[j].value;
      if (result.parse_flag) ++c->arbiter_parse_flags;
      if (result.judge_star != 1) continue;
      std::size_t i = jobs[j].index;
      cons.push_back(ConsCase{&hard[i], result, &*proposal_sets[i]});
      rows.push_back({{"query_id", hard[i].pair.query.id},
                      {"product_id", hard[i].pair.product.id},
                      {"judge_star", result.judge_star},
                      {"rationale_star", result.rationale_star},
                      {"parse_flag", result.parse_flag}});
    }
    c->consensus = cons.size();
    c->stage_failures += failures;
    enforce_abort_threshold(failures, jobs.size(), options.abort_fraction, "arbitrate");
    write_jsonl(d_cons_path, rows);
    write_seal(d_cons_path, cons_input_digest, rows.size());
  }

  // ---- Stage 4: linguistic audit -----------------------------------------
  std::string proto_input_digest =
      sha256_hex(sha256_file_hex(d_cons_path) + '\x1f' + endpoints_digest({&endpoints.auditor}));
  Repository repo;
  if (options.resume && stage_current(d_proto_path, proto_input_digest)) {
    repo = load_repository(d_proto_path);
    c->audited = repo.prototypes.size();
  } else {
    auto results = parallel_map(cons, options.workers, [&](const ConsCase& cc, std::size_t) {
      return linguistic_audit(cc.hc->pair, cc.arbitration.rationale_star, gateway,
                              endpoints.auditor);
    });
    std::size_t failures = 0;
    for (std::size_t i = 0; i < cons.size(); ++i) {
      if (tolerated_failure(results[i])) {
        ++failures;
        continue;
      }
      if (!results[i].value->has_value()) {
        ++c->audit_rejects;
        continue;
      }
      const LabeledPair& pair = cons[i].hc->pair;
      Prototype proto;
      proto.id = prototype_id(key_of(pair));
      proto.query = pair.query;
      proto.product = pair.product;
      proto.label = *pair.gold;
      proto.rationale_final = **results[i].value;
      proto.proposals = cons[i].proposals->proposals;
      proto.arbitration = cons[i].arbitration;
      repo.prototypes.push_back(std::move(proto));
    }
    c->audited = repo.prototypes.size();
    c->stage_failures += failures;
    enforce_abort_threshold(failures, cons.size(), options.abort_fraction, "audit");
    repo.version = repository_version(repo.prototypes);
    save_repository(d_proto_path, repo);
    write_seal(d_proto_path, proto_input_digest, repo.prototypes.size(),
               json{{"version", repo.version}});
  }
  if (repo.version.empty()) repo.version = repository_version(repo.prototypes);

  if (repo.prototypes.empty()) {
    std::cerr << "[kcare warn] prototype repository is empty\n";
  }
  return repo;
}

} // namespace kcare
