#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare {

/// One ensemble member's verdict on a human label: judge=1 endorses the
/// label, judge=0 disputes it. parse_flag marks responses that yielded no
/// usable (judge, rationale) pair and were conservatively mapped to judge=0.
struct Proposal {
  std::string proposer;
  int judge = 0;
  std::string rationale;
  bool parse_flag = false;
};

struct ProposalSet {
  std::vector<Proposal> proposals;
  std::vector<std::string> failed_proposers;
};

struct ArbitrationResult {
  int judge_star = 0;
  std::string rationale_star;
  bool parse_flag = false;
};

/// A mined hard case: the sub-model's prediction disagreed with gold, or
/// could not be parsed at all (parse_flag).
struct HardCase {
  LabeledPair pair;
  std::optional<RelevanceLabel> sub_prediction;
  bool parse_flag = false;
};

/// An audited exemplar: pair, gold label, polished rationale, and the full
/// synthesis trace that produced it.
struct Prototype {
  std::string id;
  Query query;
  Product product;
  RelevanceLabel label = RelevanceLabel::bad;
  std::string rationale_final;
  // Trace of the run that admitted this prototype.
  std::vector<Proposal> proposals;
  ArbitrationResult arbitration;
};

struct Repository {
  std::vector<Prototype> prototypes;
  std::string version;  // content hash; identical content => identical version
};

/// Stable opaque id for a prototype: prefix of the pair-key digest.
std::string prototype_id(const PairKey& key);

struct ForgeEndpoints {
  ModelEndpoint sub_model;
  std::vector<ModelEndpoint> proposers;  // >= 2
  ModelEndpoint arbiter;
  ModelEndpoint auditor;
};

/// Builds the (system, user) prompt asking a model to grade a bare pair.
/// Shared by hard-case mining; injectable so callers can substitute a
/// context-bearing prompt.
using ProbePromptBuilder =
    std::function<std::pair<std::string, std::string>(const LabeledPair&)>;

std::pair<std::string, std::string> relevance_probe_prompt(const LabeledPair& pair);

struct ForgeOptions {
  int workers = 4;
  double abort_fraction = 0.5;
  bool resume = false;  // skip stages whose sealed outputs match current inputs
  ProbePromptBuilder probe_prompt;  // defaults to relevance_probe_prompt
};

struct ForgeCounts {
  std::size_t input_pairs = 0;
  std::size_t hard_cases = 0;
  std::size_t hard_parse_flags = 0;
  std::size_t proposal_sets = 0;
  std::size_t proposer_failures = 0;
  std::size_t consensus = 0;
  std::size_t arbiter_parse_flags = 0;
  std::size_t audited = 0;
  std::size_t audit_rejects = 0;
  std::size_t stage_failures = 0;  // transport failures across all stages
};

/// Stage 1 — hard-case mining: grades every gold-labeled pair with the
/// sub-optimal model and keeps exactly the disagreements; unparseable
/// predictions count as disagreement and are flagged.
std::vector<HardCase> mine_hard_cases(const std::vector<LabeledPair>& labeled,
                                      const Gateway& gateway, const ModelEndpoint& sub_model,
                                      const ForgeOptions& options, ForgeCounts* counts = nullptr);

/// Stage 2 — ensemble proposals: each proposer verifies the human label of
/// one pair. A proposer transport failure yields a recorded gap, not an
/// abort; Transport is thrown only when every proposer fails.
ProposalSet propose(const LabeledPair& pair, const Gateway& gateway,
                    const std::vector<ModelEndpoint>& proposers);

/// Stage 3 — arbitration over the collected proposals. Unparseable arbiter
/// output maps to judge_star=0 with parse_flag (ambiguity admits nothing).
ArbitrationResult arbitrate(const LabeledPair& pair, const std::vector<Proposal>& proposals,
                            const Gateway& gateway, const ModelEndpoint& arbiter);

/// Stage 4 — linguistic audit: returns the polished rationale, or nullopt
/// when the auditor replies REJECT (or unusably).
std::optional<std::string> linguistic_audit(const LabeledPair& pair,
                                            const std::string& rationale_star,
                                            const Gateway& gateway,
                                            const ModelEndpoint& auditor);

/// Runs the four stages in order, materializing d_hard.jsonl,
/// proposals.jsonl, d_cons.jsonl, and d_proto.jsonl under out_dir. Each
/// stage's file is sealed (content digest sidecar) before the next starts;
/// with options.resume, stages whose seals still match their inputs are
/// reloaded instead of recomputed.
Repository build_repository(const std::vector<LabeledPair>& labeled, const Gateway& gateway,
                            const ForgeEndpoints& endpoints,
                            const std::filesystem::path& out_dir, const ForgeOptions& options,
                            ForgeCounts* counts = nullptr);

/// Recomputes the repository version from prototype content.
std::string repository_version(const std::vector<Prototype>& prototypes);

void save_repository(const std::filesystem::path& path, const Repository& repo);
Repository load_repository(const std::filesystem::path& path);

} // namespace kcare
