// kcare — pipeline driver: one subcommand per stage, a shared config
// document, and a run manifest per output directory.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "kcare/errors.hpp"
#include "kcare/pipeline.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 success, 1 validation (bad flags, config, or input content),
// 2 stage failure (missing dependency, transport, io, broken invariant).
int exit_code_for(kcare::Errc code) {
  switch (code) {
    case kcare::Errc::config:
    case kcare::Errc::invalid_input:
    case kcare::Errc::missing_input:
    case kcare::Errc::empty_input:
    case kcare::Errc::key_mismatch:
    case kcare::Errc::length_mismatch:
      return 1;
    default:
      return 2;
  }
}

void print_result(const kcare::StageResult& result) {
  std::cout << result.stage << ": ok";
  for (const auto& [name, value] : result.counters) {
    std::cout << ' ' << name << '=' << value;
  }
  std::cout << '\n';
  for (const auto& [path, sha] : result.outputs) {
    std::cout << "  wrote " << path << " (" << sha.substr(0, 12) << ")\n";
  }
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"k-care search-relevance pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::uint64_t seed_value = 0;
  int workers_value = 0;
  app.add_option("--config", config_path, "pipeline config (JSON)")->required();
  auto* seed_flag = app.add_option("--seed", seed_value, "override the config seed");
  auto* workers_flag =
      app.add_option("--workers", workers_value, "override the config worker count");

  std::string pairs, gold, pred, sessions, anchors_dir, repo, index, out, run_dir;
  std::string ranklog, clicklog, task = "all";
  int depth = 0;
  bool resume = false;

  auto* anchor = app.add_subcommand("anchor", "acquire query and product anchors");
  anchor->add_option("--pairs", pairs, "pair JSONL")->required();
  anchor->add_option("--ranklog", ranklog, "ranked-list log JSONL (overrides config)");
  anchor->add_option("--clicklog", clicklog, "click log JSONL (overrides config)");
  anchor->add_option("--out", out, "run directory")->required();

  auto* tgki = app.add_subcommand("tgki-gen", "synthesize auxiliary task datasets");
  tgki->add_option("--pairs", pairs, "labeled pair JSONL")->required();
  tgki->add_option("--anchors", anchors_dir, "anchor directory")->required();
  tgki->add_option("--task", task, "task selection")->check(CLI::IsMember({"all"}));
  tgki->add_option("--out", out, "run directory")->required();

  auto* proto = app.add_subcommand("proto-build", "forge the prototype repository");
  proto->add_option("--pairs", pairs, "labeled pair JSONL")->required();
  proto->add_option("--out", out, "run directory")->required();
  proto->add_flag("--resume", resume, "reuse sealed stage files that still match");

  auto* index_cmd = app.add_subcommand("index", "embed the repository into an index");
  index_cmd->add_option("--repo", repo, "prototype repository JSONL")->required();
  index_cmd->add_option("--out", out, "index file")->required();
  index_cmd->add_option("--run", run_dir, "run directory (default: the index file's parent)");

  auto* judge = app.add_subcommand("judge", "judge pairs with grounded prompts");
  judge->add_option("--pairs", pairs, "pair JSONL")->required();
  judge->add_option("--anchors", anchors_dir, "anchor directory")->required();
  judge->add_option("--index", index, "prototype index file")->required();
  judge->add_option("--repo", repo, "prototype repository JSONL")->required();
  judge->add_option("--out", out, "judgment file")->required();
  judge->add_option("--run", run_dir, "run directory (default: the output file's parent)");

  auto* distill = app.add_subcommand("distill", "label unlabeled pairs for training");
  distill->add_option("--pairs", pairs, "unlabeled pair JSONL")->required();
  distill->add_option("--anchors", anchors_dir, "anchor directory")->required();
  distill->add_option("--index", index, "prototype index file")->required();
  distill->add_option("--repo", repo, "prototype repository JSONL")->required();
  distill->add_option("--out", out, "label file")->required();
  distill->add_option("--run", run_dir, "run directory (default: the output file's parent)");

  auto* eval = app.add_subcommand("eval", "score judgments against gold labels");
  eval->add_option("--gold", gold, "gold pair JSONL")->required();
  eval->add_option("--pred", pred, "judgment JSONL")->required();
  eval->add_option("--sessions", sessions, "ranked session JSONL (optional)");
  eval->add_option("--depth", depth, "session scan depth (overrides config)")
      ->check(CLI::PositiveNumber);
  eval->add_option("--out", out, "report file")->required();
  eval->add_option("--run", run_dir, "run directory (default: the report file's parent)");

  CLI11_PARSE(app, argc, argv);
  CLI::App* sub = app.get_subcommands().front();

  std::optional<std::uint64_t> seed_override;
  if (seed_flag->count() > 0) seed_override = seed_value;
  std::optional<int> workers_override;
  if (workers_flag->count() > 0) workers_override = workers_value;

  std::vector<std::string> errors;
  auto config = kcare::validate_config(config_path, errors, seed_override, workers_override);
  if (!config.has_value()) {
    std::cerr << config_path << ": invalid config\n";
    for (const auto& error : errors) std::cerr << "  - " << error << '\n';
    return 1;
  }

  kcare::StageIo io;
  io.resume = resume;
  std::string stage = sub->get_name();
  bool out_is_dir = sub == anchor || sub == tgki || sub == proto;
  if (out_is_dir) {
    io.out_dir = out;
  } else {
    io.out_file = out;
    io.out_dir = run_dir.empty() ? fs::path(out).parent_path() : fs::path(run_dir);
    if (io.out_dir.empty()) io.out_dir = ".";
  }
  io.pairs = pairs;
  io.anchors_dir = anchors_dir;
  io.repo = repo;
  io.index = index;
  if (sub == eval) {
    io.pairs.clear();
    io.gold = gold;
    io.judgments = pred;
    io.sessions = sessions;
    if (depth > 0) config->eval_depth = depth;
  }
  if (sub == anchor) {
    if (!ranklog.empty()) {
      config->anchoring.ranked_source.kind = kcare::RankedListSource::Kind::log_file;
      config->anchoring.ranked_source.address = ranklog;
    }
    if (!clicklog.empty()) config->anchoring.click_log = clicklog;
  }

  try {
    kcare::Gateway gateway;
    kcare::StageResult result = kcare::run_stage(stage, *config, io, gateway);
    print_result(result);
  } catch (const kcare::Error& e) {
    std::cerr << stage << ": " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << stage << ": " << e.what() << '\n';
    return 2;
  }
  return 0;
}
