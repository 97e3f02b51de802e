#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kcare/anchoring.hpp"
#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare {

/// The four auxiliary knowledge-ingestion tasks. q_* tasks teach query-side
/// anchor use, p_* tasks product-side; *_und tasks interpret given context,
/// *_pre tasks predict the missing side.
enum class TgkiTask { q_und, q_pre, p_und, p_pre };

inline constexpr std::array<TgkiTask, 4> kTgkiTasks = {
    TgkiTask::q_und, TgkiTask::q_pre, TgkiTask::p_und, TgkiTask::p_pre};

std::string_view to_string(TgkiTask task);
std::optional<TgkiTask> tgki_task_from_string(std::string_view name);

/// Fixed instruction line heading each task's prompt.
std::string_view tgki_instruction(TgkiTask task);

/// Deterministic template instantiation. Operand requirements: q_und needs
/// query + query anchors; q_pre needs a product; p_und needs product +
/// product anchors; p_pre needs product anchors only. Anchors render as a
/// numbered list in stored order. Throws MissingInput when a required
/// operand is absent or the required anchor list is empty.
std::string render_tgki_prompt(TgkiTask task, const Query* query, const Product* product,
                               const QueryAnchors* query_anchors,
                               const ProductAnchors* product_anchors);

/// Renders the task prompt for an anchored pair; nullopt when the pair lacks
/// the task's operands (the pair is ineligible, not an error).
std::optional<std::string> render_tgki_prompt_for(TgkiTask task, const AnchoredPair& pair);

struct TgkiRecord {
  TgkiTask task = TgkiTask::q_und;
  std::string input_prompt;
  std::string target;  // teacher completion, stored verbatim
  // Provenance: originating pair plus the teacher that wrote the target.
  std::string query_id;
  std::string product_id;
  std::string teacher;
};

struct TgkiBuildCounts {
  std::size_t eligible = 0;       // pairs whose prompt rendered
  std::size_t requested = 0;      // teacher calls issued (= min(eligible, limit))
  std::size_t kept = 0;           // records with non-empty targets
  std::size_t dropped_empty = 0;  // teacher returned only whitespace
  std::size_t failed = 0;         // transport failures below the abort threshold
};

struct TgkiDataset {
  std::vector<TgkiRecord> records;
  TgkiBuildCounts counts;
};

/// Synthesizes one task's dataset: renders prompts for up to `limit` eligible
/// pairs (input order), requests one teacher completion each, and keeps
/// non-empty targets verbatim. Transport failures are tolerated until their
/// fraction exceeds abort_fraction, then the whole stage throws Transport.
TgkiDataset build_tgki_dataset(TgkiTask task, const std::vector<AnchoredPair>& pairs,
                               const Gateway& gateway, const ModelEndpoint& teacher,
                               std::size_t limit, int workers = 4,
                               double abort_fraction = 0.5);

void save_tgki_dataset(const std::filesystem::path& path,
                       const std::vector<TgkiRecord>& records);
std::vector<TgkiRecord> load_tgki_dataset(const std::filesystem::path& path);

/// Core relevance fine-tuning set: one record per labeled pair, target = the
/// gold label. Returns the record count. Every pair must carry a gold label.
std::size_t write_relevance_dataset(const std::filesystem::path& path,
                                    const std::vector<LabeledPair>& pairs);

struct SchedulePhase {
  std::string name;
  std::vector<std::pair<std::string, std::size_t>> datasets;  // (path, record count)
  int epochs = 1;
};

/// Two-phase decoupled schedule: the four task datasets trained jointly,
/// then the relevance dataset alone.
struct TrainingSchedule {
  std::vector<SchedulePhase> phases;
};

/// Writes the schedule manifest. All five paths must exist and be non-empty
/// (IoError naming the offender); a duplicated task path is an Invariant
/// violation. Epochs default to 1 per phase.
TrainingSchedule emit_training_schedule(const std::array<std::filesystem::path, 4>& tgki_paths,
                                        const std::filesystem::path& relevance_path,
                                        const std::filesystem::path& manifest_path);

/// Loads and structurally validates a schedule manifest (exactly two phases,
/// four datasets then one).
TrainingSchedule load_training_schedule(const std::filesystem::path& path);

} // namespace kcare
