#include "kcare/tgki.hpp"

#include <sstream>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "kcare/worker_pool.hpp"

namespace kcare {

namespace {

constexpr std::string_view kTeacherSystem =
    "Complete the task with a step-by-step reasoning trajectory.";

std::string numbered_list(const std::vector<std::string>& items) {
  std::ostringstream out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    out << (i + 1) << ". " << items[i] << "\n";
  }
  return out.str();
}

std::string product_block(const Product& product) {
  std::string block = "product: " + product.title;
  std::string attrs = render_attributes(product);
  if (!attrs.empty()) block += "\nattributes: " + attrs;
  return block;
}

} // namespace

std::string_view to_string(TgkiTask task) {
  switch (task) {
    case TgkiTask::q_und: return "q_und";
    case TgkiTask::q_pre: return "q_pre";
    case TgkiTask::p_und: return "p_und";
    case TgkiTask::p_pre: return "p_pre";
  }
  return "q_und";
}

std::optional<TgkiTask> tgki_task_from_string(std::string_view name) {
  for (TgkiTask task : kTgkiTasks) {
    if (to_string(task) == name) return task;
  }
  return std::nullopt;
}

std::string_view tgki_instruction(TgkiTask task) {
  switch (task) {
    case TgkiTask::q_und:
      return "Given query and its top-ranked products, interpret the query intent.";
    case TgkiTask::q_pre:
      return "Given a top-ranked product, predict potential search queries.";
    case TgkiTask::p_und:
      return "Given a product and its clicked queries, synthesize product profile.";
    case TgkiTask::p_pre:
      return "Given clicked queries only, predict intrinsic product properties.";
  }
  return "";
}

std::string render_tgki_prompt(TgkiTask task, const Query* query, const Product* product,
                               const QueryAnchors* query_anchors,
                               const ProductAnchors* product_anchors) {
  std::ostringstream out;
  out << tgki_instruction(task) << "\n";
  switch (task) {
    case TgkiTask::q_und: {
      if (query == nullptr) fail(Errc::missing_input, "q_und requires a query");
      if (query_anchors == nullptr || query_anchors->anchors.empty()) {
        fail(Errc::missing_input, "q_und requires non-empty query anchors");
      }
      std::vector<std::string> titles;
      for (const auto& anchor : query_anchors->anchors) titles.push_back(anchor.product_title);
      out << "query: " << query->text << "\n"
          << "top-ranked products:\n"
          << numbered_list(titles);
      break;
    }
    case TgkiTask::q_pre: {
      if (product == nullptr) fail(Errc::missing_input, "q_pre requires a product");
      out << "product: " << product->title << "\n";
      break;
    }
    case TgkiTask::p_und: {
      if (product == nullptr) fail(Errc::missing_input, "p_und requires a product");
      if (product_anchors == nullptr || product_anchors->anchors.empty()) {
        fail(Errc::missing_input, "p_und requires non-empty product anchors");
      }
      std::vector<std::string> queries;
      for (const auto& anchor : product_anchors->anchors) queries.push_back(anchor.query_text);
      out << product_block(*product) << "\n"
          << "clicked queries:\n"
          << numbered_list(queries);
      break;
    }
    case TgkiTask::p_pre: {
      if (product_anchors == nullptr || product_anchors->anchors.empty()) {
        fail(Errc::missing_input, "p_pre requires non-empty product anchors");
      }
      std::vector<std::string> queries;
      for (const auto& anchor : product_anchors->anchors) queries.push_back(anchor.query_text);
      out << "clicked queries:\n" << numbered_list(queries);
      break;
    }
  }
  return out.str();
}

std::optional<std::string> render_tgki_prompt_for(TgkiTask task, const AnchoredPair& pair) {
  const QueryAnchors* qa =
      pair.query_anchors.has_value() ? &pair.query_anchors.value() : nullptr;
  const ProductAnchors* pa =
      pair.product_anchors.has_value() ? &pair.product_anchors.value() : nullptr;
  switch (task) {
    case TgkiTask::q_und:
      if (qa == nullptr || qa->anchors.empty()) return std::nullopt;
      break;
    case TgkiTask::q_pre:
      break;  // pair always carries a product
    case TgkiTask::p_und:
    case TgkiTask::p_pre:
      if (pa == nullptr || pa->anchors.empty()) return std::nullopt;
      break;
  }
  return render_tgki_prompt(task, &pair.pair.query, &pair.pair.product, qa, pa);
}

TgkiDataset build_tgki_dataset(TgkiTask task, const std::vector<AnchoredPair>& pairs,
                               const Gateway& gateway, const ModelEndpoint& teacher,
                               std::size_t limit, int workers, double abort_fraction) {
  if (teacher.role != ModelRole::teacher) {
    fail(Errc::config, "build_tgki_dataset requires an endpoint with role teacher");
  }
  if (limit < 1) fail(Errc::config, "build_tgki_dataset limit must be >= 1");

  struct Job {
    const AnchoredPair* pair;
    std::string prompt;
  };
  TgkiDataset dataset;
  std::vector<Job> jobs;
  for (const auto& pair : pairs) {
    auto prompt = render_tgki_prompt_for(task, pair);
    if (!prompt.has_value()) continue;
    ++dataset.counts.eligible;
    if (jobs.size() < limit) jobs.push_back(Job{&pair, std::move(*prompt)});
  }
  dataset.counts.requested = jobs.size();

  auto results = parallel_map(jobs, workers, [&](const Job& job, std::size_t) {
    return gateway.complete(teacher, kTeacherSystem, job.prompt).text;
  });

  for (std::size_t i = 0; i < jobs.size(); ++i) {
    if (tolerated_failure(results[i])) {
      ++dataset.counts.failed;
      continue;
    }
    if (trimmed(*results[i].value).empty()) {
      ++dataset.counts.dropped_empty;
      continue;
    }
    TgkiRecord record;
    record.task = task;
    record.input_prompt = jobs[i].prompt;
    record.target = *results[i].value;
    record.query_id = jobs[i].pair->pair.query.id;
    record.product_id = jobs[i].pair->pair.product.id;
    record.teacher = teacher.name;
    dataset.records.push_back(std::move(record));
  }
  dataset.counts.kept = dataset.records.size();
  enforce_abort_threshold(dataset.counts.failed, dataset.counts.requested, abort_fraction,
                          "tgki-" + std::string(to_string(task)));
  return dataset;
}

void save_tgki_dataset(const std::filesystem::path& path,
                       const std::vector<TgkiRecord>& records) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& record : records) {
    rows.push_back({{"task", std::string(to_string(record.task))},
                    {"input", record.input_prompt},
                    {"target", record.target},
                    {"provenance",
                     {{"query_id", record.query_id},
                      {"product_id", record.product_id},
                      {"teacher", record.teacher}}}});
  }
  write_jsonl(path, rows);
}

std::vector<TgkiRecord> load_tgki_dataset(const std::filesystem::path& path) {
  std::vector<TgkiRecord> records;
  for (const auto& row : read_jsonl(path)) {
    TgkiRecord record;
    auto task = tgki_task_from_string(row.value("task", ""));
    if (!task.has_value()) {
      fail(Errc::invalid_input,
           path.string() + ": unknown task '" + row.value("task", "") + "'");
    }
    record.task = *task;
    record.input_prompt = row.value("input", "");
    record.target = row.value("target", "");
    if (row.contains("provenance")) {
      const auto& prov = row["provenance"];
      record.query_id = prov.value("query_id", "");
      record.product_id = prov.value("product_id", "");
      record.teacher = prov.value("teacher", "");
    }
    records.push_back(std::move(record));
  }
  return records;
}

std::size_t write_relevance_dataset(const std::filesystem::path& path,
                                    const std::vector<LabeledPair>& pairs) {
  std::vector<json> rows;
  rows.reserve(pairs.size());
  for (const auto& pair : pairs) {
    if (!pair.gold.has_value()) {
      fail(Errc::invariant, "relevance dataset requires gold labels; pair (" +
                                pair.query.id + ", " + pair.product.id + ") has none");
    }
    std::string input = "Assess the relevance of the product to the query.\nquery: " +
                        pair.query.text + "\n" + "product: " + pair.product.title;
    std::string attrs = render_attributes(pair.product);
    if (!attrs.empty()) input += "\nattributes: " + attrs;
    rows.push_back({{"task", "relevance"},
                    {"input", input},
                    {"target", std::string(to_string(*pair.gold))},
                    {"provenance",
                     {{"query_id", pair.query.id}, {"product_id", pair.product.id}}}});
  }
  write_jsonl(path, rows);
  return rows.size();
}

namespace {

std::size_t count_jsonl_records(const std::filesystem::path& path) {
  return read_jsonl(path).size();
}

} // namespace

TrainingSchedule emit_training_schedule(const std::array<std::filesystem::path, 4>& tgki_paths,
                                        const std::filesystem::path& relevance_path,
                                        const std::filesystem::path& manifest_path) {
  for (std::size_t i = 0; i < tgki_paths.size(); ++i) {
    for (std::size_t j = i + 1; j < tgki_paths.size(); ++j) {
      if (tgki_paths[i] == tgki_paths[j]) {
        fail(Errc::invariant, "duplicated task dataset path: " + tgki_paths[i].string());
      }
    }
  }
  auto require_nonempty = [](const std::filesystem::path& path) {
    std::error_code ec;
    auto size = std::filesystem::file_size(path, ec);
    if (ec || size == 0) {
      fail(Errc::io, "schedule dataset missing or empty: " + path.string());
    }
  };
  for (const auto& path : tgki_paths) require_nonempty(path);
  require_nonempty(relevance_path);

  TrainingSchedule schedule;
  SchedulePhase joint;
  joint.name = "tgki-joint";
  joint.epochs = 1;
  for (const auto& path : tgki_paths) {
    joint.datasets.emplace_back(path.string(), count_jsonl_records(path));
  }
  SchedulePhase relevance;
  relevance.name = "relevance";
  relevance.epochs = 1;
  relevance.datasets.emplace_back(relevance_path.string(), count_jsonl_records(relevance_path));
  schedule.phases.push_back(std::move(joint));
  schedule.phases.push_back(std::move(relevance));

  json doc = {{"phases", json::array()}};
  for (const auto& phase : schedule.phases) {
    json datasets = json::array();
    for (const auto& [path, records] : phase.datasets) {
      datasets.push_back({{"path", path}, {"records", records}});
    }
    doc["phases"].push_back(
        {{"name", phase.name}, {"datasets", std::move(datasets)}, {"epochs", phase.epochs}});
  }
  write_json_file(manifest_path, doc);
  return schedule;
}

TrainingSchedule load_training_schedule(const std::filesystem::path& path) {
  json doc = read_json_file(path);
  if (!doc.contains("phases") || !doc["phases"].is_array()) {
    fail(Errc::invalid_input, path.string() + ": schedule manifest lacks phases");
  }
  TrainingSchedule schedule;
  for (const auto& entry : doc["phases"]) {
    SchedulePhase phase;
    phase.name = entry.value("name", "");
    phase.epochs = entry.value("epochs", 1);
    if (entry.contains("datasets")) {
      for (const auto& dataset : entry["datasets"]) {
        phase.datasets.emplace_back(dataset.value("path", ""),
                                    dataset.value("records", std::size_t{0}));
      }
    }
    schedule.phases.push_back(std::move(phase));
  }
  if (schedule.phases.size() != 2 || schedule.phases[0].name != "tgki-joint" ||
      schedule.phases[1].name != "relevance" || schedule.phases[0].datasets.size() != 4 ||
      schedule.phases[1].datasets.size() != 1) {
    fail(Errc::invariant, path.string() + ": schedule must be two phases, four task "
                          "datasets then one relevance dataset");
  }
  return schedule;
}

} // namespace kcare
