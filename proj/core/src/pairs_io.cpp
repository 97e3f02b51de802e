#include "kcare/pairs_io.hpp"

#include <map>
#include <sstream>

#include "jsonl.hpp"
#include "kcare/errors.hpp"
#include "rows.hpp"

namespace kcare {

std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& path,
                                            LabelPolicy policy) {
  auto records = read_jsonl(path);
  std::vector<LabeledPair> pairs;
  pairs.reserve(records.size());
  std::vector<std::string> problems;
  std::map<std::string, std::string> query_text_by_id;
  std::map<std::string, std::string> product_title_by_id;

  for (std::size_t i = 0; i < records.size(); ++i) {
    LabeledPair pair = pair_from_row(records[i], i + 1, problems);
    for (const auto& violation : validate_pair(pair)) {
      problems.push_back("record " + std::to_string(i + 1) + ": " + violation);
    }
    if (policy == LabelPolicy::require && !pair.gold.has_value()) {
      problems.push_back("record " + std::to_string(i + 1) + ": label required but absent");
    }
    if (policy == LabelPolicy::forbid && pair.gold.has_value()) {
      problems.push_back("record " + std::to_string(i + 1) + ": label present but forbidden");
    }
    auto [qit, qnew] = query_text_by_id.emplace(pair.query.id, pair.query.text);
    if (!qnew && qit->second != pair.query.text) {
      problems.push_back("record " + std::to_string(i + 1) + ": query_id '" + pair.query.id +
                         "' reused with different text");
    }
    auto [pit, pnew] = product_title_by_id.emplace(pair.product.id, pair.product.title);
    if (!pnew && pit->second != pair.product.title) {
      problems.push_back("record " + std::to_string(i + 1) + ": product_id '" +
                         pair.product.id + "' reused with different title");
    }
    pairs.push_back(std::move(pair));
  }

  if (!problems.empty()) {
    std::ostringstream message;
    message << path.string() << ": " << problems.size() << " violation(s)";
    for (const auto& problem : problems) {
      message << "\n  - " << problem;
    }
    fail(Errc::invalid_input, message.str());
  }
  return pairs;
}

void save_labeled_pairs(const std::filesystem::path& path,
                        const std::vector<LabeledPair>& pairs) {
  std::vector<json> records;
  records.reserve(pairs.size());
  for (const auto& pair : pairs) {
    records.push_back(pair_row(pair));
  }
  write_jsonl(path, records);
}

} // namespace kcare
