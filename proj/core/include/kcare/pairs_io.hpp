#pragma once

#include <filesystem>
#include <vector>

#include "kcare/types.hpp"

namespace kcare {

enum class LabelPolicy {
  any,      // label may be present or null
  require,  // every record must carry a label
  forbid,   // every record must have label null/absent
};

/// Loads the labeled-pair JSONL file. Enforces per-pair invariants plus
/// dataset-level id consistency (same id => same text/title). Violations are
/// reported together in a single InvalidInput error.
std::vector<LabeledPair> load_labeled_pairs(const std::filesystem::path& path,
                                            LabelPolicy policy = LabelPolicy::any);

void save_labeled_pairs(const std::filesystem::path& path,
                        const std::vector<LabeledPair>& pairs);

} // namespace kcare
