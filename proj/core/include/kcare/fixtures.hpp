#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "kcare/metrics.hpp"
#include "kcare/types.hpp"

namespace kcare {

/// Label mix of the production evaluation set this project's fixtures mirror:
/// Bad 46.02%, Passable 11.83%, Perfect 42.14%.
inline constexpr std::array<double, kLabelCount> kFixtureLabelWeights = {0.4602, 0.1183,
                                                                         0.4214};

/// Generates n synthetic labeled pairs whose label proportions match
/// kFixtureLabelWeights. Class counts are allocated deterministically
/// (largest remainder), then shuffled by the seeded generator, so the mix is
/// exact up to rounding at any n while pair order still varies with seed.
std::vector<LabeledPair> synthesize_labeled_pairs(std::size_t n, std::uint64_t seed);

/// Groups synthetic pairs into ranked sessions of the given depth for
/// session-level metrics; gold labels come from the pairs.
std::vector<RankedSession> synthesize_sessions(const std::vector<LabeledPair>& pairs,
                                               std::size_t session_length);

void save_sessions(const std::filesystem::path& path,
                   const std::vector<RankedSession>& sessions);
std::vector<RankedSession> load_sessions(const std::filesystem::path& path);

} // namespace kcare
