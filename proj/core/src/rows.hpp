#pragma once

// Internal JSON row builders shared by dataset and stage files; not installed.

#include <string>
#include <vector>

#include "jsonl.hpp"
#include "kcare/gateway.hpp"
#include "kcare/types.hpp"

namespace kcare {

json pair_row(const LabeledPair& pair);

/// Lenient parse: appends one message per problem, returns best effort.
LabeledPair pair_from_row(const json& record, std::size_t line,
                          std::vector<std::string>& problems);

/// Strict parse: throws InvalidInput on the first problem.
LabeledPair pair_from_row_strict(const json& record, const std::string& where);

json endpoint_row(const ModelEndpoint& endpoint);
ModelEndpoint endpoint_from_row(const json& record, const std::string& where,
                                std::vector<std::string>& problems);

/// Digest binding stage outputs to the endpoint configs that produced them.
std::string endpoints_digest(const std::vector<const ModelEndpoint*>& endpoints);

} // namespace kcare
