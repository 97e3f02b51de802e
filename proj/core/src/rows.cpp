#include "rows.hpp"

#include "kcare/errors.hpp"
#include "kcare/hash.hpp"

namespace kcare {

json pair_row(const LabeledPair& pair) {
  json attrs = json::array();
  for (const auto& [name, value] : pair.product.attributes) {
    attrs.push_back(json::array({name, value}));
  }
  json record = {
      {"query_id", pair.query.id},
      {"query_text", pair.query.text},
      {"product_id", pair.product.id},
      {"product_title", pair.product.title},
      {"attributes", std::move(attrs)},
  };
  if (pair.gold.has_value()) {
    record["label"] = std::string(to_string(*pair.gold));
  } else {
    record["label"] = nullptr;
  }
  return record;
}

LabeledPair pair_from_row(const json& record, std::size_t line,
                          std::vector<std::string>& problems) {
  LabeledPair pair;
  auto need_string = [&](const char* key) -> std::string {
    if (!record.contains(key) || !record[key].is_string()) {
      problems.push_back("record " + std::to_string(line) + ": missing string field '" +
                         key + "'");
      return {};
    }
    return record[key].get<std::string>();
  };
  pair.query.id = need_string("query_id");
  pair.query.text = need_string("query_text");
  pair.product.id = need_string("product_id");
  pair.product.title = need_string("product_title");
  if (record.contains("attributes")) {
    if (!record["attributes"].is_array()) {
      problems.push_back("record " + std::to_string(line) + ": attributes must be an array");
    } else {
      for (const auto& entry : record["attributes"]) {
        if (!entry.is_array() || entry.size() != 2 || !entry[0].is_string() ||
            !entry[1].is_string()) {
          problems.push_back("record " + std::to_string(line) +
                             ": attribute entries must be [name, value] string pairs");
          continue;
        }
        pair.product.attributes.emplace_back(entry[0].get<std::string>(),
                                             entry[1].get<std::string>());
      }
    }
  }
  if (record.contains("label") && !record["label"].is_null()) {
    if (!record["label"].is_string()) {
      problems.push_back("record " + std::to_string(line) + ": label must be a string or null");
    } else {
      auto label = label_from_canonical(record["label"].get<std::string>());
      if (!label.has_value()) {
        problems.push_back("record " + std::to_string(line) + ": unknown label '" +
                           record["label"].get<std::string>() + "'");
      } else {
        pair.gold = label;
      }
    }
  }
  return pair;
}

LabeledPair pair_from_row_strict(const json& record, const std::string& where) {
  std::vector<std::string> problems;
  LabeledPair pair = pair_from_row(record, 0, problems);
  if (!problems.empty()) {
    fail(Errc::invalid_input, where + ": " + problems.front());
  }
  return pair;
}

json endpoint_row(const ModelEndpoint& endpoint) {
  json script = json::array();
  for (const auto& rule : endpoint.script) {
    script.push_back({{"match", rule.match}, {"output", rule.output}});
  }
  return {
      {"role", std::string(to_string(endpoint.role))},
      {"name", endpoint.name},
      {"transport", endpoint.transport == TransportKind::mock ? "mock" : "remote"},
      {"address", endpoint.address},
      {"mock_seed", endpoint.mock_seed},
      {"temperature", endpoint.temperature},
      {"max_output_tokens", endpoint.max_output_tokens},
      {"embedding_dim", endpoint.embedding_dim},
      {"script", std::move(script)},
      {"retry_attempts", endpoint.retry_attempts},
      {"retry_backoff_ms", endpoint.retry_backoff_ms},
      {"timeout_ms", endpoint.timeout_ms},
      {"max_in_flight", endpoint.max_in_flight},
  };
}

ModelEndpoint endpoint_from_row(const json& record, const std::string& where,
                                std::vector<std::string>& problems) {
  ModelEndpoint endpoint;
  if (!record.is_object()) {
    problems.push_back(where + ": endpoint must be an object");
    return endpoint;
  }
  std::string role_name = record.value("role", "");
  auto role = role_from_string(role_name);
  if (!role.has_value()) {
    problems.push_back(where + ": unknown role '" + role_name + "'");
  } else {
    endpoint.role = *role;
  }
  endpoint.name = record.value("name", "");
  if (endpoint.name.empty()) {
    problems.push_back(where + ": endpoint name must be non-empty");
  }
  std::string transport = record.value("transport", "mock");
  if (transport == "mock") {
    endpoint.transport = TransportKind::mock;
  } else if (transport == "remote") {
    endpoint.transport = TransportKind::remote;
  } else {
    problems.push_back(where + ": unknown transport '" + transport + "'");
  }
  endpoint.address = record.value("address", "");
  if (endpoint.transport == TransportKind::remote && endpoint.address.empty()) {
    problems.push_back(where + ": remote endpoint needs an address");
  }
  endpoint.mock_seed = record.value("mock_seed", std::uint64_t{0});
  endpoint.temperature = record.value("temperature", 0.0);
  endpoint.max_output_tokens = record.value("max_output_tokens", 1024);
  endpoint.embedding_dim = record.value("embedding_dim", 64);
  if (endpoint.embedding_dim < 1) {
    problems.push_back(where + ": embedding_dim must be >= 1");
  }
  if (record.contains("script")) {
    if (!record["script"].is_array()) {
      problems.push_back(where + ": script must be an array");
    } else {
      bool fall_through = false;
      for (const auto& rule : record["script"]) {
        ScriptRule parsed{rule.value("match", ""), rule.value("output", "")};
        if (parsed.match.empty()) fall_through = true;
        endpoint.script.push_back(std::move(parsed));
      }
      if (!endpoint.script.empty() && !fall_through) {
        problems.push_back(where + ": script lacks the empty-pattern fall-through rule");
      }
    }
  }
  endpoint.retry_attempts = record.value("retry_attempts", 3);
  endpoint.retry_backoff_ms = record.value("retry_backoff_ms", 500);
  endpoint.timeout_ms = record.value("timeout_ms", 30000);
  endpoint.max_in_flight = record.value("max_in_flight", 0);
  return endpoint;
}

std::string endpoints_digest(const std::vector<const ModelEndpoint*>& endpoints) {
  json rows = json::array();
  for (const ModelEndpoint* endpoint : endpoints) {
    rows.push_back(endpoint_row(*endpoint));
  }
  return sha256_hex(canonical_dump(rows));
}

} // namespace kcare
