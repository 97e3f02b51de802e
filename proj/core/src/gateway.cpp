#include "kcare/gateway.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <semaphore>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "kcare/errors.hpp"
#include "kcare/hash.hpp"

namespace kcare {

namespace {

using nlohmann::json;

constexpr std::ptrdiff_t kMaxInFlightCeiling = 4096;

std::string role_name(ModelRole role) { return std::string(to_string(role)); }

std::string mock_base_digest(const ModelEndpoint& endpoint, std::string_view system,
                             std::string_view user) {
  std::string input;
  input.reserve(system.size() + user.size() + 1);
  input.append(system);
  input.push_back('\x1e');
  input.append(user);
  std::string material = "kcare-mock\x1f" + std::to_string(endpoint.mock_seed) + "\x1f" +
                         role_name(endpoint.role) + "\x1f" + sha256_hex(input);
  return sha256_hex(material);
}

bool has_fall_through(const std::vector<ScriptRule>& rules) {
  for (const auto& rule : rules) {
    if (rule.match.empty()) return true;
  }
  return false;
}

std::string scripted_output(const ModelEndpoint& endpoint, std::string_view system,
                            std::string_view user) {
  if (!has_fall_through(endpoint.script)) {
    fail(Errc::config, "scripted mock '" + endpoint.name + "' has no fall-through rule");
  }
  std::string haystack;
  haystack.reserve(system.size() + user.size() + 1);
  haystack.append(system);
  haystack.push_back('\n');
  haystack.append(user);
  for (const auto& rule : endpoint.script) {
    if (rule.match.empty() || haystack.find(rule.match) != std::string::npos) {
      return rule.output;
    }
  }
  return {};
}

std::string default_mock_output(const ModelEndpoint& endpoint, const std::string& digest) {
  std::uint64_t h = hash64(digest);
  std::string tag = digest.substr(0, 8);
  switch (endpoint.role) {
    case ModelRole::sub_optimal:
    case ModelRole::judge: {
      static constexpr const char* kNames[] = {"Bad", "Passable", "Perfect"};
      return "Synthetic assessment " + tag + " of the pair.\nlabel: " +
             kNames[h % 3];
    }
    case ModelRole::proposer:
    case ModelRole::arbiter: {
      return "judge: " + std::string(h % 2 == 0 ? "1" : "0") +
             "\nrationale: synthetic cross-check " + tag + " of the annotated grade.";
    }
    case ModelRole::quality_auditor:
      return "Polished rationale " + tag + ": the verdict follows from the cited evidence.";
    case ModelRole::teacher:
      return "Trajectory " + tag +
             ": read the context items, identify the shared entity, and state the conclusion.";
    case ModelRole::p2q: {
      std::string out;
      for (int i = 1; i <= 6; ++i) {
        out += "intent query " + tag + "-" + std::to_string(i);
        if (i < 6) out += "\n";
      }
      return out;
    }
    case ModelRole::embedder:
      break;
  }
  fail(Errc::invalid_input, "no completion behavior for role " + role_name(endpoint.role));
}

double unit_interval(std::uint64_t u) {
  return static_cast<double>(u >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
}

EmbeddingVector mock_embedding(const ModelEndpoint& endpoint, std::string_view text) {
  if (endpoint.embedding_dim < 1) {
    fail(Errc::config, "embedder '" + endpoint.name + "' has non-positive dim");
  }
  std::string base = mock_base_digest(endpoint, "", text);
  EmbeddingVector vec;
  vec.values.reserve(static_cast<std::size_t>(endpoint.embedding_dim));
  std::size_t block_index = 0;
  while (vec.values.size() < static_cast<std::size_t>(endpoint.embedding_dim)) {
    auto block = sha256_bytes(base + ":" + std::to_string(block_index++));
    for (std::size_t off = 0; off + 8 <= block.size() &&
                              vec.values.size() < static_cast<std::size_t>(endpoint.embedding_dim);
         off += 8) {
      std::uint64_t u = 0;
      for (int b = 7; b >= 0; --b) u = (u << 8) | block[off + static_cast<std::size_t>(b)];
      vec.values.push_back(2.0 * unit_interval(u) - 1.0);
    }
  }
  double norm = l2_norm(vec);
  if (norm == 0.0) {
    fail(Errc::zero_vector, "mock embedding collapsed to zero");
  }
  for (double& value : vec.values) value /= norm;
  return vec;
}

struct ParsedUrl {
  std::string base;  // scheme://authority
  std::string path;
};

ParsedUrl parse_url(const std::string& address) {
  auto scheme_end = address.find("://");
  if (scheme_end == std::string::npos) {
    fail(Errc::config, "endpoint address missing scheme: " + address);
  }
  auto path_start = address.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    return {address, "/"};
  }
  return {address.substr(0, path_start), address.substr(path_start)};
}

bool retryable_status(int status) { return status >= 500 && status <= 599; }

httplib::Result post_with_retries(const ModelEndpoint& endpoint, const std::string& path,
                                  const std::string& body, std::string* error_detail) {
  ParsedUrl url = parse_url(endpoint.address);
  httplib::Client client(url.base);
  client.set_connection_timeout(0, endpoint.timeout_ms * 1000L);
  client.set_read_timeout(endpoint.timeout_ms / 1000, (endpoint.timeout_ms % 1000) * 1000L);
  httplib::Headers headers;
  if (const char* key = std::getenv(kApiKeyEnv); key != nullptr && key[0] != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + key);
  }

  int attempts = std::max(1, endpoint.retry_attempts);
  for (int attempt = 0; attempt < attempts; ++attempt) {
    if (attempt > 0) {
      long delay = endpoint.retry_backoff_ms;
      for (int i = 1; i < attempt; ++i) delay *= 2;
      std::this_thread::sleep_for(std::chrono::milliseconds(delay));
    }
    auto result = client.Post(path, headers, body, "application/json");
    if (result && !retryable_status(result->status)) {
      return result;
    }
    if (result) {
      *error_detail = "status " + std::to_string(result->status);
    } else {
      *error_detail = httplib::to_string(result.error());
    }
  }
  return httplib::Result{nullptr, httplib::Error::Connection};
}

CompletionResponse remote_complete(const ModelEndpoint& endpoint, std::string_view system,
                                   std::string_view user) {
  ParsedUrl url = parse_url(endpoint.address);
  json body = {
      {"model", endpoint.name},
      {"messages",
       json::array({json{{"role", "system"}, {"content", std::string(system)}},
                    json{{"role", "user"}, {"content", std::string(user)}}})},
      {"temperature", endpoint.temperature},
      {"max_tokens", endpoint.max_output_tokens},
  };
  auto started = std::chrono::steady_clock::now();
  std::string detail;
  auto result = post_with_retries(endpoint, url.path, body.dump(), &detail);
  auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                     std::chrono::steady_clock::now() - started)
                     .count();
  if (!result || retryable_status(result->status)) {
    fail(Errc::transport,
         "completion request to '" + endpoint.name + "' failed after retries (" + detail + ")");
  }
  if (result->status != 200) {
    fail(Errc::transport, "completion request to '" + endpoint.name + "' returned status " +
                              std::to_string(result->status));
  }
  json parsed = json::parse(result->body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("choices") || parsed["choices"].empty()) {
    fail(Errc::transport, "completion response from '" + endpoint.name + "' is malformed");
  }
  const json& choice = parsed["choices"][0];
  CompletionResponse response;
  response.text = choice.value("message", json::object()).value("content", "");
  response.finish = choice.value("finish_reason", "stop");
  response.latency_ms = static_cast<long>(elapsed);
  if (response.finish == "length") {
    fail(Errc::output_truncated,
         "completion from '" + endpoint.name + "' hit the output token limit");
  }
  if (!response.text.empty() && response.text.back() == '\n') {
    response.text.pop_back();
  }
  return response;
}

EmbeddingVector remote_embed(const ModelEndpoint& endpoint, std::string_view text) {
  ParsedUrl url = parse_url(endpoint.address);
  json body = {{"model", endpoint.name}, {"input", std::string(text)}};
  std::string detail;
  auto result = post_with_retries(endpoint, url.path, body.dump(), &detail);
  if (!result || retryable_status(result->status)) {
    fail(Errc::transport,
         "embedding request to '" + endpoint.name + "' failed after retries (" + detail + ")");
  }
  if (result->status != 200) {
    fail(Errc::transport, "embedding request to '" + endpoint.name + "' returned status " +
                              std::to_string(result->status));
  }
  json parsed = json::parse(result->body, nullptr, false);
  if (parsed.is_discarded()) {
    fail(Errc::transport, "embedding response from '" + endpoint.name + "' is malformed");
  }
  const json* numbers = nullptr;
  if (parsed.is_array()) {
    numbers = &parsed;
  } else if (parsed.contains("embedding") && parsed["embedding"].is_array()) {
    numbers = &parsed["embedding"];
  } else if (parsed.contains("data") && parsed["data"].is_array() && !parsed["data"].empty() &&
             parsed["data"][0].contains("embedding")) {
    numbers = &parsed["data"][0]["embedding"];
  }
  if (numbers == nullptr) {
    fail(Errc::transport, "embedding response from '" + endpoint.name + "' has no vector");
  }
  EmbeddingVector vec;
  vec.values.reserve(numbers->size());
  for (const auto& value : *numbers) {
    if (!value.is_number()) {
      fail(Errc::transport, "embedding response from '" + endpoint.name + "' is not numeric");
    }
    double d = value.get<double>();
    if (!std::isfinite(d)) {
      fail(Errc::invalid_input, "embedding from '" + endpoint.name + "' contains NaN/Inf");
    }
    vec.values.push_back(d);
  }
  if (vec.dim() != endpoint.embedding_dim) {
    fail(Errc::dimension_mismatch, "embedding dim " + std::to_string(vec.dim()) +
                                       " != configured " +
                                       std::to_string(endpoint.embedding_dim));
  }
  double norm = l2_norm(vec);
  if (norm == 0.0) {
    fail(Errc::zero_vector, "embedding from '" + endpoint.name + "' is all zeros");
  }
  for (double& value : vec.values) value /= norm;  // normalized at ingest
  return vec;
}

} // namespace

std::string_view to_string(ModelRole role) {
  switch (role) {
    case ModelRole::sub_optimal: return "sub_optimal";
    case ModelRole::proposer: return "proposer";
    case ModelRole::arbiter: return "arbiter";
    case ModelRole::quality_auditor: return "quality_auditor";
    case ModelRole::teacher: return "teacher";
    case ModelRole::judge: return "judge";
    case ModelRole::embedder: return "embedder";
    case ModelRole::p2q: return "p2q";
  }
  return "judge";
}

std::optional<ModelRole> role_from_string(std::string_view name) {
  static constexpr ModelRole kRoles[] = {
      ModelRole::sub_optimal, ModelRole::proposer,  ModelRole::arbiter,
      ModelRole::quality_auditor, ModelRole::teacher, ModelRole::judge,
      ModelRole::embedder,    ModelRole::p2q,
  };
  for (ModelRole role : kRoles) {
    if (to_string(role) == name) return role;
  }
  return std::nullopt;
}

ModelEndpoint mock_script(ModelRole role, std::string name, std::uint64_t seed,
                          std::vector<ScriptRule> rules) {
  if (!has_fall_through(rules)) {
    fail(Errc::config, "scripted mock '" + name + "' has no fall-through rule");
  }
  ModelEndpoint endpoint;
  endpoint.role = role;
  endpoint.name = std::move(name);
  endpoint.transport = TransportKind::mock;
  endpoint.mock_seed = seed;
  endpoint.script = std::move(rules);
  return endpoint;
}

double l2_norm(const EmbeddingVector& v) {
  double sum = 0.0;
  for (double value : v.values) sum += value * value;
  return std::sqrt(sum);
}

struct Gateway::Slot {
  explicit Slot(std::ptrdiff_t count) : semaphore(count) {}
  std::counting_semaphore<kMaxInFlightCeiling> semaphore;
};

Gateway::Gateway() = default;
Gateway::~Gateway() = default;

Gateway::Slot* Gateway::slot_for(const ModelEndpoint& endpoint) const {
  if (endpoint.max_in_flight <= 0) return nullptr;
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = slots_.find(endpoint.name);
  if (it == slots_.end()) {
    auto cap = std::min<std::ptrdiff_t>(endpoint.max_in_flight, kMaxInFlightCeiling);
    it = slots_.emplace(endpoint.name, std::make_unique<Slot>(cap)).first;
  }
  return it->second.get();
}

CompletionResponse Gateway::complete(const ModelEndpoint& endpoint, std::string_view system,
                                     std::string_view user) const {
  if (endpoint.role == ModelRole::embedder) {
    fail(Errc::invalid_input, "complete() called on embedder endpoint '" + endpoint.name + "'");
  }
  if (endpoint.transport == TransportKind::mock) {
    CompletionResponse response;
    if (!endpoint.script.empty()) {
      response.text = scripted_output(endpoint, system, user);
    } else {
      response.text = default_mock_output(endpoint, mock_base_digest(endpoint, system, user));
    }
    response.finish = "stop";
    response.latency_ms = 0;
    return response;
  }
  Slot* slot = slot_for(endpoint);
  if (slot != nullptr) slot->semaphore.acquire();
  try {
    auto response = remote_complete(endpoint, system, user);
    if (slot != nullptr) slot->semaphore.release();
    return response;
  } catch (...) {
    if (slot != nullptr) slot->semaphore.release();
    throw;
  }
}

EmbeddingVector Gateway::embed(const ModelEndpoint& endpoint, std::string_view text) const {
  if (endpoint.role != ModelRole::embedder) {
    fail(Errc::invalid_input, "embed() called on non-embedder endpoint '" + endpoint.name + "'");
  }
  if (endpoint.transport == TransportKind::mock) {
    return mock_embedding(endpoint, text);
  }
  Slot* slot = slot_for(endpoint);
  if (slot != nullptr) slot->semaphore.acquire();
  try {
    auto vec = remote_embed(endpoint, text);
    if (slot != nullptr) slot->semaphore.release();
    return vec;
  } catch (...) {
    if (slot != nullptr) slot->semaphore.release();
    throw;
  }
}

} // namespace kcare
