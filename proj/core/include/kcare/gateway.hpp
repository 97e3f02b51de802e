#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace kcare {

enum class ModelRole {
  sub_optimal,
  proposer,
  arbiter,
  quality_auditor,
  teacher,
  judge,
  embedder,
  p2q,
};

std::string_view to_string(ModelRole role);
std::optional<ModelRole> role_from_string(std::string_view name);

enum class TransportKind { remote, mock };

/// Literal-substring rule for scripted mocks; first match wins, an empty
/// pattern is the mandatory fall-through.
struct ScriptRule {
  std::string match;
  std::string output;
};

struct ModelEndpoint {
  ModelRole role = ModelRole::judge;
  std::string name;
  TransportKind transport = TransportKind::mock;
  std::string address;                 // remote only
  std::uint64_t mock_seed = 0;         // mock only; fully determines behavior
  double temperature = 0.0;
  int max_output_tokens = 1024;
  int embedding_dim = 64;              // embedder only
  std::vector<ScriptRule> script;      // mock only; empty -> role default
  int retry_attempts = 3;
  int retry_backoff_ms = 500;
  int timeout_ms = 30000;
  int max_in_flight = 0;               // 0 = unbounded
};

/// Builds a scripted mock endpoint; throws ConfigError when no fall-through
/// (empty-pattern) rule is present.
ModelEndpoint mock_script(ModelRole role, std::string name, std::uint64_t seed,
                          std::vector<ScriptRule> rules);

struct CompletionResponse {
  std::string text;
  std::string finish;   // "stop" | "length" | transport-reported reason
  long latency_ms = 0;
};

struct EmbeddingVector {
  std::vector<double> values;

  int dim() const { return static_cast<int>(values.size()); }
};

double l2_norm(const EmbeddingVector& v);

/// Uniform access to chat-completion and embedding endpoints. Mock transports
/// are pure functions of (mock_seed, role, input); remote transports speak
/// the JSON chat/embedding wire protocol with bounded retries on timeouts and
/// 5xx responses. Thread-safe; remote endpoints may carry an in-flight cap.
class Gateway {
public:
  Gateway();
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  CompletionResponse complete(const ModelEndpoint& endpoint, std::string_view system,
                              std::string_view user) const;

  EmbeddingVector embed(const ModelEndpoint& endpoint, std::string_view text) const;

private:
  struct Slot;
  Slot* slot_for(const ModelEndpoint& endpoint) const;

  mutable std::mutex mutex_;
  mutable std::map<std::string, std::unique_ptr<Slot>> slots_;
};

/// Bearer token env var consulted by the remote transport.
inline constexpr const char* kApiKeyEnv = "K_CARE_API_KEY";

} // namespace kcare
