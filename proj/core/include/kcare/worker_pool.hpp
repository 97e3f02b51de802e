#pragma once

#include <atomic>
#include <cstddef>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <type_traits>
#include <vector>

#include "kcare/errors.hpp"

namespace kcare {

template <typename T>
struct ItemResult {
  std::optional<T> value;
  std::optional<Errc> error_code;
  std::string error;

  bool failed() const { return !value.has_value(); }
};

/// Runs fn(item, index) over all items on a bounded pool. Results land at
/// their input index, so output order never depends on scheduling. Exceptions
/// are captured per item instead of tearing down the batch.
template <typename In, typename F>
auto parallel_map(const std::vector<In>& items, int workers, F fn)
    -> std::vector<ItemResult<std::invoke_result_t<F, const In&, std::size_t>>> {
  using Out = std::invoke_result_t<F, const In&, std::size_t>;
  std::vector<ItemResult<Out>> results(items.size());
  if (items.empty()) return results;

  int pool = std::max(1, workers);
  pool = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(pool), items.size()));

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      std::size_t i = next.fetch_add(1);
      if (i >= items.size()) return;
      try {
        results[i].value = fn(items[i], i);
      } catch (const Error& e) {
        results[i].error_code = e.code();
        results[i].error = e.what();
      } catch (const std::exception& e) {
        results[i].error = e.what();
      }
    }
  };

  if (pool == 1) {
    worker();
    return results;
  }
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(pool));
  for (int t = 0; t < pool; ++t) threads.emplace_back(worker);
  for (auto& thread : threads) thread.join();
  return results;
}

/// Distinguishes tolerable per-item trouble from logic errors: returns true
/// for a transport-class failure (counted against the abort threshold),
/// false for a success, and rethrows anything else — silence would hide it.
template <typename T>
bool tolerated_failure(const ItemResult<T>& result) {
  if (!result.failed()) return false;
  if (result.error_code != Errc::transport && result.error_code != Errc::output_truncated) {
    fail(result.error_code.value_or(Errc::invariant), result.error);
  }
  return true;
}

/// Stage-level abort policy: fail with an aggregated Transport error when the
/// failure fraction strictly exceeds the threshold.
inline void enforce_abort_threshold(std::size_t failures, std::size_t total,
                                    double abort_fraction, std::string_view stage) {
  if (total == 0 || failures == 0) return;
  double fraction = static_cast<double>(failures) / static_cast<double>(total);
  if (fraction > abort_fraction) {
    fail(Errc::transport, std::string(stage) + ": " + std::to_string(failures) + "/" +
                              std::to_string(total) + " requests failed (abort threshold " +
                              std::to_string(abort_fraction) + ")");
  }
}

} // namespace kcare
