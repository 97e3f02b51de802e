#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace kcare {

enum class Errc {
  transport,
  output_truncated,
  dimension_mismatch,
  zero_vector,
  config,
  io,
  invariant,
  missing_input,
  dependency_missing,
  key_mismatch,
  length_mismatch,
  empty_input,
  invalid_input,
  empty_index,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
public:
  Error(Errc code, std::string message);
  Errc code() const { return code_; }

private:
  Errc code_;
};

[[noreturn]] void fail(Errc code, std::string message);

} // namespace kcare
