#pragma once

#include <stdexcept>
#include <string>

namespace utrl {

// Invalid user-facing configuration (bad flag values, missing interpreter, ...).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input data: dataset records, checkpoints, snapshots.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// The sandbox could not spawn or limit a child process. Never a test outcome.
class SandboxError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violations of the external policy wire protocol or transport failures.
class ProtocolError : public std::runtime_error {
 public:
  explicit ProtocolError(const std::string& what, bool retryable = false)
      : std::runtime_error(what), retryable_(retryable) {}
  bool retryable() const { return retryable_; }

 private:
  bool retryable_;
};

// Numerical failure during training (non-finite objective, advantage, ...).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace utrl
