#pragma once

#include <chrono>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/process.hpp"

namespace utrl {

struct CompileResult {
  bool ok = false;
  std::string diagnostics;
};

// A persistent target-language front end: one interpreter process that only
// parses and byte-compiles (never executes) the sources it is sent. Used for
// the compile predicate and for syntax-tree canonicalization.
class FrontEnd {
 public:
  // `interpreter` is the program plus leading arguments, e.g. {"python3", "-I", "-B", "-S"}.
  explicit FrontEnd(std::vector<std::string> interpreter,
                    std::chrono::duration<double> timeout = std::chrono::seconds(10));
  ~FrontEnd();

  CompileResult compile(const std::string& source);

  // Throws DataError when the source does not parse or lacks the entry function.
  std::string canonicalize(const std::string& source, const std::string& entry_function);

  const std::vector<std::string>& interpreter() const { return interpreter_; }

  // The helper program the interpreter runs; exposed for documentation/tests.
  static const char* script();

 private:
  nlohmann::json request(const nlohmann::json& message);
  void start();

  std::vector<std::string> interpreter_;
  std::chrono::duration<double> timeout_;
  std::mutex mutex_;
  std::unique_ptr<LineChild> child_;
};

}  // namespace utrl
