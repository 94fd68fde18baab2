#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "utrl/frontend.hpp"

namespace utrl {

struct ExecutionLimits {
  double wall_seconds = 5.0;
  std::uint64_t memory_bytes = 256ull << 20;
  std::uint64_t output_bytes = 64ull << 10;

  void validate() const;
  bool operator==(const ExecutionLimits&) const = default;
};

enum class TestStatus { passed, failed, errored, timed_out };
const char* to_string(TestStatus status);

struct ExecutionOutcome {
  bool compiled = false;
  std::vector<TestStatus> per_test;
  std::size_t total_tests = 0;
  std::size_t passed_tests = 0;
  std::string diagnostics;

  bool all_passed() const { return compiled && total_tests > 0 && passed_tests == total_tests; }
  bool operator==(const ExecutionOutcome&) const = default;
};

// Exit-status protocol of an assembled test program.
inline constexpr int kExitPassed = 0;
inline constexpr int kExitAssertionFailed = 3;
inline constexpr int kExitError = 4;

// One executable program: sandbox prelude, the candidate, one test statement.
std::string assemble_program(const std::string& code, const std::string& test);

// A Python string literal denoting `text` exactly (ASCII only, all escapes explicit).
std::string python_string_literal(const std::string& text);

enum class IsolationLevel {
  // audit-hook guard + rlimits + private network namespace
  full,
  // no network namespace available; audit-hook guard and rlimits only
  permissive,
};

struct SandboxConfig {
  std::vector<std::string> interpreter{"python3", "-I", "-B", "-S"};
  std::vector<std::string> env_allowlist;  // names copied from our environment
  ExecutionLimits limits;
  std::size_t workers = 0;      // 0: hardware concurrency
  bool isolate_network = true;  // falls back to permissive when unsupported
  bool cache_outcomes = true;   // memoize (code, test, limits) -> status
  std::string scratch_root;     // empty: system temp directory
};

// Compiles and runs candidate code against unit tests, one child process per
// test. Thread-safe.
class Sandbox {
 public:
  explicit Sandbox(SandboxConfig config = {});
  ~Sandbox();

  // Front-end acceptance (parse + byte-compile) without execution.
  CompileResult check_compile(const std::string& code);

  ExecutionOutcome run_tests(const std::string& code, const std::vector<std::string>& tests);
  ExecutionOutcome run_tests(const std::string& code, const std::vector<std::string>& tests,
                             const ExecutionLimits& limits);

  struct Job {
    std::string code;
    std::vector<std::string> tests;
  };
  // Runs independent jobs over the worker pool; results keep job order.
  std::vector<ExecutionOutcome> run_batch(const std::vector<Job>& jobs);

  // Runs one assembled program and classifies its exit.
  TestStatus run_one(const std::string& code, const std::string& test, const ExecutionLimits& limits,
                     std::string* diagnostics = nullptr);

  FrontEnd& front_end() { return *front_end_; }
  IsolationLevel isolation() const { return isolation_; }
  const SandboxConfig& config() const { return config_; }
  std::size_t processes_spawned() const;

 private:
  SandboxConfig config_;
  std::unique_ptr<FrontEnd> front_end_;
  IsolationLevel isolation_;
  std::vector<std::string> child_env_;
  std::string scratch_dir_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, std::pair<TestStatus, std::string>> cache_;
  std::size_t spawned_ = 0;
  std::uint64_t counter_ = 0;
};

void to_json(nlohmann::json& j, const ExecutionLimits& l);
void from_json(const nlohmann::json& j, ExecutionLimits& l);

}  // namespace utrl
