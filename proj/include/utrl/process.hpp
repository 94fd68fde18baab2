#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace utrl {

struct ResourceLimits {
  std::optional<std::uint64_t> cpu_seconds;
  std::optional<std::uint64_t> address_space_bytes;
  std::optional<std::uint64_t> file_size_bytes;
  std::optional<std::uint64_t> open_files;
  // Only applied for non-root users; the kernel ignores it for root anyway.
  std::optional<std::uint64_t> processes;
};

struct SpawnOptions {
  std::vector<std::string> argv;  // argv[0] is looked up on PATH when not absolute
  std::vector<std::string> env;   // complete environment, "KEY=VALUE"
  std::string working_dir;        // empty: inherit
  ResourceLimits limits;
  bool new_network_namespace = false;
};

struct ProcessResult {
  int exit_code = -1;  // -1 when terminated by a signal
  int term_signal = 0;
  bool timed_out = false;
  bool output_truncated = false;
  std::string out;
  std::string err;
  std::chrono::duration<double> elapsed{};
};

// Resolves a program name against PATH. Returns empty when not found.
std::string find_executable(const std::string& name);

// Runs a child to completion. The child gets its own process group which is
// SIGKILLed on timeout or once the child itself exits, so stray grandchildren
// do not outlive the call. Throws SandboxError when the child cannot be set up
// (fork, limit or exec failure); those are never reported as a ProcessResult.
ProcessResult run_process(const SpawnOptions& options, std::string_view input,
                          std::chrono::duration<double> timeout, std::size_t output_limit);

// True when this process may create network namespaces (probed once).
bool network_namespace_supported();

// A long-lived child driven over line-delimited stdin/stdout.
class LineChild {
 public:
  explicit LineChild(SpawnOptions options);
  ~LineChild();
  LineChild(const LineChild&) = delete;
  LineChild& operator=(const LineChild&) = delete;

  void write_line(std::string_view line);
  // Throws ProtocolError (retryable) on timeout or EOF.
  std::string read_line(std::chrono::duration<double> timeout);
  bool alive();
  void terminate();
  std::string drain_stderr();

 private:
  int pid_ = -1;
  int in_fd_ = -1;
  int out_fd_ = -1;
  int err_fd_ = -1;
  std::string pending_;
};

}  // namespace utrl
