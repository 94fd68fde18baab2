#include "utrl/sandbox.hpp"

#include <unistd.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <future>
#include <thread>

#include "utrl/errors.hpp"
#include "utrl/log.hpp"
#include "utrl/process.hpp"
#include "utrl/text.hpp"

namespace utrl {
namespace {

// Runs before the candidate. The audit hook denies filesystem mutation,
// process creation and sockets; a denied operation raises PermissionError and
// the program exits with the error status. This is a guard against accidents,
// not a security boundary.
constexpr const char* kPrelude = R"PY(import os as _utrl_os
import sys as _utrl_sys


def _utrl_finish(status, message=None):
    try:
        if message:
            _utrl_sys.stderr.write(message + "\n")
        _utrl_sys.stdout.flush()
        _utrl_sys.stderr.flush()
    except BaseException:
        pass
    _utrl_os._exit(status)


_UTRL_DENIED = frozenset((
    "os.remove", "os.rmdir", "os.rename", "os.truncate", "os.chmod", "os.chown",
    "os.mkdir", "os.symlink", "os.link", "os.utime", "shutil.rmtree", "shutil.copyfile",
    "os.system", "os.exec", "os.posix_spawn", "os.spawn", "os.fork", "os.forkpty",
    "os.kill", "os.killpg", "subprocess.Popen", "pty.spawn",
    "socket.__new__", "socket.connect", "socket.bind", "socket.sendto",
    "socket.getaddrinfo", "ctypes.dlopen", "ctypes.dlsym",
))
_UTRL_WRITE_FLAGS = _utrl_os.O_WRONLY | _utrl_os.O_RDWR | _utrl_os.O_CREAT | _utrl_os.O_APPEND | _utrl_os.O_TRUNC


def _utrl_audit(event, args):
    if event in _UTRL_DENIED:
        raise PermissionError("sandbox denied " + event)
    if event == "open":
        mode = args[1] if len(args) > 1 else None
        flags = args[2] if len(args) > 2 else 0
        if (isinstance(mode, str) and any(c in mode for c in "wax+")) or (isinstance(flags, int) and flags & _UTRL_WRITE_FLAGS):
            raise PermissionError("sandbox denied writing " + repr(args[0]))


_utrl_sys.addaudithook(_utrl_audit)
_utrl_scope = {"__name__": "__main__", "__builtins__": __builtins__}
)PY";

constexpr const char* kEpilogue = R"PY(
try:
    exec(compile(_UTRL_CODE, "<candidate>", "exec", dont_inherit=True), _utrl_scope)
except BaseException as _utrl_e:
    _utrl_finish(4, "candidate raised " + type(_utrl_e).__name__ + ": " + str(_utrl_e))
try:
    exec(compile(_UTRL_TEST, "<test>", "exec", dont_inherit=True), _utrl_scope)
except AssertionError as _utrl_e:
    _utrl_tb = _utrl_e.__traceback__
    while _utrl_tb is not None and _utrl_tb.tb_frame.f_code.co_filename != "<test>":
        _utrl_tb = _utrl_tb.tb_next
    if _utrl_tb is not None and _utrl_tb.tb_next is None:
        _utrl_finish(3, "assertion failed")
    _utrl_finish(4, "AssertionError raised inside the candidate")
except BaseException as _utrl_e:
    _utrl_finish(4, "test raised " + type(_utrl_e).__name__ + ": " + str(_utrl_e))
_utrl_finish(0)
)PY";

std::string cache_key(const std::string& code, const std::string& test, const ExecutionLimits& l) {
  std::string key;
  key.reserve(code.size() + test.size() + 64);
  key += std::to_string(l.wall_seconds) + "/" + std::to_string(l.memory_bytes) + "/" + std::to_string(l.output_bytes);
  key += '\0';
  key += code;
  key += '\0';
  key += test;
  return key;
}

bool blank(const std::string& s) { return trim(s).empty(); }

}  // namespace

void ExecutionLimits::validate() const {
  if (!(wall_seconds > 0.0) || memory_bytes == 0 || output_bytes == 0) {
    throw ConfigError("execution limits must all be strictly positive");
  }
}

void to_json(nlohmann::json& j, const ExecutionLimits& l) {
  j = nlohmann::json{{"wall_seconds", l.wall_seconds}, {"memory_bytes", l.memory_bytes}, {"output_bytes", l.output_bytes}};
}

void from_json(const nlohmann::json& j, ExecutionLimits& l) {
  l.wall_seconds = j.value("wall_seconds", l.wall_seconds);
  l.memory_bytes = j.value("memory_bytes", l.memory_bytes);
  l.output_bytes = j.value("output_bytes", l.output_bytes);
}

const char* to_string(TestStatus status) {
  switch (status) {
    case TestStatus::passed: return "passed";
    case TestStatus::failed: return "failed";
    case TestStatus::errored: return "errored";
    case TestStatus::timed_out: return "timed_out";
  }
  return "?";
}

std::string python_string_literal(const std::string& text) {
  std::string out = "\"";
  char buf[8];
  for (unsigned char c : text) {
    switch (c) {
      case '\\': out += "\\\\"; break;
      case '"': out += "\\\""; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      case '\r': out += "\\r"; break;
      default:
        if (c < 0x20 || c >= 0x7f) {
          std::snprintf(buf, sizeof(buf), "\\x%02x", c);
          out += buf;
        } else {
          out += static_cast<char>(c);
        }
    }
  }
  out += '"';
  // \x escapes yield code points, so non-ASCII UTF-8 must be decoded back.
  bool ascii = true;
  for (unsigned char c : text) ascii = ascii && c < 0x80;
  if (!ascii) return "(" + std::string("b") + out + ").decode(\"utf-8\", \"replace\")";
  return out;
}

std::string assemble_program(const std::string& code, const std::string& test) {
  std::string program = kPrelude;
  program += "_UTRL_CODE = " + python_string_literal(code) + "\n";
  program += "_UTRL_TEST = " + python_string_literal(test) + "\n";
  program += kEpilogue;
  return program;
}

Sandbox::Sandbox(SandboxConfig config) : config_(std::move(config)) {
  config_.limits.validate();
  if (config_.interpreter.empty()) throw ConfigError("interpreter command is empty");
  const std::string resolved = find_executable(config_.interpreter[0]);
  if (resolved.empty()) throw ConfigError("interpreter not found: " + config_.interpreter[0]);
  config_.interpreter[0] = resolved;
  front_end_ = std::make_unique<FrontEnd>(config_.interpreter);

  isolation_ = IsolationLevel::permissive;
  if (config_.isolate_network && network_namespace_supported()) {
    isolation_ = IsolationLevel::full;
  } else if (config_.isolate_network) {
    log::warn("sandbox: cannot create network namespaces here; running in PERMISSIVE mode "
              "(audit-hook guard and rlimits only)");
  }
  for (const auto& name : config_.env_allowlist) {
    if (const char* v = std::getenv(name.c_str())) child_env_.push_back(name + "=" + v);
  }

  namespace fs = std::filesystem;
  fs::path root = config_.scratch_root.empty() ? fs::temp_directory_path() : fs::path(config_.scratch_root);
  std::string templ = (root / "utrl-sandbox-XXXXXX").string();
  if (::mkdtemp(templ.data()) == nullptr) throw SandboxError("cannot create scratch directory under " + root.string());
  scratch_dir_ = templ;
}

Sandbox::~Sandbox() {
  std::error_code ec;
  std::filesystem::remove_all(scratch_dir_, ec);
}

std::size_t Sandbox::processes_spawned() const {
  std::lock_guard lock(mutex_);
  return spawned_;
}

CompileResult Sandbox::check_compile(const std::string& code) {
  if (blank(code)) return {false, "empty program"};
  return front_end_->compile(code);
}

TestStatus Sandbox::run_one(const std::string& code, const std::string& test, const ExecutionLimits& limits,
                            std::string* diagnostics) {
  std::string key;
  if (config_.cache_outcomes) {
    key = cache_key(code, test, limits);
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) {
      if (diagnostics) *diagnostics = it->second.second;
      return it->second.first;
    }
  }
  SpawnOptions opts;
  opts.argv = config_.interpreter;
  opts.argv.push_back("-");
  opts.env = child_env_;
  opts.working_dir = scratch_dir_;
  opts.new_network_namespace = isolation_ == IsolationLevel::full;
  opts.limits.cpu_seconds = static_cast<std::uint64_t>(std::ceil(limits.wall_seconds)) + 1;
  opts.limits.address_space_bytes = limits.memory_bytes;
  opts.limits.file_size_bytes = 0;
  opts.limits.open_files = 64;
  opts.limits.processes = 0;

  ProcessResult r = run_process(opts, assemble_program(code, test), std::chrono::duration<double>(limits.wall_seconds),
                                limits.output_bytes);
  TestStatus status;
  if (r.timed_out) {
    status = TestStatus::timed_out;
  } else if (r.exit_code == kExitPassed) {
    status = TestStatus::passed;
  } else if (r.exit_code == kExitAssertionFailed) {
    status = TestStatus::failed;
  } else {
    status = TestStatus::errored;
  }
  std::string diag = rtrim(r.err);
  if (r.term_signal) diag += (diag.empty() ? "" : "\n") + std::string("killed by signal ") + std::to_string(r.term_signal);
  if (diagnostics) *diagnostics = diag;
  std::lock_guard lock(mutex_);
  ++spawned_;
  if (config_.cache_outcomes) cache_.emplace(std::move(key), std::make_pair(status, std::move(diag)));
  return status;
}

ExecutionOutcome Sandbox::run_tests(const std::string& code, const std::vector<std::string>& tests) {
  return run_tests(code, tests, config_.limits);
}

ExecutionOutcome Sandbox::run_tests(const std::string& code, const std::vector<std::string>& tests,
                                    const ExecutionLimits& limits) {
  if (tests.empty()) throw SandboxError("run_tests needs at least one test");
  limits.validate();
  ExecutionOutcome outcome;
  outcome.total_tests = tests.size();
  CompileResult compiled = check_compile(code);
  outcome.compiled = compiled.ok;
  if (!compiled.ok) {
    outcome.diagnostics = compiled.diagnostics;
    return outcome;
  }
  for (const auto& test : tests) {
    std::string diag;
    TestStatus s = run_one(code, test, limits, &diag);
    outcome.per_test.push_back(s);
    if (s == TestStatus::passed) ++outcome.passed_tests;
    if (!diag.empty() && outcome.diagnostics.size() < limits.output_bytes) {
      outcome.diagnostics += diag + "\n";
    }
  }
  return outcome;
}

std::vector<ExecutionOutcome> Sandbox::run_batch(const std::vector<Job>& jobs) {
  std::vector<ExecutionOutcome> results(jobs.size());
  std::size_t workers = config_.workers ? config_.workers : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min(workers, jobs.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < jobs.size(); ++i) results[i] = run_tests(jobs[i].code, jobs[i].tests);
    return results;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::future<void>> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.push_back(std::async(std::launch::async, [&] {
      for (std::size_t i = next++; i < jobs.size(); i = next++) results[i] = run_tests(jobs[i].code, jobs[i].tests);
    }));
  }
  for (auto& f : pool) f.get();
  return results;
}

}  // namespace utrl
