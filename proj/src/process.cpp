#include "utrl/process.hpp"

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/resource.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <mutex>

#include "utrl/errors.hpp"

namespace utrl {
namespace {

using Clock = std::chrono::steady_clock;

struct Pipe {
  int read = -1;
  int write = -1;
};

Pipe make_pipe() {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw SandboxError(std::string("pipe2: ") + std::strerror(errno));
  return {fds[0], fds[1]};
}

void close_fd(int& fd) {
  if (fd >= 0) ::close(fd);
  fd = -1;
}

// What the child reports over the exec-status pipe before dying.
struct ChildFailure {
  int stage;
  int error;
};

enum Stage : int { kDup = 1, kChdir, kUnshare, kRlimit, kExec };

const char* stage_name(int stage) {
  switch (stage) {
    case kDup: return "dup2";
    case kChdir: return "chdir";
    case kUnshare: return "unshare(CLONE_NEWNET)";
    case kRlimit: return "setrlimit";
    case kExec: return "execve";
    default: return "child setup";
  }
}

[[noreturn]] void child_fail(int status_fd, int stage) {
  ChildFailure f{stage, errno};
  ssize_t ignored = ::write(status_fd, &f, sizeof(f));
  (void)ignored;
  ::_exit(127);
}

bool apply_limit(int resource, const std::optional<std::uint64_t>& value) {
  if (!value) return true;
  struct rlimit rl;
  rl.rlim_cur = static_cast<rlim_t>(*value);
  rl.rlim_max = static_cast<rlim_t>(*value);
  return ::setrlimit(resource, &rl) == 0;
}

struct PreparedArgs {
  std::string path;
  std::vector<std::string> storage;
  std::vector<char*> argv;
  std::vector<char*> envp;
};

PreparedArgs prepare(const SpawnOptions& options) {
  if (options.argv.empty()) throw SandboxError("empty command");
  PreparedArgs p;
  p.path = options.argv[0].find('/') == std::string::npos ? find_executable(options.argv[0]) : options.argv[0];
  if (p.path.empty()) throw SandboxError("executable not found: " + options.argv[0]);
  p.storage.reserve(options.argv.size() + options.env.size());
  for (const auto& a : options.argv) p.storage.push_back(a);
  for (const auto& e : options.env) p.storage.push_back(e);
  for (std::size_t i = 0; i < options.argv.size(); ++i) p.argv.push_back(p.storage[i].data());
  p.argv.push_back(nullptr);
  for (std::size_t i = 0; i < options.env.size(); ++i) p.envp.push_back(p.storage[options.argv.size() + i].data());
  p.envp.push_back(nullptr);
  return p;
}

// Forks and execs; the child's stdio is wired to the given descriptors.
pid_t spawn(const SpawnOptions& options, PreparedArgs& args, int in_fd, int out_fd, int err_fd) {
  Pipe status = make_pipe();
  const bool limit_procs = ::geteuid() != 0;
  pid_t pid = ::fork();
  if (pid < 0) {
    int e = errno;
    close_fd(status.read);
    close_fd(status.write);
    throw SandboxError(std::string("fork: ") + std::strerror(e));
  }
  if (pid == 0) {
    ::setpgid(0, 0);
    ::signal(SIGPIPE, SIG_DFL);
    ::signal(SIGXFSZ, SIG_DFL);
    if (::dup2(in_fd, 0) < 0 || ::dup2(out_fd, 1) < 0 || ::dup2(err_fd, 2) < 0) child_fail(status.write, kDup);
#ifdef SYS_close_range
    // Mark everything else close-on-exec; the status pipe closes on success.
    ::syscall(SYS_close_range, 3u, ~0u, 4u /* CLOSE_RANGE_CLOEXEC */);
#endif
    if (!options.working_dir.empty() && ::chdir(options.working_dir.c_str()) != 0) child_fail(status.write, kChdir);
    if (options.new_network_namespace && ::unshare(CLONE_NEWNET) != 0) child_fail(status.write, kUnshare);
    const auto& l = options.limits;
    bool ok = apply_limit(RLIMIT_CPU, l.cpu_seconds) && apply_limit(RLIMIT_AS, l.address_space_bytes) &&
              apply_limit(RLIMIT_FSIZE, l.file_size_bytes) && apply_limit(RLIMIT_NOFILE, l.open_files) &&
              apply_limit(RLIMIT_CORE, std::uint64_t{0});
    if (ok && limit_procs) ok = apply_limit(RLIMIT_NPROC, l.processes);
    if (!ok) child_fail(status.write, kRlimit);
    ::execve(args.path.c_str(), args.argv.data(), args.envp.data());
    child_fail(status.write, kExec);
  }
  ::setpgid(pid, pid);  // also from the parent, to win the race with killpg
  close_fd(status.write);
  ChildFailure failure{};
  ssize_t n;
  do {
    n = ::read(status.read, &failure, sizeof(failure));
  } while (n < 0 && errno == EINTR);
  close_fd(status.read);
  if (n == static_cast<ssize_t>(sizeof(failure))) {
    int st;
    ::waitpid(pid, &st, 0);
    throw SandboxError(std::string(stage_name(failure.stage)) + " failed for " + args.path + ": " +
                       std::strerror(failure.error));
  }
  return pid;
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

}  // namespace

std::string find_executable(const std::string& name) {
  if (name.find('/') != std::string::npos) return ::access(name.c_str(), X_OK) == 0 ? name : std::string();
  const char* path = std::getenv("PATH");
  std::string dirs = path ? path : "/usr/local/bin:/usr/bin:/bin";
  std::size_t start = 0;
  while (start <= dirs.size()) {
    auto end = dirs.find(':', start);
    if (end == std::string::npos) end = dirs.size();
    std::string dir = dirs.substr(start, end - start);
    if (dir.empty()) dir = ".";
    std::string candidate = dir + "/" + name;
    if (::access(candidate.c_str(), X_OK) == 0 && !std::filesystem::is_directory(candidate)) return candidate;
    start = end + 1;
  }
  return {};
}

ProcessResult run_process(const SpawnOptions& options, std::string_view input, std::chrono::duration<double> timeout,
                          std::size_t output_limit) {
  PreparedArgs args = prepare(options);
  Pipe in = make_pipe(), out = make_pipe(), err = make_pipe();
  const auto start = Clock::now();
  pid_t pid;
  try {
    pid = spawn(options, args, in.read, out.write, err.write);
  } catch (...) {
    for (int* fd : {&in.read, &in.write, &out.read, &out.write, &err.read, &err.write}) close_fd(*fd);
    throw;
  }
  close_fd(in.read);
  close_fd(out.write);
  close_fd(err.write);
  set_nonblocking(in.write);
  set_nonblocking(out.read);
  set_nonblocking(err.read);
  if (input.empty()) close_fd(in.write);

  ProcessResult result;
  std::size_t written = 0;
  std::size_t captured = 0;
  bool reaped = false;
  int status = 0;
  const auto deadline = start + std::chrono::duration_cast<Clock::duration>(timeout);
  char buf[8192];

  auto consume = [&](int& fd, std::string& sink) {
    for (;;) {
      ssize_t n = ::read(fd, buf, sizeof(buf));
      if (n > 0) {
        std::size_t room = output_limit > captured ? output_limit - captured : 0;
        std::size_t take = std::min<std::size_t>(room, static_cast<std::size_t>(n));
        sink.append(buf, take);
        captured += take;
        if (take < static_cast<std::size_t>(n)) result.output_truncated = true;
        continue;
      }
      if (n == 0) close_fd(fd);
      if (n < 0 && errno == EINTR) continue;
      return;
    }
  };

  while (out.read >= 0 || err.read >= 0) {
    auto now = Clock::now();
    if (now >= deadline) {
      result.timed_out = true;
      break;
    }
    pollfd fds[3];
    int nfds = 0;
    int out_idx = -1, err_idx = -1, in_idx = -1;
    if (out.read >= 0) { out_idx = nfds; fds[nfds++] = {out.read, POLLIN, 0}; }
    if (err.read >= 0) { err_idx = nfds; fds[nfds++] = {err.read, POLLIN, 0}; }
    if (in.write >= 0) { in_idx = nfds; fds[nfds++] = {in.write, POLLOUT, 0}; }
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count();
    int wait_ms = static_cast<int>(std::min<long long>(std::max<long long>(remaining, 1), 50));
    int rc = ::poll(fds, static_cast<nfds_t>(nfds), wait_ms);
    if (rc < 0 && errno != EINTR) break;
    if (rc > 0) {
      if (out_idx >= 0 && fds[out_idx].revents) consume(out.read, result.out);
      if (err_idx >= 0 && fds[err_idx].revents) consume(err.read, result.err);
      if (in_idx >= 0 && fds[in_idx].revents) {
        if (fds[in_idx].revents & (POLLERR | POLLHUP)) {
          close_fd(in.write);
        } else {
          ssize_t n = ::write(in.write, input.data() + written, input.size() - written);
          if (n > 0) written += static_cast<std::size_t>(n);
          if (n < 0 && errno != EAGAIN && errno != EINTR) close_fd(in.write);
          if (written == input.size()) close_fd(in.write);
        }
      }
    } else if (!reaped) {
      // Quiet pipes: the child may be gone while a descendant holds them open.
      if (::waitpid(pid, &status, WNOHANG) == pid) {
        reaped = true;
        ::killpg(pid, SIGKILL);
      }
    }
  }
  ::killpg(pid, SIGKILL);
  if (!reaped) {
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
    }
  }
  for (int* fd : {&in.write, &out.read, &err.read}) close_fd(*fd);
  result.elapsed = Clock::now() - start;
  if (WIFEXITED(status)) {
    result.exit_code = WEXITSTATUS(status);
  } else if (WIFSIGNALED(status)) {
    result.term_signal = WTERMSIG(status);
  }
  return result;
}

bool network_namespace_supported() {
  static std::once_flag once;
  static bool supported = false;
  std::call_once(once, [] {
    pid_t pid = ::fork();
    if (pid == 0) ::_exit(::unshare(CLONE_NEWNET) == 0 ? 0 : 1);
    if (pid < 0) return;
    int status = 0;
    ::waitpid(pid, &status, 0);
    supported = WIFEXITED(status) && WEXITSTATUS(status) == 0;
  });
  return supported;
}

LineChild::LineChild(SpawnOptions options) {
  PreparedArgs args = prepare(options);
  Pipe in = make_pipe(), out = make_pipe(), err = make_pipe();
  try {
    pid_ = spawn(options, args, in.read, out.write, err.write);
  } catch (...) {
    for (int* fd : {&in.read, &in.write, &out.read, &out.write, &err.read, &err.write}) close_fd(*fd);
    throw;
  }
  close_fd(in.read);
  close_fd(out.write);
  close_fd(err.write);
  in_fd_ = in.write;
  out_fd_ = out.read;
  err_fd_ = err.read;
  set_nonblocking(err_fd_);
}

LineChild::~LineChild() { terminate(); }

void LineChild::write_line(std::string_view line) {
  if (in_fd_ < 0) throw ProtocolError("child stdin closed", true);
  std::string data(line);
  data += '\n';
  std::size_t off = 0;
  // A dead reader must surface as an error, not kill us with SIGPIPE.
  struct sigaction ignore {}, previous {};
  ignore.sa_handler = SIG_IGN;
  ::sigaction(SIGPIPE, &ignore, &previous);
  while (off < data.size()) {
    ssize_t n = ::write(in_fd_, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      int e = errno;
      ::sigaction(SIGPIPE, &previous, nullptr);
      throw ProtocolError(std::string("write to child failed: ") + std::strerror(e), true);
    }
    off += static_cast<std::size_t>(n);
  }
  ::sigaction(SIGPIPE, &previous, nullptr);
}

std::string LineChild::read_line(std::chrono::duration<double> timeout) {
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(timeout);
  char buf[65536];
  for (;;) {
    auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    if (out_fd_ < 0) throw ProtocolError("child closed its output", true);
    auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (remaining <= 0) throw ProtocolError("timed out waiting for child response", true);
    pollfd fd{out_fd_, POLLIN, 0};
    int rc = ::poll(&fd, 1, static_cast<int>(std::min<long long>(remaining, 1000)));
    if (rc < 0 && errno != EINTR) throw ProtocolError(std::string("poll: ") + std::strerror(errno), true);
    if (rc <= 0) continue;
    ssize_t n = ::read(out_fd_, buf, sizeof(buf));
    if (n > 0) {
      pending_.append(buf, static_cast<std::size_t>(n));
    } else if (n == 0) {
      close_fd(out_fd_);
    } else if (errno != EINTR && errno != EAGAIN) {
      throw ProtocolError(std::string("read from child failed: ") + std::strerror(errno), true);
    }
  }
}

bool LineChild::alive() {
  if (pid_ <= 0) return false;
  int status;
  if (::waitpid(pid_, &status, WNOHANG) == pid_) {
    pid_ = -1;
    return false;
  }
  return true;
}

std::string LineChild::drain_stderr() {
  std::string out;
  if (err_fd_ < 0) return out;
  char buf[4096];
  for (;;) {
    ssize_t n = ::read(err_fd_, buf, sizeof(buf));
    if (n <= 0) break;
    out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

void LineChild::terminate() {
  close_fd(in_fd_);
  if (pid_ > 0) {
    ::killpg(pid_, SIGKILL);
    int status;
    while (::waitpid(pid_, &status, 0) < 0 && errno == EINTR) {
    }
    pid_ = -1;
  }
  close_fd(out_fd_);
  close_fd(err_fd_);
}

}  // namespace utrl
