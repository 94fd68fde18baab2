#include "utrl/sandbox.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "utrl/errors.hpp"
#include "utrl/process.hpp"
#include "utrl/text.hpp"

using namespace utrl;

namespace {

const std::string kFib =
    "def fib(n):\n"
    "    if n == 0:\n"
    "        return 0\n"
    "    if n == 1:\n"
    "        return 1\n"
    "    return fib(n-2)+fib(n-1)\n";

const std::vector<std::string> kFibTests = {"assert fib(0)==0", "assert fib(12)==144", "assert fib(8)==21"};

Sandbox& shared_sandbox() {
  static Sandbox sandbox([] {
    SandboxConfig c;
    c.limits.wall_seconds = 2.0;
    c.cache_outcomes = false;
    return c;
  }());
  return sandbox;
}

std::string fixture(const std::string& name) { return std::string(UTRL_FIXTURES) + "/sandbox/" + name; }

}  // namespace

TEST(CheckCompile, MalformedHeader) {
  auto r = shared_sandbox().check_compile("def f(:");
  EXPECT_FALSE(r.ok);
  EXPECT_NE(r.diagnostics.find("SyntaxError"), std::string::npos) << r.diagnostics;
}

TEST(CheckCompile, FibonacciFigureCompiles) {
  auto r = shared_sandbox().check_compile(kFib);
  EXPECT_TRUE(r.ok);
  EXPECT_EQ(r.diagnostics, "");
}

TEST(CheckCompile, EmptyProgram) {
  auto r = shared_sandbox().check_compile("");
  EXPECT_FALSE(r.ok);
  EXPECT_EQ(r.diagnostics, "empty program");
}

TEST(CheckCompile, DoesNotExecute) {
  // Byte-compiling must not run top-level code.
  auto r = shared_sandbox().check_compile("while True:\n    pass\n");
  EXPECT_TRUE(r.ok);
  EXPECT_FALSE(shared_sandbox().check_compile("x = 'a\0b'\n\0").ok);
}

TEST(CheckCompile, MissingInterpreterIsConfigurationError) {
  SandboxConfig c;
  c.interpreter = {"/nonexistent/python-xyz"};
  EXPECT_THROW(Sandbox{c}, ConfigError);
}

TEST(RunTests, FibonacciFigurePassesAll) {
  auto o = shared_sandbox().run_tests(kFib, kFibTests);
  EXPECT_TRUE(o.compiled);
  EXPECT_EQ(o.total_tests, 3u);
  EXPECT_EQ(o.passed_tests, 3u);
  EXPECT_TRUE(o.all_passed());
}

TEST(RunTests, ConstantZeroPassesOnlyFirst) {
  auto o = shared_sandbox().run_tests("def fib(n): return 0\n", kFibTests);
  EXPECT_EQ(o.passed_tests, 1u);
  EXPECT_EQ(o.per_test, (std::vector<TestStatus>{TestStatus::passed, TestStatus::failed, TestStatus::failed}));
}

TEST(RunTests, InfiniteLoopTimesOut) {
  ExecutionLimits l;
  l.wall_seconds = 0.5;
  auto o = shared_sandbox().run_tests("def fib(n):\n    while True:\n        pass\n", {"assert fib(1) == 1", "assert fib(2) == 1"}, l);
  EXPECT_EQ(o.per_test, (std::vector<TestStatus>{TestStatus::timed_out, TestStatus::timed_out}));
  EXPECT_EQ(o.passed_tests, 0u);
}

TEST(RunTests, NonCompilingCodeIsNeverExecuted) {
  auto before = shared_sandbox().processes_spawned();
  auto o = shared_sandbox().run_tests("def fib(n) return 0", kFibTests);
  EXPECT_FALSE(o.compiled);
  EXPECT_TRUE(o.per_test.empty());
  EXPECT_EQ(o.passed_tests, 0u);
  EXPECT_EQ(o.total_tests, 3u);
  EXPECT_EQ(shared_sandbox().processes_spawned(), before);
}

TEST(RunTests, ErrorClassification) {
  auto& sb = shared_sandbox();
  ExecutionLimits l = sb.config().limits;
  EXPECT_EQ(sb.run_one("def f(x):\n    return 1 / x\n", "assert f(0) == 1", l), TestStatus::errored);
  // An assertion inside the candidate is an error of the candidate, not a failed test.
  EXPECT_EQ(sb.run_one("def f(x):\n    assert x > 0\n    return x\n", "assert f(-1) == -1", l), TestStatus::errored);
  EXPECT_EQ(sb.run_one("def f(x):\n    return x\n", "assert f(1) == 2, 'message'", l), TestStatus::failed);
  // Exiting early with status 0 must not look like a pass.
  EXPECT_EQ(sb.run_one("import sys\ndef f(x):\n    sys.exit(0)\n", "assert f(1) == 1", l), TestStatus::errored);
  EXPECT_EQ(sb.run_one("raise SystemExit(0)\ndef f(x):\n    return x\n", "assert f(1) == 1", l), TestStatus::errored);
  EXPECT_EQ(sb.run_one("def f(x):\n    return x\n", "assert undefined_name(1)", l), TestStatus::errored);
}

TEST(RunTests, MemoryCeiling) {
  ExecutionLimits l;
  l.wall_seconds = 5.0;
  l.memory_bytes = 128ull << 20;
  auto s = shared_sandbox().run_one("def f():\n    return len(bytearray(1 << 30))\n", "assert f() > 0", l);
  EXPECT_EQ(s, TestStatus::errored);
}

TEST(RunTests, OutputFloodIsCappedAndStillClassified) {
  ExecutionLimits l;
  l.output_bytes = 1024;
  std::string diag;
  auto s = shared_sandbox().run_one("def f():\n    print('x' * 100000)\n    return 1\n", "assert f() == 1", l, &diag);
  EXPECT_EQ(s, TestStatus::passed);
}

TEST(RunTests, EmptyTestListIsAHardError) {
  EXPECT_THROW(shared_sandbox().run_tests(kFib, {}), SandboxError);
}

TEST(RunTests, DeterministicForDeterministicCode) {
  auto a = shared_sandbox().run_tests("def fib(n): return n\n", kFibTests);
  auto b = shared_sandbox().run_tests("def fib(n): return n\n", kFibTests);
  EXPECT_EQ(a, b);
}

TEST(RunTests, TriviallyTrueTestIsMonotone) {
  auto base = shared_sandbox().run_tests("def fib(n): return 0\n", kFibTests);
  auto tests = kFibTests;
  tests.push_back("assert True");
  auto more = shared_sandbox().run_tests("def fib(n): return 0\n", tests);
  EXPECT_EQ(more.total_tests, base.total_tests + 1);
  EXPECT_EQ(more.passed_tests, base.passed_tests + 1);
}

TEST(RunTests, FreshProcessPerTest) {
  // State set by one test must not leak into the next.
  const std::string code = "state = []\ndef f():\n    state.append(1)\n    return len(state)\n";
  auto o = shared_sandbox().run_tests(code, {"assert f() == 1", "assert f() == 1"});
  EXPECT_EQ(o.passed_tests, 2u);
}

TEST(RunTests, NonAsciiSourceAndTests) {
  auto o = shared_sandbox().run_tests("def f():\n    return 'déjà'\n", {"assert f() == 'déjà'", "assert len(f()) == 4"});
  EXPECT_EQ(o.passed_tests, 2u);
}

TEST(RunBatch, MatchesSequentialOrder) {
  SandboxConfig c;
  c.workers = 3;
  Sandbox sb(c);
  std::vector<Sandbox::Job> jobs = {
      {kFib, kFibTests}, {"def fib(n): return 0\n", kFibTests}, {"def fib(n) return", kFibTests}, {"def fib(n): return n\n", kFibTests}};
  auto batch = sb.run_batch(jobs);
  ASSERT_EQ(batch.size(), 4u);
  for (std::size_t i = 0; i < jobs.size(); ++i) EXPECT_EQ(batch[i], sb.run_tests(jobs[i].code, jobs[i].tests)) << i;
}

TEST(Isolation, AdversarialProgramsCannotTouchTheHarness) {
  namespace fs = std::filesystem;
  fs::path dir = fs::temp_directory_path() / "utrl-sentinel-test";
  fs::create_directories(dir);
  fs::path sentinel = dir / "keep.txt";
  write_file(sentinel.string(), "keep");
  const std::string s = sentinel.string();
  const std::string d = dir.string();
  auto& sb = shared_sandbox();
  ExecutionLimits l = sb.config().limits;
  const std::vector<std::pair<std::string, std::string>> attacks = {
      {"delete", "import os\ndef f():\n    os.remove('" + s + "')\n    return 1\n"},
      {"rmtree", "import shutil\ndef f():\n    shutil.rmtree('" + d + "')\n    return 1\n"},
      {"overwrite", "def f():\n    open('" + s + "', 'w').write('gone')\n    return 1\n"},
      {"create", "def f():\n    open('" + d + "/new.txt', 'x').write('x')\n    return 1\n"},
      {"network", "import socket\ndef f():\n    socket.create_connection(('127.0.0.1', 9))\n    return 1\n"},
      {"spawn", "import subprocess\ndef f():\n    subprocess.run(['rm', '-f', '" + s + "'])\n    return 1\n"},
      {"system", "import os\ndef f():\n    os.system('rm -f " + s + "')\n    return 1\n"},
      {"fork", "import os\ndef f():\n    os.fork()\n    return 1\n"},
  };
  for (const auto& [name, code] : attacks) {
    std::string diag;
    EXPECT_EQ(sb.run_one(code, "assert f() == 1", l, &diag), TestStatus::errored) << name << ": " << diag;
  }
  EXPECT_TRUE(fs::exists(sentinel));
  EXPECT_EQ(read_file(s), "keep");
  EXPECT_FALSE(fs::exists(dir / "new.txt"));
  fs::remove_all(dir);
}

TEST(Isolation, EnvironmentIsEmptyByDefault) {
  ::setenv("UTRL_SECRET_TOKEN", "hunter2", 1);
  auto s = shared_sandbox().run_one("import os\ndef f():\n    return os.environ.get('UTRL_SECRET_TOKEN')\n",
                                    "assert f() is None", shared_sandbox().config().limits);
  EXPECT_EQ(s, TestStatus::passed);
}

TEST(Process, SetupFailureIsAHardError) {
  SpawnOptions o;
  o.argv = {"/bin/true"};
  o.working_dir = "/nonexistent/dir/for/utrl";
  EXPECT_THROW(run_process(o, "", std::chrono::seconds(1), 1024), SandboxError);
  o.working_dir.clear();
  o.argv = {"/nonexistent/binary"};
  EXPECT_THROW(run_process(o, "", std::chrono::seconds(1), 1024), SandboxError);
}

TEST(AssembleProgram, GoldenFiles) {
  struct Case {
    const char* file;
    std::string code;
    std::string test;
    int exit;
  };
  const Case cases[] = {
      {"golden_pass.py", "def fib(n): return 0\n", "assert fib(0)==0", kExitPassed},
      {"golden_fail.py", "def fib(n): return 0\n", "assert fib(12)==144", kExitAssertionFailed},
      {"golden_error.py", "def fib(n): return 1 // n\n", "assert fib(0)==0", kExitError},
  };
  for (const auto& c : cases) {
    const std::string program = assemble_program(c.code, c.test);
    EXPECT_EQ(program, read_file(fixture(c.file))) << c.file;
    SpawnOptions o;
    o.argv = {"python3", "-I", "-B", "-S", "-"};
    auto r = run_process(o, program, std::chrono::seconds(10), 1 << 16);
    EXPECT_EQ(r.exit_code, c.exit) << c.file << " " << r.err;
  }
}
