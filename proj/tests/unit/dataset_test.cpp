#include "utrl/dataset.hpp"

#include <gtest/gtest.h>

#include <string>

#include "utrl/errors.hpp"
#include "utrl/sandbox.hpp"

using namespace utrl;
using nlohmann::json;

namespace {

std::string mbpp_line(long id) {
  json r{{"task_id", id},
         {"text", "Write a function to add one to n."},
         {"code", "def add_one_" + std::to_string(id) + "(n):\n    return n + 1"},
         {"test_list", {"assert add_one_" + std::to_string(id) + "(1) == 2"}},
         {"test_setup_code", ""},
         {"challenge_test_list", json::array()}};
  return r.dump() + "\n";
}

Problem fib_problem() {
  Problem p;
  p.id = "fib";
  p.description = "Write a function that calculates the n-th Fibonacci number.";
  p.signature = "def fib(n):";
  p.unit_tests = {"assert fib(0) == 0", "assert fib(12) == 144", "assert fib(8) == 21"};
  return p;
}

}  // namespace

TEST(MbppSplit, OfficialIdRangesReproduceReportedSizes) {
  // The 964 records the official train/validation/test files cover.
  std::string text;
  for (long id = 11; id <= 974; ++id) text += mbpp_line(id);
  DatasetSplit split = parse_mbpp(text);
  EXPECT_EQ(split.train.size(), 374u);
  EXPECT_EQ(split.validation.size(), 90u);
  EXPECT_EQ(split.test.size(), 500u);
  EXPECT_TRUE(split.warnings.empty());
  EXPECT_EQ(split.train.front().seed_solutions.size(), 1u);
  EXPECT_EQ(split.train.front().signature, "def add_one_601(n):");
}

TEST(MbppSplit, EmptyFileIsAnError) {
  try {
    parse_mbpp("\n\n");
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_STREQ(e.what(), "no records");
  }
}

TEST(MbppSplit, SingleTrainRecord) {
  DatasetSplit split = parse_mbpp(mbpp_line(700));
  ASSERT_EQ(split.train.size(), 1u);
  EXPECT_EQ(split.train[0].id, "700");
  EXPECT_TRUE(split.validation.empty());
  EXPECT_TRUE(split.test.empty());
  ASSERT_EQ(split.warnings.size(), 1u);  // wrong total count is only a warning
}

TEST(MbppSplit, MalformedRecordNamesIndexAndField) {
  std::string text = mbpp_line(700) + R"J({"task_id": 701, "text": "x", "code": "def g(n):\n    return n"})J" + "\n";
  try {
    parse_mbpp(text);
    FAIL() << "expected DataError";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("test_list"), std::string::npos) << e.what();
  }
}

TEST(MbppSplit, PartitionBoundaries) {
  EXPECT_EQ(mbpp_partition(1), MbppPartition::test);
  EXPECT_EQ(mbpp_partition(510), MbppPartition::test);
  EXPECT_EQ(mbpp_partition(511), MbppPartition::validation);
  EXPECT_EQ(mbpp_partition(600), MbppPartition::validation);
  EXPECT_EQ(mbpp_partition(601), MbppPartition::train);
  EXPECT_EQ(mbpp_partition(974), MbppPartition::train);
}

TEST(Augmented, MonkeyTroubleRecord) {
  auto problems = load_augmented(std::string(UTRL_FIXTURES) + "/datasets/monkey_trouble_augmented.jsonl");
  ASSERT_EQ(problems.size(), 2u);
  const Problem& p = problems[0];
  EXPECT_EQ(p.signature, "def monkeyTrouble2(aSmile, bSmile):");
  ASSERT_EQ(p.unit_tests.size(), 4u);
  EXPECT_EQ(p.unit_tests[0], "assert monkeyTrouble2(False, False) == \"Yes\"");
  EXPECT_EQ(p.source, ProblemSource::augmented);
  EXPECT_TRUE(p.seed_solutions.empty());
  EXPECT_DOUBLE_EQ(p.loss_weight, 0.2);
  EXPECT_DOUBLE_EQ(problems[1].loss_weight, 1.0);
}

TEST(Augmented, MissingSignatureIsAnError) {
  EXPECT_THROW(parse_augmented(R"J({"id": "a", "description": "d", "tests": ["assert f(1) == 1"]})J"), DataError);
}

TEST(Augmented, EmptyTestsRejected) {
  EXPECT_THROW(parse_augmented(R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": []})J"),
               DataError);
}

TEST(Augmented, AugmentedSeedSolutionsAreDropped) {
  auto ps = parse_augmented(
      R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert f(1) == 1"], "solutions": ["def f(x):\n    return x"]})J");
  EXPECT_TRUE(ps[0].seed_solutions.empty());
}

TEST(Problems, TestsMustReferenceTheFunction) {
  EXPECT_THROW(parse_problems(R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert g(1) == 1"]})J"),
               DataError);
  // A longer identifier containing the name does not count.
  EXPECT_THROW(parse_problems(R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert ff(1) == 1"]})J"),
               DataError);
}

TEST(Problems, LossWeightBounds) {
  EXPECT_THROW(parse_problems(R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert f(1)"], "source": "augmented", "loss_weight": 0})J"),
               DataError);
  EXPECT_THROW(parse_problems(R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert f(1)"], "loss_weight": 0.5})J"),
               DataError);
}

TEST(Problems, DuplicateIdsRejected) {
  std::string line = R"J({"id": "a", "description": "d", "signature": "def f(x):", "tests": ["assert f(1)"]})J";
  EXPECT_THROW(parse_problems(line + "\n" + line + "\n"), DataError);
}

TEST(Problems, SerializeRoundTripIsBitExact) {
  Problem a = fib_problem();
  a.seed_solutions = {"def fib(n):\n    return n if n < 2 else fib(n - 1) + fib(n - 2)\n"};
  Problem b;
  b.id = "aug-1";
  b.description = "Unicode déjà vu \"quoted\"\ttab";
  b.signature = "def g(a, b):";
  b.unit_tests = {"assert g(1, 2) == 3", "assert g(0.1, 0.2) == 0.30000000000000004"};
  b.source = ProblemSource::augmented;
  b.loss_weight = 0.2;
  std::string once = serialize_problems({a, b});
  auto loaded = parse_problems(once);
  ASSERT_EQ(loaded.size(), 2u);
  EXPECT_EQ(loaded[0], a);
  EXPECT_EQ(loaded[1], b);
  EXPECT_EQ(serialize_problems(loaded), once);
}

TEST(Prompt, FibonacciFigure) {
  EXPECT_EQ(make_prompt(fib_problem()), "Write a function that calculates the n-th Fibonacci number.\ndef fib(n):\n");
}

TEST(Prompt, EmptyDescriptionYieldsSignatureOnly) {
  Problem p = fib_problem();
  p.description = "";
  EXPECT_EQ(make_prompt(p), "def fib(n):\n");
  p.description = "  \n\t\n";
  EXPECT_EQ(make_prompt(p), "def fib(n):\n");
}

TEST(Prompt, TrailingWhitespaceNormalizedAndIdempotent) {
  Problem p = fib_problem();
  p.description = "Write a function   \nthat does things.\t \n\n";
  const std::string prompt = make_prompt(p);
  EXPECT_EQ(prompt, "Write a function\nthat does things.\ndef fib(n):\n");
  Problem q = p;
  q.description = prompt.substr(0, prompt.find("def fib"));
  EXPECT_EQ(make_prompt(q), prompt);
  EXPECT_EQ(make_prompt(p), make_prompt(p));
}

TEST(Validation, SignatureAndSeedsCompile) {
  Sandbox sandbox;
  Problem good = fib_problem();
  good.seed_solutions = {"def fib(n):\n    return n\n"};
  Problem bad = fib_problem();
  bad.id = "bad";
  bad.signature = "def fib(n:";
  bad.seed_solutions = {"def fib(n) return n"};
  auto issues = validate_problems({good, bad}, sandbox);
  ASSERT_EQ(issues.size(), 2u);
  EXPECT_NE(issues[0].find("bad: signature"), std::string::npos);
  EXPECT_NE(issues[1].find("seed solution 0"), std::string::npos);
}
