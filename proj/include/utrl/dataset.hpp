#pragma once

#include <string>
#include <vector>

#include "json.hpp"

namespace utrl {

class Sandbox;

enum class ProblemSource { curated, augmented };

// One training/evaluation unit: description, target-language signature and
// the raw assertion statements that define functional correctness.
struct Problem {
  std::string id;
  std::string description;
  std::string signature;
  std::vector<std::string> unit_tests;
  std::vector<std::string> seed_solutions;
  ProblemSource source = ProblemSource::curated;
  double loss_weight = 1.0;

  bool operator==(const Problem&) const = default;
};

struct DatasetSplit {
  std::vector<Problem> train;
  std::vector<Problem> validation;
  std::vector<Problem> test;
  std::vector<std::string> warnings;

  std::size_t total() const { return train.size() + validation.size() + test.size(); }
  nlohmann::json sizes() const;
};

// MBPP id ranges: 1-510 test (few-shot + test merged), 511-600 validation,
// 601-974 train.
enum class MbppPartition { train, validation, test };
MbppPartition mbpp_partition(long id);

// Name declared by a header such as "def fib(n):"; empty when not a def line.
std::string function_name(const std::string& signature);

// True when `test` mentions `name` as a whole identifier.
bool references_identifier(const std::string& test, const std::string& name);

Problem problem_from_json(const nlohmann::json& record, std::size_t index);
nlohmann::json problem_to_json(const Problem& problem);
std::string serialize_problems(const std::vector<Problem>& problems);

// Generic line-delimited loader for the harness's own instance format.
std::vector<Problem> parse_problems(const std::string& text);
std::vector<Problem> load_problems(const std::string& path);
void save_problems(const std::string& path, const std::vector<Problem>& problems);

DatasetSplit parse_mbpp(const std::string& text);
DatasetSplit load_mbpp(const std::string& path);

// Augmented instances never carry seed solutions; their buffer starts empty.
std::vector<Problem> parse_augmented(const std::string& text);
std::vector<Problem> load_augmented(const std::string& path);

// Description block, newline, signature line, newline. Generation starts at
// the function body.
std::string make_prompt(const Problem& problem);

// Program executed for a generated completion: the signature line followed by
// the body.
std::string assemble_solution(const Problem& problem, const std::string& completion);

// Ingestion validation: the signature compiles with a stub body and every seed
// solution compiles. Returns one diagnostic per violation.
std::vector<std::string> validate_problems(const std::vector<Problem>& problems, Sandbox& sandbox);

}  // namespace utrl
