#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/dataset.hpp"
#include "utrl/policy.hpp"
#include "utrl/sandbox.hpp"

namespace utrl {

// Unbiased pass@k estimate 1 - C(n-c, k) / C(n, k). Small cases use exact
// integer arithmetic and one correctly rounded division; larger ones use the
// stable product 1 - prod_{i=n-c+1}^{n} (1 - k/i).
double pass_at_k(std::size_t n, std::size_t c, std::size_t k);

struct EvalConfig {
  std::size_t n_samples = 200;
  std::vector<std::size_t> ks{1, 10, 100};
  DecodingParams decoding;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const EvalConfig&) const = default;
};

struct ProblemEval {
  std::string id;
  std::size_t n = 0;
  std::size_t c = 0;
  bool greedy_pass = false;
  std::vector<double> pass_at;  // aligned with EvalReport::ks
};

struct EvalReport {
  std::vector<ProblemEval> problems;
  std::vector<std::size_t> ks;
  std::vector<double> pass_at_k;  // mean of the per-problem estimates
  double greedy_rate = 0.0;
  DecodingParams decoding;
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string timestamp;
};

// Executes the greedy completion of each problem; returns per-problem success.
std::vector<bool> greedy_passes(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox,
                                std::size_t max_len);
double greedy_solve_rate(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox, std::size_t max_len);

// Draws n_samples nucleus samples per problem plus one greedy decode.
// n_samples = 0 skips sampling and reports only the greedy rate.
EvalReport evaluate(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox, const EvalConfig& config);

nlohmann::json report_to_json(const EvalReport& report);
// One row per problem plus a final aggregate row, tab separated.
std::string report_to_tsv(const EvalReport& report);
// Writes <prefix>.json and <prefix>.tsv.
void write_report(const EvalReport& report, const std::string& prefix);

}  // namespace utrl
