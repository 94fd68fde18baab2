#include "utrl/evaluator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "utrl/errors.hpp"
#include "utrl/rng.hpp"
#include "utrl/text.hpp"

namespace utrl {

namespace {

using u128 = unsigned __int128;

// C(n, k), or 0 when it does not fit in 127 bits.
u128 binomial(std::size_t n, std::size_t k) {
  if (k > n) return 0;
  k = std::min(k, n - k);
  u128 r = 1;
  const u128 limit = ~u128{0} >> 1;
  for (std::size_t i = 1; i <= k; ++i) {
    // r * (n - k + i) / i stays integral at every step.
    const u128 factor = n - k + i;
    if (r > limit / factor) return 0;
    r = r * factor / i;
  }
  return r;
}

constexpr u128 kExactDouble = u128{1} << 53;

}  // namespace

double pass_at_k(std::size_t n, std::size_t c, std::size_t k) {
  if (k == 0) throw DataError("pass@k needs k >= 1");
  if (k > n) throw DataError("pass@k needs k <= n (k=" + std::to_string(k) + ", n=" + std::to_string(n) + ")");
  if (c > n) throw DataError("pass@k needs c <= n");
  if (c == 0) return 0.0;
  if (n - c < k) return 1.0;
  const u128 total = binomial(n, k);
  const u128 miss = binomial(n - c, k);
  if (total != 0 && total < kExactDouble) {
    // Both operands are exact doubles, so the quotient is correctly rounded.
    return static_cast<double>(total - miss) / static_cast<double>(total);
  }
  double prod = 1.0;
  for (std::size_t i = n - c + 1; i <= n; ++i) prod *= 1.0 - static_cast<double>(k) / static_cast<double>(i);
  return 1.0 - prod;
}

void EvalConfig::validate() const {
  decoding.validate();
  for (std::size_t k : ks) {
    if (k == 0) throw ConfigError("evaluation ks must be positive");
    if (n_samples > 0 && k > n_samples) {
      throw ConfigError("pass@" + std::to_string(k) + " needs at least " + std::to_string(k) + " samples, got " +
                        std::to_string(n_samples));
    }
  }
}

std::vector<bool> greedy_passes(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox,
                                std::size_t max_len) {
  std::vector<Sandbox::Job> jobs;
  jobs.reserve(problems.size());
  for (const auto& p : problems) {
    const auto tr = policy.greedy(make_prompt(p), max_len);
    jobs.push_back({assemble_solution(p, tr.text), p.unit_tests});
  }
  const auto outcomes = sandbox.run_batch(jobs);
  std::vector<bool> out;
  out.reserve(outcomes.size());
  for (const auto& o : outcomes) out.push_back(o.all_passed());
  return out;
}

double greedy_solve_rate(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox,
                         std::size_t max_len) {
  if (problems.empty()) return 0.0;
  const auto passes = greedy_passes(problems, policy, sandbox, max_len);
  return static_cast<double>(std::count(passes.begin(), passes.end(), true)) / static_cast<double>(passes.size());
}

EvalReport evaluate(const std::vector<Problem>& problems, Policy& policy, Sandbox& sandbox, const EvalConfig& config) {
  config.validate();
  EvalReport report;
  report.ks = config.n_samples > 0 ? config.ks : std::vector<std::size_t>{};
  report.decoding = config.decoding;
  report.n_samples = config.n_samples;
  report.seed = config.seed;
  const auto greedy = greedy_passes(problems, policy, sandbox, config.decoding.max_len);
  report.pass_at_k.assign(report.ks.size(), 0.0);
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    ProblemEval pe;
    pe.id = p.id;
    pe.greedy_pass = greedy[i];
    if (config.n_samples > 0) {
      Rng rng = substream(config.seed, "evaluate", i);
      const auto samples = policy.sample_batch(make_prompt(p), config.n_samples, config.decoding, rng());
      std::vector<Sandbox::Job> jobs;
      jobs.reserve(samples.size());
      for (const auto& s : samples) jobs.push_back({assemble_solution(p, s.text), p.unit_tests});
      const auto outcomes = sandbox.run_batch(jobs);
      pe.n = outcomes.size();
      for (const auto& o : outcomes) pe.c += o.all_passed() ? 1 : 0;
      for (std::size_t k : report.ks) pe.pass_at.push_back(pass_at_k(pe.n, pe.c, k));
    }
    report.problems.push_back(std::move(pe));
  }
  if (!problems.empty()) {
    const double m = static_cast<double>(problems.size());
    std::size_t greedy_ok = 0;
    for (const auto& pe : report.problems) greedy_ok += pe.greedy_pass ? 1 : 0;
    report.greedy_rate = static_cast<double>(greedy_ok) / m;
    for (std::size_t j = 0; j < report.ks.size(); ++j) {
      double s = 0.0;
      for (const auto& pe : report.problems) s += pe.pass_at[j];
      report.pass_at_k[j] = s / m;
    }
  }
  return report;
}

nlohmann::json report_to_json(const EvalReport& report) {
  nlohmann::json problems = nlohmann::json::array();
  for (const auto& pe : report.problems) {
    nlohmann::json pass = nlohmann::json::object();
    for (std::size_t j = 0; j < report.ks.size(); ++j) pass[std::to_string(report.ks[j])] = pe.pass_at[j];
    problems.push_back({{"id", pe.id}, {"n", pe.n}, {"c", pe.c}, {"greedy_pass", pe.greedy_pass}, {"pass_at_k", pass}});
  }
  nlohmann::json aggregate = nlohmann::json::object();
  for (std::size_t j = 0; j < report.ks.size(); ++j) aggregate[std::to_string(report.ks[j])] = report.pass_at_k[j];
  return {{"problems", problems},
          {"greedy_rate", report.greedy_rate},
          {"pass_at_k", aggregate},
          {"ks", report.ks},
          {"n_samples", report.n_samples},
          {"decoding", report.decoding},
          {"seed", report.seed},
          {"timestamp", report.timestamp}};
}

std::string report_to_tsv(const EvalReport& report) {
  std::ostringstream out;
  out.precision(17);
  out << "problem\tn\tc\tgreedy_pass";
  for (std::size_t k : report.ks) out << "\tpass@" << k;
  out << "\n";
  for (const auto& pe : report.problems) {
    out << pe.id << '\t' << pe.n << '\t' << pe.c << '\t' << (pe.greedy_pass ? 1 : 0);
    for (double v : pe.pass_at) out << '\t' << v;
    out << "\n";
  }
  out << "ALL\t" << report.n_samples << "\t\t" << report.greedy_rate;
  for (double v : report.pass_at_k) out << '\t' << v;
  out << "\n";
  return out.str();
}

void write_report(const EvalReport& report, const std::string& prefix) {
  write_file(prefix + ".json", report_to_json(report).dump(2) + "\n");
  write_file(prefix + ".tsv", report_to_tsv(report));
}

}  // namespace utrl
