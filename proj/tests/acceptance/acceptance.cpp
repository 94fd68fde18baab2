// Acceptance checks C1-C10. Prints one PASS/FAIL line per criterion and exits
// non-zero when any criterion fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <sstream>

#include "json.hpp"
#include "utrl/augment.hpp"
#include "utrl/buffer.hpp"
#include "utrl/canonical.hpp"
#include "utrl/critic.hpp"
#include "utrl/evaluator.hpp"
#include "utrl/log.hpp"
#include "utrl/reward.hpp"
#include "utrl/run_config.hpp"
#include "utrl/text.hpp"
#include "utrl/toy_policy.hpp"

using namespace utrl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(6);
  s << v;
  return s.str();
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / ("utrl-acceptance-" + std::to_string(::getpid()));
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Sandbox& sandbox() {
  static Sandbox s;
  return s;
}

// ---------------------------------------------------------------- C1

ExecutionOutcome outcome(std::size_t passed, std::size_t total, bool compiled = true) {
  ExecutionOutcome o;
  o.compiled = compiled;
  o.total_tests = total;
  if (compiled) {
    o.passed_tests = passed;
    for (std::size_t i = 0; i < total; ++i) o.per_test.push_back(i < passed ? TestStatus::passed : TestStatus::failed);
  }
  return o;
}

Verdict c1_reward() {
  RewardConfig c;
  c.lambda = 50.0;
  c.eta = 0.5;
  const std::vector<std::pair<ExecutionOutcome, double>> cases{
      {outcome(4, 4), 50.0}, {outcome(1, 4), 25.0}, {outcome(0, 4), 0.0}, {outcome(0, 4, false), -10.0}};
  double worst = 0.0;
  for (const auto& [o, want] : cases) worst = std::max(worst, std::abs(functional_reward(o, c) - want));
  return {worst <= 1e-9, "max |error| " + fmt(worst) + " over 4 hand-computed cases"};
}

// ---------------------------------------------------------------- C2

using u128 = unsigned __int128;

// Subsets of size k out of n samples (the first c correct) that contain a
// correct sample, by enumerating bitmasks.
void enumerate(std::size_t n, std::size_t c, std::size_t k, u128& hits, u128& total) {
  hits = total = 0;
  const std::uint32_t correct = (1u << c) - 1u;
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    ++total;
    if (mask & correct) ++hits;
  }
}

// |d - p/q| scaled by q * 2^64, exact for d in [0, 1].
u128 scaled_error(double d, u128 p, u128 q) {
  int e = 0;
  const double m = std::frexp(d, &e);
  const u128 mant = static_cast<u128>(std::ldexp(m, 53));
  const int shift = e - 53 + 64;
  const u128 lhs = d == 0.0 ? 0 : (shift >= 0 ? (mant * q) << shift : (mant * q) >> -shift);
  const u128 rhs = p << 64;
  return lhs > rhs ? lhs - rhs : rhs - lhs;
}

Verdict c2_pass_at_k() {
  std::size_t cases = 0, bad = 0;
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t c = 0; c <= n; ++c) {
      for (std::size_t k = 1; k <= n; ++k) {
        u128 hits, total;
        enumerate(n, c, k, hits, total);
        const double est = pass_at_k(n, c, k);
        const u128 err = scaled_error(est, hits, total);
        // Zero tolerance: the estimate is the double nearest the exact ratio.
        bool nearest = err <= scaled_error(std::nextafter(est, 2.0), hits, total);
        if (est > 0.0) nearest = nearest && err <= scaled_error(std::nextafter(est, -1.0), hits, total);
        if (hits == total) nearest = nearest && est == 1.0;
        if (hits == 0) nearest = nearest && est == 0.0;
        ++cases;
        bad += !nearest;
      }
    }
  }
  return {bad == 0, std::to_string(cases) + " (n, c, k) cases, " + std::to_string(bad) +
                        " differ from the correctly rounded exact ratio"};
}

// ---------------------------------------------------------------- C3

Verdict c3_gradients() {
  std::mt19937_64 rng(77);
  std::uniform_int_distribution<std::size_t> vocab_size(2, 20), context(1, 3), length(0, 6), batch_size(1, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-5;
  double worst = 0.0;
  const int instances = 100;
  for (int instance = 0; instance < instances; ++instance) {
    ToyPolicyConfig c;
    const std::size_t v = vocab_size(rng);
    for (std::size_t i = 0; i < v; ++i) c.vocabulary.emplace_back(1, static_cast<char>('a' + i));
    c.context_window = context(rng);
    c.buckets = 17;
    c.seed = rng();
    c.init_scale = 0.5;
    ToyPolicy pol(c);
    std::vector<UpdateItem> batch;
    const std::size_t b = batch_size(rng);
    for (std::size_t i = 0; i < b; ++i) {
      UpdateItem item;
      item.prompt = "q" + std::to_string(rng() % 4);
      const std::size_t len = length(rng);
      for (std::size_t k = 0; k < len; ++k) item.completion += c.vocabulary[rng() % v];
      item.terminated = rng() % 2 == 0 || item.completion.empty();
      item.advantage = u(rng);
      item.weight = 0.2 + 0.4 * (u(rng) + 1.0);
      batch.push_back(item);
    }
    const auto analytic = pol.gradient(batch);
    auto& theta = pol.parameters();
    for (std::size_t i = 0; i < theta.size(); ++i) {
      const double saved = theta[i];
      theta[i] = saved + h;
      const double up = pol.objective(batch);
      theta[i] = saved - h;
      const double down = pol.objective(batch);
      theta[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double scale = std::max({std::abs(analytic[i]), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(analytic[i] - numeric) / scale);
    }
  }
  return {worst < 1e-5, std::to_string(instances) + " instances, max relative error " + fmt(worst)};
}

// ---------------------------------------------------------------- C4, C5, C10

RunConfig toy_run_config(std::uint64_t seed, bool buffer, const std::string& name) {
  RunConfig c = load_run_config(std::string(UTRL_DATA) + "/toy/config.json");
  c.data.train = std::string(UTRL_DATA) + "/toy/problems.jsonl";
  c.train.seed = seed;
  c.train.buffer_enabled = buffer;
  c.output_dir = (work_dir() / name).string();
  return c;
}

struct ToyRun {
  double initial = 0.0;
  double best = 0.0;
  std::size_t best_at = 0;
  double final_greedy = 0.0;
  std::size_t distinct = 0;
  std::size_t epochs = 0;
};

std::map<std::pair<std::uint64_t, bool>, ToyRun>& toy_runs() {
  static std::map<std::pair<std::uint64_t, bool>, ToyRun> runs;
  return runs;
}

const std::vector<std::uint64_t> kSeeds{0, 1, 2, 3, 4};

const ToyRun& toy_run(std::uint64_t seed, bool buffer) {
  auto& runs = toy_runs();
  const auto key = std::make_pair(seed, buffer);
  if (auto it = runs.find(key); it != runs.end()) return it->second;
  const RunConfig config = toy_run_config(seed, buffer, (buffer ? "buffer-" : "nobuffer-") + std::to_string(seed));
  const auto data = load_data(config.data);
  const RunRecord record = run_training(config, data);
  ToyRun r;
  r.initial = record.initial_train_greedy.value_or(1.0);
  for (const auto& m : record.epochs) {
    if (m.train_greedy && *m.train_greedy > r.best) {
      r.best = *m.train_greedy;
      r.best_at = m.epoch;
    }
    if (m.train_greedy) r.final_greedy = *m.train_greedy;
  }
  if (!record.epochs.empty()) r.distinct = record.epochs.back().distinct_valid;
  r.epochs = record.epochs.size();
  return runs[key] = r;
}

Verdict c4_learning() {
  std::size_t successes = 0;
  std::string detail;
  for (auto seed : kSeeds) {
    const auto& r = toy_run(seed, true);
    const bool ok = r.initial <= 0.2 && r.best >= 0.8 && r.best_at <= 200;
    successes += ok;
    detail += " seed " + std::to_string(seed) + ": " + fmt(r.initial) + "->" + fmt(r.best) + " @" +
              std::to_string(r.best_at) + ";";
  }
  return {successes >= 3, std::to_string(successes) + "/5 seeds rise from <=0.2 to >=0.8 within 200 epochs;" + detail};
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

Verdict c5_buffer_ablation() {
  std::vector<double> distinct_on, distinct_off, solve_on, solve_off;
  for (auto seed : kSeeds) {
    const auto& on = toy_run(seed, true);
    const auto& off = toy_run(seed, false);
    distinct_on.push_back(static_cast<double>(on.distinct));
    distinct_off.push_back(static_cast<double>(off.distinct));
    solve_on.push_back(on.final_greedy);
    solve_off.push_back(off.final_greedy);
  }
  const double d_on = median(distinct_on), d_off = median(distinct_off);
  const double s_on = median(solve_on), s_off = median(solve_off);
  return {d_on >= d_off && s_on >= s_off, "median distinct valid " + fmt(d_on) + " vs " + fmt(d_off) +
                                              ", median final solve rate " + fmt(s_on) + " vs " + fmt(s_off) +
                                              " (buffer vs no buffer)"};
}

Verdict c10_determinism() {
  toy_run(0, true);
  const RunConfig again = toy_run_config(0, true, "buffer-0-again");
  run_training(again, load_data(again.data));
  const std::string a = read_file((work_dir() / "buffer-0" / "metrics.jsonl").string());
  const std::string b = read_file((fs::path(again.output_dir) / "metrics.jsonl").string());
  return {!a.empty() && a == b, std::to_string(split_lines(a).size()) + " metric lines, " +
                                    (a == b ? "bit-identical" : "different")};
}

// ---------------------------------------------------------------- C6

Verdict c6_controller() {
  RewardConfig c;
  c.rho = 0.07;
  // Simulated environment: measured KL falls monotonically as zeta grows and
  // equals rho at zeta = 1.
  auto measured = [](double zeta) { return 0.07 / zeta; };
  std::string detail;
  bool all = true;
  for (double zeta0 : {0.2, 0.5, 4.0}) {
    c.zeta_init = zeta0;
    KlController k(c);
    std::optional<int> reached;
    for (int step = 1; step <= 100; ++step) {
      k.update(measured(k.zeta()));
      if (!reached && std::abs(measured(k.zeta()) - c.rho) <= 0.2 * c.rho) reached = step;
    }
    const bool settled = std::abs(measured(k.zeta()) - c.rho) <= 0.2 * c.rho;
    all = all && reached && settled;
    detail += " zeta0 " + fmt(zeta0) + ": " + (reached ? "within band at update " + std::to_string(*reached) : "never") +
              ", final KL " + fmt(measured(k.zeta())) + ";";
  }
  return {all, "KL(zeta) = 0.07/zeta;" + detail};
}

// ---------------------------------------------------------------- C7

Verdict c7_canonicalization() {
  Canonicalizer canon(&sandbox().front_end());
  std::size_t count = 0, bad = 0;
  std::string first_bad;
  for (const auto& line : split_lines(read_file(std::string(UTRL_FIXTURES) + "/canonical/programs.jsonl"))) {
    if (trim(line).empty()) continue;
    const json f = json::parse(line);
    const std::string code = f["code"], entry = f["entry"];
    const auto tests = f["tests"].get<std::vector<std::string>>();
    ++count;
    const std::string out = canon.canonicalize(code, entry);
    bool ok = canon.canonicalize(out, entry) == out && out.find('#') == std::string::npos;
    for (const auto& comment : f["comments"]) ok = ok && out.find(comment.get<std::string>()) == std::string::npos;
    for (const auto& dead : f["unreachable"]) {
      ok = ok && out.find("def " + dead.get<std::string>() + "(") == std::string::npos;
    }
    ok = ok && sandbox().run_tests(code, tests).per_test == sandbox().run_tests(out, tests).per_test;
    if (!ok && first_bad.empty()) first_bad = f["name"];
    bad += !ok;
  }
  return {count >= 50 && bad == 0,
          std::to_string(count) + " fixture programs, " + std::to_string(bad) + " violations" +
              (first_bad.empty() ? "" : " (first: " + first_bad + ")")};
}

// ---------------------------------------------------------------- C8

Verdict c8_conversion() {
  AugmentConfig config;
  config.corpus_root = std::string(UTRL_FIXTURES) + "/java/corpus";
  config.output = (work_dir() / "augment" / "instances.jsonl").string();
  config.generator_command = std::string(UTRL_MOCK_TESTGEN) + " {workspace} {class}";
  config.time_budget_seconds = 10;
  const auto result = run_augment(config);
  std::map<std::string, Problem> by_signature;
  std::size_t compile_failures = 0;
  for (const auto& inst : result.instances) {
    by_signature[inst.problem.signature] = inst.problem;
    std::string stub = inst.problem.signature + "\n    pass\n";
    for (const auto& t : inst.problem.unit_tests) stub += t + "\n";
    compile_failures += !sandbox().check_compile(stub).ok;
  }
  auto has = [&](const std::string& sig, const std::string& test) {
    const auto it = by_signature.find(sig);
    return it != by_signature.end() &&
           std::find(it->second.unit_tests.begin(), it->second.unit_tests.end(), test) != it->second.unit_tests.end();
  };
  const bool max_ok = has("def max(a, b):", "assert max(0, 581) == 581");
  const bool monkey_ok = has("def monkeyTrouble2(aSmile, bSmile):", "assert monkeyTrouble2(False, False) == \"Yes\"");
  return {max_ok && monkey_ok && compile_failures == 0 && !result.instances.empty(),
          std::to_string(result.instances.size()) + " instances emitted; max example " + (max_ok ? "exact" : "missing") +
              ", monkeyTrouble2 example " + (monkey_ok ? "exact" : "missing") + ", " +
              std::to_string(compile_failures) + " stub compile failures"};
}

// ---------------------------------------------------------------- C9

// Mean squared error of the least-squares fit with an intercept, from the
// normal equations solved in long double.
double least_squares_mse(const std::vector<std::vector<double>>& xs, const std::vector<double>& y) {
  const std::size_t d = xs[0].size() + 1;
  std::vector<std::vector<long double>> a(d, std::vector<long double>(d + 1, 0.0L));
  for (std::size_t k = 0; k < xs.size(); ++k) {
    std::vector<long double> row(xs[k].begin(), xs[k].end());
    row.push_back(1.0L);
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a[i][j] += row[i] * row[j];
      a[i][d] += row[i] * y[k];
    }
  }
  for (std::size_t c = 0; c < d; ++c) {
    std::size_t p = c;
    for (std::size_t r = c + 1; r < d; ++r) {
      if (std::fabs(a[r][c]) > std::fabs(a[p][c])) p = r;
    }
    std::swap(a[c], a[p]);
    for (std::size_t r = 0; r < d; ++r) {
      if (r == c) continue;
      const long double f = a[r][c] / a[c][c];
      for (std::size_t j = c; j <= d; ++j) a[r][j] -= f * a[c][j];
    }
  }
  long double mse = 0.0L;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    long double pred = a[d - 1][d] / a[d - 1][d - 1];
    for (std::size_t i = 0; i + 1 < d; ++i) pred += a[i][d] / a[i][i] * xs[k][i];
    mse += (pred - y[k]) * (pred - y[k]);
  }
  return static_cast<double>(mse / static_cast<long double>(xs.size()));
}

Verdict c9_critic() {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> n01(0.0, 1.0);
  const std::size_t dim = 10, rows = 80;
  std::vector<std::vector<double>> xs(rows, std::vector<double>(dim));
  std::vector<double> ys(rows);
  for (std::size_t k = 0; k < rows; ++k) {
    double y = -2.0;
    for (std::size_t i = 0; i < dim; ++i) {
      xs[k][i] = n01(rng);
      y += 0.5 * (static_cast<double>(i) - 4.5) * xs[k][i];
    }
    ys[k] = y + 0.5 * n01(rng);
  }
  const double optimum = least_squares_mse(xs, ys);
  CriticConfig config;
  config.head = CriticHead::linear;
  config.feature_dim = dim;
  Critic critic(config);
  std::vector<double> mse{critic.loss_features(xs, ys)};
  std::optional<int> within;
  for (int step = 1; step <= 500; ++step) {
    critic.update_features(xs, ys, 0.05);
    mse.push_back(critic.loss_features(xs, ys));
    if (!within && mse.back() <= optimum * 1.01) within = step;
  }
  bool monotone = true;
  for (std::size_t i = 1; i < mse.size(); ++i) monotone = monotone && mse[i] <= mse[i - 1] * (1.0 + 1e-12);
  return {within.has_value() && monotone,
          "optimum MSE " + fmt(optimum) + ", final " + fmt(mse.back()) + ", within 1% at step " +
              (within ? std::to_string(*within) : std::string("never")) +
              (monotone ? ", nonincreasing throughout" : ", not monotone")};
}

}  // namespace

int main() {
  log::set_min_level(log::Level::warn);
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
      {"C1 reward exactness", c1_reward},
      {"C2 pass@k oracle equivalence", c2_pass_at_k},
      {"C3 gradient correctness", c3_gradients},
      {"C4 end-to-end learning", c4_learning},
      {"C5 replay buffer ablation", c5_buffer_ablation},
      {"C6 KL controller", c6_controller},
      {"C7 canonicalization", c7_canonicalization},
      {"C8 conversion fidelity", c8_conversion},
      {"C9 critic regression", c9_critic},
      {"C10 determinism", c10_determinism},
  };
  int failures = 0;
  for (const auto& [name, check] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::cout << (v.pass ? "PASS " : "FAIL ") << name << ": " << v.detail << " [" << fmt(seconds) << " s]"
              << std::endl;
    failures += !v.pass;
  }
  fs::remove_all(work_dir());
  return failures == 0 ? 0 : 1;
}
