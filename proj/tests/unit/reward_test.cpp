#include "utrl/reward.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "utrl/errors.hpp"

using namespace utrl;

namespace {

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

RewardConfig reference_config() {
  RewardConfig c;
  c.lambda = 50.0;
  c.eta = 0.5;
  return c;
}

}  // namespace

TEST(FunctionalReward, HandComputedValues) {
  const RewardConfig c = reference_config();
  EXPECT_EQ(functional_reward(outcome(4, 4), c), 50.0);
  EXPECT_EQ(functional_reward(outcome(0, 4, false), c), -10.0);
  EXPECT_EQ(functional_reward(outcome(1, 4), c), 25.0);  // 50 * sqrt(1/4)
  EXPECT_EQ(functional_reward(outcome(0, 4), c), 0.0);
}

TEST(FunctionalReward, ZeroTestsIsUndefined) {
  EXPECT_THROW(functional_reward(outcome(0, 0), reference_config()), DataError);
}

TEST(FunctionalReward, RangeAndMonotonicity) {
  const RewardConfig c = reference_config();
  for (std::size_t total = 1; total <= 30; ++total) {
    double prev = -1.0;
    for (std::size_t passed = 0; passed <= total; ++passed) {
      double r = functional_reward(outcome(passed, total), c);
      EXPECT_GE(r, 0.0);
      EXPECT_LE(r, c.lambda);
      EXPECT_GT(r, prev);
      prev = r;
    }
  }
}

TEST(FunctionalReward, FirstPassingTestIsWorthTheMost) {
  // For eta < 1 the 0 -> 1 gain strictly exceeds every later (m-1) -> m gain.
  std::mt19937 rng(7);
  std::uniform_int_distribution<std::size_t> totals(2, 200);
  std::uniform_real_distribution<double> etas(0.05, 0.95);
  for (int trial = 0; trial < 500; ++trial) {
    RewardConfig c = reference_config();
    c.eta = etas(rng);
    std::size_t total = totals(rng);
    double first = functional_reward(outcome(1, total), c) - functional_reward(outcome(0, total), c);
    std::uniform_int_distribution<std::size_t> ms(2, total);
    std::size_t m = ms(rng);
    double later = functional_reward(outcome(m, total), c) - functional_reward(outcome(m - 1, total), c);
    EXPECT_GT(first, later) << "total=" << total << " m=" << m << " eta=" << c.eta;
  }
}

TEST(SequenceKl, Examples) {
  std::vector<double> a{-0.3, -1.2, -0.01};
  EXPECT_EQ(sequence_kl(a, a), 0.0);
  std::vector<double> p{-1.0, -1.0}, r{-1.5, -1.5};
  EXPECT_DOUBLE_EQ(sequence_kl(p, r), 1.0);
  EXPECT_EQ(sequence_kl({}, {}), 0.0);
  std::vector<double> shorter{-1.0};
  EXPECT_THROW(sequence_kl(p, shorter), DataError);
}

TEST(TotalReward, Examples) {
  auto r = total_reward(50.0, 0.1, 1.0);
  EXPECT_DOUBLE_EQ(r.total, 49.9);
  EXPECT_EQ(r.total, 50.0 - 1.0 * 0.1);
  EXPECT_EQ(total_reward(37.5, 0.0, 123.0).total, 37.5);
  EXPECT_DOUBLE_EQ(total_reward(-10.0, 0.5, 2.0).total, -11.0);
  auto b = buffer_reward(reference_config());
  EXPECT_EQ(b.total, 50.0);
  EXPECT_EQ(b.kl_estimate, 0.0);
}

TEST(UpdateZeta, ControllerFormula) {
  RewardConfig c = reference_config();
  c.rho = 0.07;
  c.controller_gain = 0.1;
  c.controller_clip = 0.2;
  EXPECT_EQ(update_zeta(0.07, c, 1.5), 1.5);
  EXPECT_DOUBLE_EQ(update_zeta(0.14, c, 1.5), 1.5 * 1.02);
  EXPECT_DOUBLE_EQ(update_zeta(0.0, c, 1.5), 1.5 * 0.98);
  // Inside the clip band the response is proportional.
  EXPECT_DOUBLE_EQ(update_zeta(0.077, c, 1.0), 1.0 + 0.1 * 0.1);
}

TEST(UpdateZeta, ZeroRhoIsAConfigurationError) {
  RewardConfig c = reference_config();
  c.rho = 0.0;
  EXPECT_THROW(update_zeta(0.1, c, 1.0), ConfigError);
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(UpdateZeta, PersistentErrorDrivesZetaMonotonically) {
  RewardConfig c = reference_config();
  KlController above(c), below(c);
  double za = above.zeta(), zb = below.zeta();
  for (int i = 0; i < 200; ++i) {
    above.update(0.5);
    below.update(0.01);
    EXPECT_GT(above.zeta(), za);
    EXPECT_LT(below.zeta(), zb);
    EXPECT_GE(below.zeta(), 0.0);
    za = above.zeta();
    zb = below.zeta();
  }
}

TEST(UpdateZeta, InfiniteTargetDecaysZeta) {
  RewardConfig c = reference_config();
  c.rho = std::numeric_limits<double>::infinity();
  c.validate();
  KlController k(c);
  for (int i = 0; i < 1000; ++i) k.update(i % 2 ? 1e6 : 0.0);
  EXPECT_LT(k.zeta(), 1e-8);
  EXPECT_GE(k.zeta(), 0.0);
}

TEST(RewardConfigJson, RoundTripIncludingInfiniteRho) {
  RewardConfig c = reference_config();
  c.rho = std::numeric_limits<double>::infinity();
  nlohmann::json j = c;
  EXPECT_EQ(j["rho"], "inf");
  RewardConfig back = j.get<RewardConfig>();
  EXPECT_EQ(back, c);
}
