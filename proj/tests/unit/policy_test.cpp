#include "utrl/policy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "utrl/errors.hpp"
#include "utrl/toy_policy.hpp"

using namespace utrl;

namespace {

ToyPolicyConfig small_config(std::uint64_t seed = 1) {
  ToyPolicyConfig c;
  c.vocabulary = {"a", "b", "c", " ", "+", "1"};
  c.context_window = 2;
  c.buckets = 257;
  c.seed = seed;
  return c;
}

double sum(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

}  // namespace

TEST(NucleusFilter, HandRenormalizedExample) {
  std::vector<double> d{0.5, 0.3, 0.15, 0.05};
  auto out = nucleus_filter(d, 0.8);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_NEAR(out[0], 0.625, 1e-12);
  EXPECT_NEAR(out[1], 0.375, 1e-12);
  EXPECT_EQ(out[2], 0.0);
  EXPECT_EQ(out[3], 0.0);
}

TEST(NucleusFilter, FullMassAndOneHotAreUnchanged) {
  std::vector<double> d{0.1, 0.2, 0.3, 0.4};
  EXPECT_EQ(nucleus_filter(d, 1.0), d);
  std::vector<double> one_hot{0.0, 1.0, 0.0};
  for (double p : {0.01, 0.5, 0.8, 1.0}) EXPECT_EQ(nucleus_filter(one_hot, p), one_hot);
}

TEST(NucleusFilter, RejectsBadInput) {
  std::vector<double> d{0.5, 0.5};
  EXPECT_THROW(nucleus_filter(d, 0.0), ConfigError);
  EXPECT_THROW(nucleus_filter(d, -0.5), ConfigError);
  std::vector<double> bad{0.5, 0.4};
  EXPECT_THROW(nucleus_filter(bad, 0.8), DataError);
}

TEST(NucleusFilter, TiesKeepIndexOrder) {
  std::vector<double> d{0.25, 0.25, 0.25, 0.25};
  auto out = nucleus_filter(d, 0.5);
  EXPECT_NEAR(out[0], 0.5, 1e-12);
  EXPECT_NEAR(out[1], 0.5, 1e-12);
  EXPECT_EQ(out[2], 0.0);
  EXPECT_EQ(out[3], 0.0);
}

TEST(NucleusFilter, OutputIsNormalizedAndSupportIsMinimal) {
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> sizes(1, 30);
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<double> d(static_cast<std::size_t>(sizes(rng)));
    for (double& x : d) x = u(rng) * u(rng);
    double z = sum(d);
    if (z == 0.0) continue;
    for (double& x : d) x /= z;
    const double p = 0.05 + 0.9 * u(rng);
    auto out = nucleus_filter(d, p);
    EXPECT_NEAR(sum(out), 1.0, 1e-9);
    double retained = 0.0, smallest = 2.0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (out[i] > 0.0) {
        retained += d[i];
        smallest = std::min(smallest, d[i]);
      }
    }
    EXPECT_GE(retained, p - 1e-12);
    EXPECT_LT(retained - smallest, p);
    // Every dropped token is no more likely than every kept one.
    for (std::size_t i = 0; i < d.size(); ++i) {
      if (out[i] == 0.0) EXPECT_LE(d[i], smallest);
    }
  }
}

TEST(DecodingParams, DefaultsAndValidation) {
  DecodingParams p;
  EXPECT_EQ(p.top_p, 0.8);
  EXPECT_EQ(p.temperature, 0.95);
  EXPECT_EQ(p.max_len, 512u);
  p.temperature = 0.0;
  EXPECT_THROW(p.validate(), ConfigError);
  p = DecodingParams{};
  p.top_p = 1.5;
  EXPECT_THROW(p.validate(), ConfigError);
}

TEST(ToyPolicy, EmptyVocabularyIsRejected) {
  ToyPolicyConfig c;
  EXPECT_THROW(ToyPolicy{c}, ConfigError);
}

TEST(ToyPolicy, FreshPolicyIsUniform) {
  ToyPolicy pol(small_config());
  auto d = pol.next_distribution("prompt", std::vector<int>{1, 2});
  ASSERT_EQ(d.size(), 7u);
  for (double x : d) EXPECT_DOUBLE_EQ(x, 1.0 / 7.0);
}

TEST(ToyPolicy, TokenizeRoundTripAndUnrepresentable) {
  ToyPolicy pol(small_config());
  auto t = pol.tokenize("a+1 b");
  EXPECT_EQ(pol.detokenize(t), "a+1 b");
  EXPECT_THROW(pol.tokenize("az"), DataError);
  EXPECT_FALSE(pol.representable("z"));
  EXPECT_TRUE(pol.representable("cab"));
}

TEST(ToyPolicy, SampledLogProbsMatchScore) {
  auto c = small_config(3);
  c.init_scale = 0.7;
  ToyPolicy pol(c);
  DecodingParams p;
  p.max_len = 12;
  auto batch = pol.sample_batch("q", 8, p, 42);
  ASSERT_EQ(batch.size(), 8u);
  for (const auto& tr : batch) {
    ASSERT_EQ(tr.tokens.size(), tr.logp_policy.size());
    ASSERT_EQ(tr.tokens.size(), tr.logp_reference.size());
    EXPECT_LE(tr.tokens.size(), p.max_len);
    EXPECT_TRUE(tr.terminated || tr.tokens.size() == p.max_len);
    auto s = pol.score("q", tr.text, tr.terminated);
    EXPECT_EQ(s.tokens, tr.tokens);
    for (std::size_t t = 0; t < s.tokens.size(); ++t) {
      EXPECT_DOUBLE_EQ(s.logp_policy[t], tr.logp_policy[t]);
      EXPECT_DOUBLE_EQ(s.logp_reference[t], tr.logp_reference[t]);
    }
  }
}

TEST(ToyPolicy, SamplingIsSeededAndGreedyIsDeterministic) {
  auto c = small_config(5);
  c.init_scale = 0.5;
  ToyPolicy pol(c);
  DecodingParams p;
  p.max_len = 10;
  auto a = pol.sample_batch("q", 4, p, 9);
  auto b = pol.sample_batch("q", 4, p, 9);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].tokens, b[i].tokens);
  auto g1 = pol.greedy("q", 10);
  auto g2 = pol.greedy("q", 10);
  EXPECT_EQ(g1.tokens, g2.tokens);
  EXPECT_EQ(g1.logp_policy, g2.logp_policy);
}

TEST(ToyPolicy, CollapsedPolicyGivesIdenticalSamples) {
  ToyPolicy pol(small_config());
  std::vector<UpdateItem> corpus{{"q", "a+1", true, 1.0, 1.0}};
  pol.pretrain(corpus, 2.0, 200);
  DecodingParams p;
  p.max_len = 8;
  auto batch = pol.sample_batch("q", 8, p, 1);
  for (const auto& tr : batch) EXPECT_EQ(tr.text, "a+1");
  EXPECT_EQ(pol.greedy("q", 8).text, "a+1");
}

TEST(ToyPolicy, PromptLongerThanMaxLenIsRejected) {
  ToyPolicy pol(small_config());
  DecodingParams p;
  p.max_len = 4;
  EXPECT_THROW(pol.sample_batch("too long prompt", 2, p, 0), DataError);
  EXPECT_THROW(pol.greedy("too long prompt", 4), DataError);
}

TEST(ToyPolicy, ZeroAdvantageLeavesParametersUnchanged) {
  auto c = small_config();
  c.init_scale = 0.3;
  ToyPolicy pol(c);
  auto before = pol.parameters();
  std::vector<UpdateItem> batch{{"q", "ab", true, 0.0, 1.0}, {"r", "c1", false, 0.0, 0.2}};
  pol.apply_update(batch, 0.5);
  EXPECT_EQ(pol.parameters(), before);
}

TEST(ToyPolicy, PositiveAdvantageRaisesLikelihood) {
  ToyPolicy pol(small_config());
  auto before = pol.score("q", "abc");
  std::vector<UpdateItem> batch{{"q", "abc", true, 1.0, 1.0}};
  pol.apply_update(batch, 1e-3);
  auto after = pol.score("q", "abc");
  EXPECT_GT(sum(after.logp_policy), sum(before.logp_policy));
}

TEST(ToyPolicy, WeightScalesTheParameterDelta) {
  auto c = small_config();
  c.init_scale = 0.2;
  ToyPolicy full(c), weighted(c);
  const auto base = full.parameters();
  std::vector<UpdateItem> one{{"q", "a b", true, 1.5, 1.0}};
  std::vector<UpdateItem> fifth{{"q", "a b", true, 1.5, 0.2}};
  full.apply_update(one, 0.01);
  weighted.apply_update(fifth, 0.01);
  for (std::size_t i = 0; i < base.size(); ++i) {
    const double d1 = full.parameters()[i] - base[i];
    const double d2 = weighted.parameters()[i] - base[i];
    EXPECT_NEAR(d2, 0.2 * d1, 1e-15 + 1e-12 * std::abs(d1));
  }
}

TEST(ToyPolicy, NonFiniteAdvantageRejectsBatch) {
  ToyPolicy pol(small_config());
  auto before = pol.parameters();
  std::vector<UpdateItem> batch{{"q", "a", true, 1.0, 1.0}, {"q", "b", true, std::nan(""), 1.0}};
  EXPECT_THROW(pol.apply_update(batch, 0.1), NumericError);
  EXPECT_EQ(pol.parameters(), before);
}

TEST(ToyPolicy, ApplyUpdateReturnsObjectiveBeforeStep) {
  auto c = small_config();
  c.init_scale = 0.4;
  ToyPolicy pol(c);
  std::vector<UpdateItem> batch{{"q", "ab", true, 2.0, 1.0}, {"r", "1+", false, -1.0, 0.5}};
  const double expected = pol.objective(batch);
  EXPECT_DOUBLE_EQ(pol.apply_update(batch, 0.1), expected);
}

TEST(ToyPolicy, ReferenceInvariantAfterFreeze) {
  auto c = small_config();
  c.init_scale = 0.1;
  ToyPolicy pol(c);
  pol.freeze_reference();
  const std::vector<std::string> corpus{"a", "b+1", "cc ", "1"};
  std::vector<std::vector<double>> before;
  for (const auto& s : corpus) before.push_back(pol.score("q", s).logp_reference);
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> adv(-1.0, 1.0);
  for (int step = 0; step < 1000; ++step) {
    std::vector<UpdateItem> batch{{"q", corpus[static_cast<std::size_t>(step) % corpus.size()], true, adv(rng), 1.0}};
    pol.apply_update(batch, 0.05);
  }
  for (std::size_t i = 0; i < corpus.size(); ++i) EXPECT_EQ(pol.score("q", corpus[i]).logp_reference, before[i]);
  EXPECT_NE(pol.score("q", "a").logp_policy, pol.score("q", "a").logp_reference);
}

TEST(ToyPolicy, SaveLoadRoundTripIsBitExact) {
  auto c = small_config(8);
  c.init_scale = 0.3;
  ToyPolicy pol(c);
  pol.freeze_reference();
  std::vector<UpdateItem> batch{{"q", "abc", true, 1.0, 1.0}};
  pol.apply_update(batch, 0.2);
  const auto path = (std::filesystem::temp_directory_path() / "utrl_toy_policy.bin").string();
  pol.save(path);
  ToyPolicy other(small_config(99));
  other.load(path);
  std::filesystem::remove(path);
  EXPECT_EQ(other.config(), pol.config());
  EXPECT_EQ(other.parameters(), pol.parameters());
  EXPECT_EQ(other.reference_parameters(), pol.reference_parameters());
  auto a = pol.score("q", "c+1"), b = other.score("q", "c+1");
  EXPECT_EQ(a.logp_policy, b.logp_policy);
  EXPECT_EQ(a.logp_reference, b.logp_reference);
}

TEST(ToyPolicy, LoadRejectsGarbage) {
  const auto path = (std::filesystem::temp_directory_path() / "utrl_not_a_policy.bin").string();
  {
    std::ofstream out(path);
    out << "hello";
  }
  ToyPolicy pol(small_config());
  EXPECT_THROW(pol.load(path), DataError);
  std::filesystem::remove(path);
}

// Central differences against the analytic gradient on random instances.
TEST(ToyPolicy, AnalyticGradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<std::size_t> vocab_size(2, 20), context(1, 3), length(0, 6), batch_size(1, 4);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double h = 1e-5;
  double worst = 0.0;
  for (int instance = 0; instance < 100; ++instance) {
    ToyPolicyConfig c;
    const std::size_t v = vocab_size(rng);
    for (std::size_t i = 0; i < v; ++i) c.vocabulary.emplace_back(1, static_cast<char>('a' + i));
    c.context_window = context(rng);
    c.buckets = 13;
    c.seed = rng();
    c.init_scale = 0.5;
    ToyPolicy pol(c);
    std::vector<UpdateItem> batch;
    const std::size_t b = batch_size(rng);
    for (std::size_t i = 0; i < b; ++i) {
      UpdateItem item;
      item.prompt = "p" + std::to_string(rng() % 3);
      const std::size_t len = length(rng);
      for (std::size_t k = 0; k < len; ++k) item.completion += c.vocabulary[rng() % v];
      item.terminated = rng() % 2 == 0 || item.completion.empty();
      item.advantage = u(rng);
      item.weight = 0.2 + 0.8 * (u(rng) + 1.0) / 2.0;
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
  EXPECT_LT(worst, 1e-5);
}
