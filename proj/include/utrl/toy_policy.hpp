#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/policy.hpp"

namespace utrl {

struct ToyPolicyConfig {
  std::vector<std::string> vocabulary;  // symbols; token 0 is end-of-sequence
  std::size_t context_window = 3;       // longest n-gram context in characters
  std::size_t buckets = 1u << 16;       // hashed feature rows
  std::uint64_t seed = 0;               // feature-hash salt and optional init noise
  double init_scale = 0.0;              // 0 gives uniform next-token distributions

  void validate() const;
  bool operator==(const ToyPolicyConfig&) const = default;
};

// Printable ASCII plus newline, one symbol per character.
std::vector<std::string> ascii_vocabulary();

// Log-linear next-token model over hashed features: a bias row, the last
// 1..k tokens, and each of those crossed with a hash of the prompt.
// logits[a] = sum over active rows r of theta[r][a].
class ToyPolicy : public Policy {
 public:
  explicit ToyPolicy(ToyPolicyConfig config);

  std::vector<Trajectory> sample_batch(const std::string& prompt, std::size_t n, const DecodingParams& params,
                                       std::uint64_t seed) override;
  Trajectory greedy(const std::string& prompt, std::size_t max_len) override;
  ScoreResult score(const std::string& prompt, const std::string& completion, bool terminated = true) override;
  double apply_update(std::span<const UpdateItem> batch, double learning_rate) override;
  void freeze_reference() override;
  void save(const std::string& path) override;
  void load(const std::string& path) override;
  std::string backend() const override { return "toy"; }
  bool representable(const std::string& completion) const override;

  // Maximum-likelihood pretraining on (prompt, completion) pairs.
  double pretrain(std::span<const UpdateItem> corpus, double learning_rate, std::size_t steps);

  // Exposed for gradient checking.
  double objective(std::span<const UpdateItem> batch) const;
  std::vector<double> gradient(std::span<const UpdateItem> batch) const;
  std::vector<double>& parameters() { return theta_; }
  const std::vector<double>& parameters() const { return theta_; }
  const std::vector<double>& reference_parameters() const { return reference_; }

  std::vector<int> tokenize(const std::string& completion) const;
  std::string detokenize(std::span<const int> tokens) const;
  std::size_t actions() const { return config_.vocabulary.size() + 1; }
  const ToyPolicyConfig& config() const { return config_; }
  // Next-token distribution after `prefix`, untempered.
  std::vector<double> next_distribution(const std::string& prompt, std::span<const int> prefix) const;

 private:
  std::vector<std::size_t> features(std::uint64_t prompt_hash, std::span<const int> prefix) const;
  void logits(const std::vector<double>& params, std::span<const std::size_t> rows, std::vector<double>& out) const;
  std::vector<double> sequence_logp(const std::vector<double>& params, const std::string& prompt,
                                    std::span<const int> tokens) const;
  Trajectory decode(const std::string& prompt, const DecodingParams& params, std::uint64_t seed, std::size_t index);
  void check_prompt(const std::string& prompt, std::size_t max_len) const;

  ToyPolicyConfig config_;
  std::vector<double> theta_;
  std::vector<double> reference_;
};

void to_json(nlohmann::json& j, const ToyPolicyConfig& c);
void from_json(const nlohmann::json& j, ToyPolicyConfig& c);

}  // namespace utrl
