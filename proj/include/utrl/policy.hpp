#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/reward.hpp"

namespace utrl {

enum class DecodeMode { nucleus, greedy };

struct DecodingParams {
  double top_p = 0.8;
  double temperature = 0.95;
  std::size_t max_len = 512;
  DecodeMode mode = DecodeMode::nucleus;

  void validate() const;
  bool operator==(const DecodingParams&) const = default;
};

enum class TrajectoryOrigin { generated, buffer };

struct Trajectory {
  std::string problem_id;
  std::string prompt;
  std::vector<int> tokens;
  std::string text;  // decoded completion, end-of-sequence symbol excluded
  bool terminated = false;  // ended with end-of-sequence rather than max_len
  std::vector<double> logp_policy;
  std::vector<double> logp_reference;
  TrajectoryOrigin origin = TrajectoryOrigin::generated;
  std::optional<RewardRecord> reward;
  std::optional<double> advantage;
  std::vector<double> embedding;  // optional final-token representation (external LMs)
};

struct ScoreResult {
  std::vector<int> tokens;
  std::vector<double> logp_policy;
  std::vector<double> logp_reference;
  std::vector<double> embedding;
};

// One term of the advantage-weighted log-likelihood objective.
struct UpdateItem {
  std::string prompt;
  std::string completion;
  bool terminated = true;
  double advantage = 0.0;
  double weight = 1.0;
};

// The capability the trainer needs from a policy, in-process or remote.
class Policy {
 public:
  virtual ~Policy() = default;

  // n independent samples; `seed` fixes the sampler's randomness.
  virtual std::vector<Trajectory> sample_batch(const std::string& prompt, std::size_t n, const DecodingParams& params,
                                               std::uint64_t seed) = 0;
  virtual Trajectory greedy(const std::string& prompt, std::size_t max_len) = 0;
  // Per-token log-probabilities of `completion` (plus end-of-sequence when
  // terminated) under the current and the reference parameters.
  virtual ScoreResult score(const std::string& prompt, const std::string& completion, bool terminated = true) = 0;
  // One ascent step on sum_i w_i * A_i * log pi(completion_i | prompt_i).
  // Returns the objective before the step.
  virtual double apply_update(std::span<const UpdateItem> batch, double learning_rate) = 0;
  virtual void freeze_reference() = 0;
  virtual void save(const std::string& path) = 0;
  virtual void load(const std::string& path) = 0;
  virtual std::string backend() const = 0;
  // Whether the policy's tokenizer can express `completion` at all.
  virtual bool representable(const std::string& completion) const {
    (void)completion;
    return true;
  }
};

// Smallest descending-probability prefix whose mass reaches top_p,
// renormalized; ties keep index order. top_p >= 1 returns the input.
std::vector<double> nucleus_filter(std::span<const double> distribution, double top_p);

// Samples an index from a normalized distribution given u in [0, 1).
std::size_t sample_index(std::span<const double> distribution, double u);

// Throws NumericError unless every advantage and weight is finite.
void check_update_batch(std::span<const UpdateItem> batch);

void to_json(nlohmann::json& j, const DecodingParams& p);
void from_json(const nlohmann::json& j, DecodingParams& p);

}  // namespace utrl
