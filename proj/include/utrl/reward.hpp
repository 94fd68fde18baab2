#pragma once

#include <limits>
#include <span>

#include "json.hpp"
#include "utrl/sandbox.hpp"

namespace utrl {

struct RewardConfig {
  double lambda = 50.0;           // reward scale
  double eta = 0.5;               // pass-fraction exponent
  double compile_penalty = -10.0;
  double rho = 0.07;              // target KL; +inf disables the constraint
  double zeta_init = 1.0;
  double controller_gain = 0.1;
  double controller_clip = 0.2;

  // A fully passing solution earns lambda * 1^eta.
  double r_max() const { return lambda; }
  void validate() const;
  bool operator==(const RewardConfig&) const = default;
};

struct RewardRecord {
  double functional = 0.0;
  double kl_estimate = 0.0;
  double zeta_used = 0.0;
  double total = 0.0;
};

// lambda * (passed/total)^eta when the code compiles, compile_penalty otherwise.
double functional_reward(const ExecutionOutcome& outcome, const RewardConfig& config);

// Single-sample estimate of the summed per-token KL along a sampled trajectory:
// sum_t (log pi(a_t) - log pi_ref(a_t)).
double sequence_kl(std::span<const double> logp_policy, std::span<const double> logp_reference);

RewardRecord total_reward(double functional, double kl, double zeta);

// Reward given to replay-buffer samples: r_max, no KL term.
RewardRecord buffer_reward(const RewardConfig& config);

// Proportional controller: e = clip((kl - rho) / rho, +-clip); zeta * (1 + gain * e).
double update_zeta(double measured_mean_kl, const RewardConfig& config, double zeta);

// Owns the adaptive coefficient across epochs.
class KlController {
 public:
  explicit KlController(const RewardConfig& config) : config_(config), zeta_(config.zeta_init) {}
  double zeta() const { return zeta_; }
  void set_zeta(double zeta) { zeta_ = zeta; }
  double update(double measured_mean_kl) { return zeta_ = update_zeta(measured_mean_kl, config_, zeta_); }

 private:
  RewardConfig config_;
  double zeta_;
};

void to_json(nlohmann::json& j, const RewardConfig& c);
void from_json(const nlohmann::json& j, RewardConfig& c);
void to_json(nlohmann::json& j, const RewardRecord& r);

}  // namespace utrl
