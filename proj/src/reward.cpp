#include "utrl/reward.hpp"

#include <algorithm>
#include <cmath>

#include "utrl/errors.hpp"

namespace utrl {

void RewardConfig::validate() const {
  if (!(lambda > 0.0 && std::isfinite(lambda))) throw ConfigError("reward lambda must be positive");
  if (!(eta > 0.0 && std::isfinite(eta))) throw ConfigError("reward eta must be positive");
  if (!std::isfinite(compile_penalty)) throw ConfigError("compile_penalty must be finite");
  if (rho == 0.0) throw ConfigError("target KL rho must not be zero");
  if (!(rho > 0.0)) throw ConfigError("target KL rho must be positive");
  if (!(zeta_init >= 0.0 && std::isfinite(zeta_init))) throw ConfigError("zeta_init must be non-negative");
  if (!(controller_gain > 0.0 && controller_gain < 1.0)) throw ConfigError("controller_gain must lie in (0, 1)");
  if (!(controller_clip > 0.0 && std::isfinite(controller_clip))) throw ConfigError("controller_clip must be positive");
}

double functional_reward(const ExecutionOutcome& outcome, const RewardConfig& config) {
  if (!outcome.compiled) return config.compile_penalty;
  if (outcome.total_tests == 0) throw DataError("functional reward undefined for zero unit tests");
  const double fraction = static_cast<double>(outcome.passed_tests) / static_cast<double>(outcome.total_tests);
  return config.lambda * std::pow(fraction, config.eta);
}

double sequence_kl(std::span<const double> logp_policy, std::span<const double> logp_reference) {
  if (logp_policy.size() != logp_reference.size()) {
    throw DataError("sequence_kl: " + std::to_string(logp_policy.size()) + " policy log-probs vs " +
                    std::to_string(logp_reference.size()) + " reference log-probs");
  }
  double kl = 0.0;
  for (std::size_t t = 0; t < logp_policy.size(); ++t) kl += logp_policy[t] - logp_reference[t];
  return kl;
}

RewardRecord total_reward(double functional, double kl, double zeta) {
  RewardRecord r;
  r.functional = functional;
  r.kl_estimate = kl;
  r.zeta_used = zeta;
  r.total = kl == 0.0 ? functional : functional - zeta * kl;
  return r;
}

RewardRecord buffer_reward(const RewardConfig& config) { return total_reward(config.r_max(), 0.0, 0.0); }

double update_zeta(double measured_mean_kl, const RewardConfig& config, double zeta) {
  if (config.rho == 0.0) throw ConfigError("target KL rho must not be zero");
  if (zeta < 0.0) throw ConfigError("zeta must be non-negative");
  double error;
  if (std::isinf(config.rho)) {
    error = -config.controller_clip;
  } else {
    error = std::clamp((measured_mean_kl - config.rho) / config.rho, -config.controller_clip, config.controller_clip);
  }
  return zeta * (1.0 + config.controller_gain * error);
}

namespace {

// JSON has no infinity; the unbounded target KL is spelled "inf".
nlohmann::json encode_rho(double rho) {
  if (std::isinf(rho)) return "inf";
  return rho;
}

double decode_rho(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "Infinity") return std::numeric_limits<double>::infinity();
    throw ConfigError("rho must be a number or \"inf\"");
  }
  return j.get<double>();
}

}  // namespace

void to_json(nlohmann::json& j, const RewardConfig& c) {
  j = nlohmann::json{{"lambda", c.lambda},
                     {"eta", c.eta},
                     {"compile_penalty", c.compile_penalty},
                     {"rho", encode_rho(c.rho)},
                     {"zeta_init", c.zeta_init},
                     {"controller_gain", c.controller_gain},
                     {"controller_clip", c.controller_clip}};
}

void from_json(const nlohmann::json& j, RewardConfig& c) {
  c.lambda = j.value("lambda", c.lambda);
  c.eta = j.value("eta", c.eta);
  c.compile_penalty = j.value("compile_penalty", c.compile_penalty);
  if (j.contains("rho")) c.rho = decode_rho(j["rho"]);
  c.zeta_init = j.value("zeta_init", c.zeta_init);
  c.controller_gain = j.value("controller_gain", c.controller_gain);
  c.controller_clip = j.value("controller_clip", c.controller_clip);
}

void to_json(nlohmann::json& j, const RewardRecord& r) {
  j = nlohmann::json{{"functional", r.functional}, {"kl", r.kl_estimate}, {"zeta", r.zeta_used}, {"total", r.total}};
}

}  // namespace utrl
