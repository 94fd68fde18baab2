#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace utrl {

enum class Activation { relu, tanh };
enum class CriticHead { mlp, linear };

struct CriticConfig {
  std::size_t feature_dim = 512;
  std::size_t hidden = 256;  // mlp head only
  Activation activation = Activation::relu;
  CriticHead head = CriticHead::mlp;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const CriticConfig&) const = default;
};

struct CriticSample {
  std::string prompt;
  std::string solution;
  std::vector<double> embedding;  // optional; replaces hashed features when present
  double reward = 0.0;
};

// Splits code or prose into identifier/number runs and single punctuation
// characters; whitespace separates tokens and is dropped.
std::vector<std::string> critic_tokens(std::string_view text);

// Hashed token counts of prompt and solution in separate namespaces, L2-normalized.
std::vector<double> hashed_features(const std::string& prompt, const std::string& solution, std::size_t dim);

// Folds an arbitrary-length embedding into `dim` slots and L2-normalizes it.
std::vector<double> fold_embedding(std::span<const double> embedding, std::size_t dim);

// Sequence-level value model V(q, sigma, mu') used as the baseline.
// The feature extractor is fixed; only the head is trained.
class Critic {
 public:
  explicit Critic(CriticConfig config);

  std::vector<double> features(const std::string& prompt, const std::string& solution,
                               std::span<const double> embedding = {}) const;
  double score(const std::string& prompt, const std::string& solution, std::span<const double> embedding = {}) const;
  double score_features(std::span<const double> x) const;

  // One descent step on the mean squared error; returns the pre-step loss.
  double update(std::span<const CriticSample> batch, double learning_rate);
  double update_features(const std::vector<std::vector<double>>& xs, std::span<const double> targets,
                         double learning_rate);
  double loss_features(const std::vector<std::vector<double>>& xs, std::span<const double> targets) const;

  const CriticConfig& config() const { return config_; }
  std::vector<double> flat_parameters() const;
  void set_flat_parameters(std::span<const double> p);

  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  double forward(std::span<const double> x, std::vector<double>* hidden_pre) const;

  CriticConfig config_;
  std::vector<double> w1_;  // hidden x feature_dim, row-major
  std::vector<double> b1_;
  std::vector<double> w2_;  // hidden (mlp) or feature_dim (linear)
  double b2_ = 0.0;
};

// A_i = r_i - V(q_i, sigma_i, mu'_i).
inline double advantage(double reward, double baseline) { return reward - baseline; }

void to_json(nlohmann::json& j, const CriticConfig& c);
void from_json(const nlohmann::json& j, CriticConfig& c);

}  // namespace utrl
