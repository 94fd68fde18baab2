#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/buffer.hpp"
#include "utrl/critic.hpp"
#include "utrl/dataset.hpp"
#include "utrl/policy.hpp"
#include "utrl/reward.hpp"
#include "utrl/sandbox.hpp"

namespace utrl {

struct TrainConfig {
  std::size_t max_epochs = 100;
  std::size_t n_gen = 8;
  std::size_t n_mini = 32;
  double policy_lr = 5e-7;
  double critic_lr = 1e-6;
  DecodingParams decoding;
  RewardConfig reward;
  ExecutionLimits limits;
  std::uint64_t seed = 0;
  bool buffer_enabled = true;
  std::size_t validation_every = 1;     // 0 disables validation
  std::size_t train_eval_every = 0;     // greedy solve rate on the training set; 0 disables
  double stop_at_train_solve_rate = 0;  // stop once the training greedy rate reaches this; 0 disables
  std::size_t keep_checkpoints = 2;     // most recent epochs kept besides the best one

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct BatchEntry {
  Trajectory trajectory;  // reward and, after the policy phase, advantage filled in
  double loss_weight = 1.0;
  std::size_t problem = 0;  // index into the epoch's problem list
};

// B_train for one epoch plus generation statistics.
struct EpochBatch {
  std::vector<BatchEntry> entries;
  std::size_t generated = 0;
  std::size_t buffered = 0;
  std::size_t compiled = 0;
  std::size_t fully_passed = 0;
  std::size_t new_valid = 0;
  double sum_kl = 0.0;
  double sum_functional = 0.0;
  double sum_total = 0.0;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double zeta = 0.0;
  double zeta_next = 0.0;
  double mean_reward = 0.0;      // generated samples, KL term included
  double mean_functional = 0.0;  // generated samples
  double mean_kl = 0.0;          // generated samples
  double compile_rate = 0.0;
  double pass_rate = 0.0;
  std::size_t batch_size = 0;
  std::size_t generated = 0;
  std::size_t buffer_samples = 0;
  std::size_t new_valid = 0;
  std::size_t distinct_valid = 0;  // cumulative distinct canonical solutions found by generation
  std::size_t buffer_total = 0;
  double policy_objective = 0.0;
  double critic_loss = 0.0;
  std::optional<double> validation_greedy;
  std::optional<double> train_greedy;

  bool operator==(const EpochMetrics&) const = default;
};

struct RunRecord {
  std::vector<EpochMetrics> epochs;
  std::optional<double> initial_train_greedy;
  std::optional<std::size_t> best_epoch;
  bool early_stopped = false;
};

// Epoch (1-based) with the highest score; ties keep the earliest. Epochs
// without a score are skipped. Throws when nothing was scored.
std::size_t select_checkpoint(const std::vector<std::optional<double>>& scores);

// Runs the REINFORCE-with-critic loop: generate and reward, mix in buffer
// samples, policy minibatch steps, critic minibatch steps, KL controller,
// validation and checkpointing.
class Trainer {
 public:
  Trainer(TrainConfig config, Policy& policy, Critic& critic, ReplayBuffer& buffer, Sandbox& sandbox);

  // Persist metrics and checkpoints under `dir` (created if needed).
  void set_run_dir(const std::string& dir);
  // Restores the latest checkpoint in the run directory; returns the epoch
  // training will continue after, or 0 when there is none.
  std::size_t resume();

  RunRecord train(const std::vector<Problem>& train, const std::vector<Problem>& validation);

  EpochBatch build_epoch_batch(const std::vector<Problem>& problems, std::size_t epoch);
  double policy_phase(EpochBatch& batch, const std::vector<Problem>& problems, std::size_t epoch);
  double critic_phase(const EpochBatch& batch, const std::vector<Problem>& problems, std::size_t epoch);

  const TrainConfig& config() const { return config_; }
  double zeta() const { return controller_.zeta(); }
  const RunRecord& record() const { return record_; }

 private:
  void initialize(const std::vector<Problem>& train);
  void save_checkpoint(std::size_t epoch);
  void prune_checkpoints(std::size_t epoch);
  void write_metrics() const;

  TrainConfig config_;
  Policy& policy_;
  Critic& critic_;
  ReplayBuffer& buffer_;
  Sandbox& sandbox_;
  KlController controller_;
  std::string run_dir_;
  std::size_t start_epoch_ = 0;
  std::size_t distinct_valid_ = 0;
  RunRecord record_;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);
void to_json(nlohmann::json& j, const EpochMetrics& m);
void from_json(const nlohmann::json& j, EpochMetrics& m);

}  // namespace utrl
