#include "utrl/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "utrl/errors.hpp"
#include "utrl/evaluator.hpp"
#include "utrl/log.hpp"
#include "utrl/rng.hpp"
#include "utrl/text.hpp"

namespace fs = std::filesystem;

namespace utrl {

void TrainConfig::validate() const {
  if (n_gen == 0) throw ConfigError("n_gen must be positive");
  if (n_mini == 0) throw ConfigError("n_mini must be positive");
  if (!(policy_lr > 0.0 && std::isfinite(policy_lr))) throw ConfigError("policy_lr must be positive");
  if (!(critic_lr > 0.0 && std::isfinite(critic_lr))) throw ConfigError("critic_lr must be positive");
  if (!(stop_at_train_solve_rate >= 0.0 && stop_at_train_solve_rate <= 1.0)) {
    throw ConfigError("stop_at_train_solve_rate must lie in [0, 1]");
  }
  if (stop_at_train_solve_rate > 0.0 && train_eval_every == 0) {
    throw ConfigError("stop_at_train_solve_rate needs train_eval_every > 0");
  }
  decoding.validate();
  reward.validate();
  limits.validate();
}

std::size_t select_checkpoint(const std::vector<std::optional<double>>& scores) {
  std::optional<std::size_t> best;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!scores[i]) continue;
    if (!best || *scores[i] > *scores[*best]) best = i;
  }
  if (!best) throw DataError("no validation score recorded; cannot select a checkpoint");
  return *best + 1;
}

Trainer::Trainer(TrainConfig config, Policy& policy, Critic& critic, ReplayBuffer& buffer, Sandbox& sandbox)
    : config_(std::move(config)),
      policy_(policy),
      critic_(critic),
      buffer_(buffer),
      sandbox_(sandbox),
      controller_(config_.reward) {
  config_.validate();
}

void Trainer::set_run_dir(const std::string& dir) {
  run_dir_ = dir;
  if (!dir.empty()) fs::create_directories(fs::path(dir) / "checkpoints");
}

namespace {

std::string epoch_dir_name(std::size_t epoch) { return "epoch-" + std::to_string(epoch); }

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  shuffle_in_place(order, rng);
  return order;
}

}  // namespace

void Trainer::initialize(const std::vector<Problem>& train) {
  policy_.freeze_reference();
  for (const auto& p : train) buffer_.ensure(p.id);
  if (!config_.buffer_enabled) return;
  std::size_t seeded = 0;
  for (const auto& p : train) {
    for (const auto& s : p.seed_solutions) seeded += buffer_.add_if_new(p, s, 0) ? 1 : 0;
  }
  log::info("buffer seeded with " + std::to_string(seeded) + " solutions");
}

EpochBatch Trainer::build_epoch_batch(const std::vector<Problem>& problems, std::size_t epoch) {
  EpochBatch batch;
  const double zeta = controller_.zeta();

  std::vector<std::vector<Trajectory>> samples(problems.size());
  std::vector<Sandbox::Job> jobs;
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    Rng rng = substream(config_.seed, "generate", epoch * 1000003ULL + i);
    samples[i] = policy_.sample_batch(make_prompt(p), config_.n_gen, config_.decoding, rng());
    for (const auto& tr : samples[i]) jobs.push_back({assemble_solution(p, tr.text), p.unit_tests});
  }
  const auto outcomes = sandbox_.run_batch(jobs);

  std::size_t k = 0;
  std::vector<std::pair<std::size_t, std::string>> valid;  // (problem, program) to insert after sampling
  for (std::size_t i = 0; i < problems.size(); ++i) {
    const auto& p = problems[i];
    for (auto& tr : samples[i]) {
      const auto& outcome = outcomes[k];
      const std::string& program = jobs[k].code;
      ++k;
      const double functional = functional_reward(outcome, config_.reward);
      const double kl = sequence_kl(tr.logp_policy, tr.logp_reference);
      tr.problem_id = p.id;
      tr.origin = TrajectoryOrigin::generated;
      tr.reward = total_reward(functional, kl, zeta);
      batch.sum_kl += kl;
      batch.sum_functional += functional;
      batch.sum_total += tr.reward->total;
      batch.compiled += outcome.compiled ? 1 : 0;
      if (outcome.all_passed()) {
        ++batch.fully_passed;
        valid.emplace_back(i, program);
      }
      batch.entries.push_back({std::move(tr), p.loss_weight, i});
      ++batch.generated;
    }
    if (config_.buffer_enabled) {
      Rng rng = substream(config_.seed, "buffer", epoch * 1000003ULL + i);
      for (const auto& solution : buffer_.sample_valid(p.id, config_.n_gen, rng)) {
        Trajectory tr;
        tr.problem_id = p.id;
        tr.prompt = make_prompt(p);
        tr.text = completion_from_program(solution, p.signature);
        tr.terminated = true;
        tr.origin = TrajectoryOrigin::buffer;
        if (!policy_.representable(tr.text)) continue;
        tr.reward = buffer_reward(config_.reward);
        batch.entries.push_back({std::move(tr), p.loss_weight, i});
        ++batch.buffered;
      }
    }
  }
  for (const auto& [i, program] : valid) {
    if (buffer_.add_if_new(problems[i], program, epoch)) {
      ++batch.new_valid;
    }
  }
  return batch;
}

double Trainer::policy_phase(EpochBatch& batch, const std::vector<Problem>& problems, std::size_t epoch) {
  (void)problems;
  const auto order = shuffled_indices(batch.entries.size(), substream(config_.seed, "policy-shuffle", epoch));
  double objective = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config_.n_mini) {
    const std::size_t end = std::min(order.size(), start + config_.n_mini);
    std::vector<UpdateItem> items;
    items.reserve(end - start);
    for (std::size_t j = start; j < end; ++j) {
      auto& e = batch.entries[order[j]];
      auto& tr = e.trajectory;
      const double baseline = critic_.score(tr.prompt, tr.text, tr.embedding);
      tr.advantage = advantage(tr.reward->total, baseline);
      items.push_back({tr.prompt, tr.text, tr.terminated, *tr.advantage, e.loss_weight});
    }
    const double value = policy_.apply_update(items, config_.policy_lr);
    if (!std::isfinite(value)) throw NumericError("policy objective is not finite at epoch " + std::to_string(epoch));
    objective += value;
  }
  return objective;
}

double Trainer::critic_phase(const EpochBatch& batch, const std::vector<Problem>& problems, std::size_t epoch) {
  (void)problems;
  const auto order = shuffled_indices(batch.entries.size(), substream(config_.seed, "critic-shuffle", epoch));
  double loss = 0.0;
  std::size_t steps = 0;
  for (std::size_t start = 0; start < order.size(); start += config_.n_mini) {
    const std::size_t end = std::min(order.size(), start + config_.n_mini);
    std::vector<CriticSample> samples;
    samples.reserve(end - start);
    for (std::size_t j = start; j < end; ++j) {
      const auto& tr = batch.entries[order[j]].trajectory;
      samples.push_back({tr.prompt, tr.text, tr.embedding, tr.reward->total});
    }
    loss += critic_.update(samples, config_.critic_lr);
    ++steps;
  }
  return steps ? loss / static_cast<double>(steps) : 0.0;
}

RunRecord Trainer::train(const std::vector<Problem>& train, const std::vector<Problem>& validation) {
  if (start_epoch_ == 0) {
    record_ = RunRecord{};
    distinct_valid_ = 0;
    initialize(train);
    if (config_.train_eval_every > 0) {
      record_.initial_train_greedy = greedy_solve_rate(train, policy_, sandbox_, config_.decoding.max_len);
    }
  }
  for (std::size_t epoch = start_epoch_ + 1; epoch <= config_.max_epochs && !record_.early_stopped; ++epoch) {
    EpochMetrics m;
    m.epoch = epoch;
    m.zeta = controller_.zeta();
    EpochBatch batch = build_epoch_batch(train, epoch);
    distinct_valid_ += batch.new_valid;
    m.policy_objective = policy_phase(batch, train, epoch);
    m.critic_loss = critic_phase(batch, train, epoch);
    const double g = batch.generated ? static_cast<double>(batch.generated) : 1.0;
    m.mean_kl = batch.sum_kl / g;
    m.mean_functional = batch.sum_functional / g;
    m.mean_reward = batch.sum_total / g;
    m.compile_rate = static_cast<double>(batch.compiled) / g;
    m.pass_rate = static_cast<double>(batch.fully_passed) / g;
    m.batch_size = batch.entries.size();
    m.generated = batch.generated;
    m.buffer_samples = batch.buffered;
    m.new_valid = batch.new_valid;
    m.distinct_valid = distinct_valid_;
    m.buffer_total = buffer_.total();
    m.zeta_next = controller_.update(m.mean_kl);

    if (!validation.empty() && config_.validation_every > 0 && epoch % config_.validation_every == 0) {
      m.validation_greedy = greedy_solve_rate(validation, policy_, sandbox_, config_.decoding.max_len);
    }
    if (config_.train_eval_every > 0 && (epoch % config_.train_eval_every == 0 || epoch == config_.max_epochs)) {
      m.train_greedy = greedy_solve_rate(train, policy_, sandbox_, config_.decoding.max_len);
      if (config_.stop_at_train_solve_rate > 0.0 && *m.train_greedy >= config_.stop_at_train_solve_rate) {
        record_.early_stopped = true;
      }
    }
    record_.epochs.push_back(m);
    std::vector<std::optional<double>> scores;
    for (const auto& e : record_.epochs) scores.push_back(e.validation_greedy);
    if (std::any_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); })) {
      record_.best_epoch = select_checkpoint(scores);
    }
    log::info("epoch " + std::to_string(epoch) + ": mean reward " + std::to_string(m.mean_reward) + ", kl " +
              std::to_string(m.mean_kl) + ", zeta " + std::to_string(m.zeta_next) + ", buffer " +
              std::to_string(m.buffer_total) +
              (m.train_greedy ? ", train greedy " + std::to_string(*m.train_greedy) : std::string()) +
              (m.validation_greedy ? ", validation greedy " + std::to_string(*m.validation_greedy) : std::string()));
    if (!run_dir_.empty()) {
      save_checkpoint(epoch);
      write_metrics();
      prune_checkpoints(epoch);
    }
    start_epoch_ = epoch;
  }
  return record_;
}

void Trainer::write_metrics() const {
  std::string text;
  for (const auto& m : record_.epochs) text += nlohmann::json(m).dump() + "\n";
  write_file((fs::path(run_dir_) / "metrics.jsonl").string(), text);
}

void Trainer::save_checkpoint(std::size_t epoch) {
  const fs::path dir = fs::path(run_dir_) / "checkpoints" / epoch_dir_name(epoch);
  const fs::path tmp = fs::path(run_dir_) / "checkpoints" / (epoch_dir_name(epoch) + ".partial");
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  policy_.save((tmp / "policy.bin").string());
  critic_.save((tmp / "critic.json").string());
  buffer_.save((tmp / "buffer.jsonl").string());
  nlohmann::json state{{"epoch", epoch},
                       {"zeta", controller_.zeta()},
                       {"distinct_valid", distinct_valid_},
                       {"early_stopped", record_.early_stopped},
                       {"metrics", record_.epochs}};
  if (record_.initial_train_greedy) state["initial_train_greedy"] = *record_.initial_train_greedy;
  write_file((tmp / "state.json").string(), state.dump() + "\n");
  fs::remove_all(dir);
  fs::rename(tmp, dir);
  if (record_.best_epoch) {
    write_file((fs::path(run_dir_) / "best").string(),
               "checkpoints/" + epoch_dir_name(*record_.best_epoch) + "\n");
  }
}

void Trainer::prune_checkpoints(std::size_t epoch) {
  const fs::path root = fs::path(run_dir_) / "checkpoints";
  for (const auto& entry : fs::directory_iterator(root)) {
    const std::string name = entry.path().filename().string();
    if (!starts_with(name, "epoch-") || name.find('.') != std::string::npos) continue;
    const std::size_t e = std::stoul(name.substr(6));
    const bool recent = e + config_.keep_checkpoints > epoch;
    const bool best = record_.best_epoch && *record_.best_epoch == e;
    if (!recent && !best) fs::remove_all(entry.path());
  }
}

std::size_t Trainer::resume() {
  if (run_dir_.empty()) throw ConfigError("resume needs a run directory");
  const fs::path root = fs::path(run_dir_) / "checkpoints";
  std::size_t latest = 0;
  if (fs::exists(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      const std::string name = entry.path().filename().string();
      if (!starts_with(name, "epoch-") || name.find('.') != std::string::npos) continue;
      if (!fs::exists(entry.path() / "state.json")) continue;
      latest = std::max<std::size_t>(latest, std::stoul(name.substr(6)));
    }
  }
  if (latest == 0) return 0;
  const fs::path dir = root / epoch_dir_name(latest);
  nlohmann::json state;
  try {
    state = nlohmann::json::parse(read_file((dir / "state.json").string()));
    policy_.load((dir / "policy.bin").string());
    critic_.load((dir / "critic.json").string());
    buffer_.load((dir / "buffer.jsonl").string());
    record_ = RunRecord{};
    record_.epochs = state.at("metrics").get<std::vector<EpochMetrics>>();
    record_.early_stopped = state.value("early_stopped", false);
    if (state.contains("initial_train_greedy")) record_.initial_train_greedy = state["initial_train_greedy"].get<double>();
    controller_.set_zeta(state.at("zeta").get<double>());
    distinct_valid_ = state.at("distinct_valid").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("cannot resume from " + dir.string() + ": " + e.what());
  }
  std::vector<std::optional<double>> scores;
  for (const auto& e : record_.epochs) scores.push_back(e.validation_greedy);
  if (std::any_of(scores.begin(), scores.end(), [](const auto& s) { return s.has_value(); })) {
    record_.best_epoch = select_checkpoint(scores);
  }
  start_epoch_ = latest;
  log::info("resumed from epoch " + std::to_string(latest));
  return latest;
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"max_epochs", c.max_epochs},
                     {"n_gen", c.n_gen},
                     {"n_mini", c.n_mini},
                     {"policy_lr", c.policy_lr},
                     {"critic_lr", c.critic_lr},
                     {"decoding", c.decoding},
                     {"reward", c.reward},
                     {"limits", c.limits},
                     {"seed", c.seed},
                     {"buffer_enabled", c.buffer_enabled},
                     {"validation_every", c.validation_every},
                     {"train_eval_every", c.train_eval_every},
                     {"stop_at_train_solve_rate", c.stop_at_train_solve_rate},
                     {"keep_checkpoints", c.keep_checkpoints}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.max_epochs = j.value("max_epochs", c.max_epochs);
  c.n_gen = j.value("n_gen", c.n_gen);
  c.n_mini = j.value("n_mini", c.n_mini);
  c.policy_lr = j.value("policy_lr", c.policy_lr);
  c.critic_lr = j.value("critic_lr", c.critic_lr);
  if (j.contains("decoding")) from_json(j["decoding"], c.decoding);
  if (j.contains("reward")) from_json(j["reward"], c.reward);
  if (j.contains("limits")) from_json(j["limits"], c.limits);
  c.seed = j.value("seed", c.seed);
  c.buffer_enabled = j.value("buffer_enabled", c.buffer_enabled);
  c.validation_every = j.value("validation_every", c.validation_every);
  c.train_eval_every = j.value("train_eval_every", c.train_eval_every);
  c.stop_at_train_solve_rate = j.value("stop_at_train_solve_rate", c.stop_at_train_solve_rate);
  c.keep_checkpoints = j.value("keep_checkpoints", c.keep_checkpoints);
}

namespace {

nlohmann::json optional_number(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

}  // namespace

void to_json(nlohmann::json& j, const EpochMetrics& m) {
  j = nlohmann::json{{"epoch", m.epoch},
                     {"zeta", m.zeta},
                     {"zeta_next", m.zeta_next},
                     {"mean_reward", m.mean_reward},
                     {"mean_functional", m.mean_functional},
                     {"mean_kl", m.mean_kl},
                     {"compile_rate", m.compile_rate},
                     {"pass_rate", m.pass_rate},
                     {"batch_size", m.batch_size},
                     {"generated", m.generated},
                     {"buffer_samples", m.buffer_samples},
                     {"new_valid", m.new_valid},
                     {"distinct_valid", m.distinct_valid},
                     {"buffer_total", m.buffer_total},
                     {"policy_objective", m.policy_objective},
                     {"critic_loss", m.critic_loss},
                     {"validation_greedy", optional_number(m.validation_greedy)},
                     {"train_greedy", optional_number(m.train_greedy)}};
}

void from_json(const nlohmann::json& j, EpochMetrics& m) {
  m.epoch = j.at("epoch").get<std::size_t>();
  m.zeta = j.at("zeta").get<double>();
  m.zeta_next = j.at("zeta_next").get<double>();
  m.mean_reward = j.at("mean_reward").get<double>();
  m.mean_functional = j.at("mean_functional").get<double>();
  m.mean_kl = j.at("mean_kl").get<double>();
  m.compile_rate = j.at("compile_rate").get<double>();
  m.pass_rate = j.at("pass_rate").get<double>();
  m.batch_size = j.at("batch_size").get<std::size_t>();
  m.generated = j.at("generated").get<std::size_t>();
  m.buffer_samples = j.at("buffer_samples").get<std::size_t>();
  m.new_valid = j.at("new_valid").get<std::size_t>();
  m.distinct_valid = j.at("distinct_valid").get<std::size_t>();
  m.buffer_total = j.at("buffer_total").get<std::size_t>();
  m.policy_objective = j.at("policy_objective").get<double>();
  m.critic_loss = j.at("critic_loss").get<double>();
  if (!j.at("validation_greedy").is_null()) m.validation_greedy = j["validation_greedy"].get<double>();
  if (!j.at("train_greedy").is_null()) m.train_greedy = j["train_greedy"].get<double>();
}

}  // namespace utrl
