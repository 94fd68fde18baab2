#include "utrl/run_config.hpp"

#include <algorithm>
#include <filesystem>
#include <set>

#include "utrl/buffer.hpp"
#include "utrl/canonical.hpp"
#include "utrl/errors.hpp"
#include "utrl/protocol.hpp"
#include "utrl/text.hpp"

namespace utrl {

using nlohmann::json;
namespace fs = std::filesystem;

void DataConfig::validate() const {
  if (format != "jsonl" && format != "mbpp") throw ConfigError("data.format must be 'jsonl' or 'mbpp'");
  if (format == "mbpp" && (!validation.empty() || !test.empty())) {
    throw ConfigError("data.format 'mbpp' splits data.train by id; leave data.validation and data.test empty");
  }
  if (!(augmented_weight >= 0.0 && augmented_weight <= 1.0)) {
    throw ConfigError("data.augmented_weight must lie in [0, 1]");
  }
}

void PolicyConfig::validate() const {
  if (backend == "toy") {
    toy.validate();
  } else if (backend == "external") {
    if (command.empty() && socket.empty()) throw ConfigError("external policy needs policy.command or policy.socket");
  } else {
    throw ConfigError("policy.backend must be 'toy' or 'external'");
  }
}

void RunConfig::validate() const {
  train.validate();
  data.validate();
  policy.validate();
  critic.validate();
  eval.validate();
  if (sandbox.interpreter.empty()) throw ConfigError("sandbox.interpreter must not be empty");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
}

void to_json(json& j, const DataConfig& c) {
  j = json{{"format", c.format},
           {"train", c.train},
           {"validation", c.validation},
           {"test", c.test},
           {"augmented", c.augmented},
           {"augmented_weight", c.augmented_weight}};
}

void from_json(const json& j, DataConfig& c) {
  c.format = j.value("format", c.format);
  c.train = j.value("train", c.train);
  c.validation = j.value("validation", c.validation);
  c.test = j.value("test", c.test);
  c.augmented = j.value("augmented", c.augmented);
  c.augmented_weight = j.value("augmented_weight", c.augmented_weight);
}

void to_json(json& j, const PolicyConfig& c) {
  j = json{{"backend", c.backend}, {"toy", c.toy}, {"command", c.command}, {"socket", c.socket}, {"retries", c.retries}};
}

void from_json(const json& j, PolicyConfig& c) {
  c.backend = j.value("backend", c.backend);
  if (j.contains("toy")) from_json(j["toy"], c.toy);
  c.command = j.value("command", c.command);
  c.socket = j.value("socket", c.socket);
  c.retries = j.value("retries", c.retries);
}

void to_json(json& j, const SandboxSettings& c) {
  j = json{{"interpreter", c.interpreter},
           {"workers", c.workers},
           {"isolate_network", c.isolate_network},
           {"cache_outcomes", c.cache_outcomes}};
}

void from_json(const json& j, SandboxSettings& c) {
  c.interpreter = j.value("interpreter", c.interpreter);
  c.workers = j.value("workers", c.workers);
  c.isolate_network = j.value("isolate_network", c.isolate_network);
  c.cache_outcomes = j.value("cache_outcomes", c.cache_outcomes);
}

void to_json(json& j, const EvalConfig& c) {
  j = json{{"n_samples", c.n_samples}, {"ks", c.ks}, {"decoding", c.decoding}, {"seed", c.seed}};
}

void from_json(const json& j, EvalConfig& c) {
  c.n_samples = j.value("n_samples", c.n_samples);
  c.ks = j.value("ks", c.ks);
  if (j.contains("decoding")) from_json(j["decoding"], c.decoding);
  c.seed = j.value("seed", c.seed);
}

void to_json(json& j, const RunConfig& c) {
  j = c.train;
  j["data"] = c.data;
  j["policy"] = c.policy;
  j["critic"] = c.critic;
  j["eval"] = c.eval;
  j["sandbox"] = c.sandbox;
  j["output_dir"] = c.output_dir;
}

void from_json(const json& j, RunConfig& c) {
  from_json(j, c.train);
  if (j.contains("data")) from_json(j["data"], c.data);
  if (j.contains("policy")) from_json(j["policy"], c.policy);
  if (j.contains("critic")) from_json(j["critic"], c.critic);
  if (j.contains("eval")) from_json(j["eval"], c.eval);
  if (j.contains("sandbox")) from_json(j["sandbox"], c.sandbox);
  c.output_dir = j.value("output_dir", c.output_dir);
}

namespace {

void flatten(const json& j, const std::string& prefix, std::vector<std::string>& out) {
  if (j.is_object()) {
    for (const auto& [key, value] : j.items()) flatten(value, prefix.empty() ? key : prefix + "." + key, out);
  } else {
    out.push_back(prefix);
  }
}

}  // namespace

std::vector<std::string> config_fields() {
  std::vector<std::string> out;
  flatten(json(RunConfig{}), "", out);
  std::sort(out.begin(), out.end());
  return out;
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  const auto known = config_fields();
  const std::set<std::string> schema(known.begin(), known.end());
  std::vector<std::string> given;
  flatten(j, "", given);
  for (const auto& f : given) {
    if (!schema.count(f)) throw ConfigError("unknown config field: " + f);
  }
  try {
    return j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  return parse_run_config(j);
}

void apply_override(json& config, const std::string& field, const std::string& value) {
  json parsed;
  try {
    parsed = json::parse(value);
  } catch (const json::exception&) {
    parsed = value;
  }
  json* node = &config;
  std::size_t start = 0;
  for (;;) {
    const auto dot = field.find('.', start);
    const std::string key = field.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (dot == std::string::npos) {
      (*node)[key] = parsed;
      return;
    }
    if (!node->contains(key) || !(*node)[key].is_object()) (*node)[key] = json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

SandboxConfig make_sandbox_config(const RunConfig& config) {
  SandboxConfig s;
  s.interpreter = config.sandbox.interpreter;
  s.workers = config.sandbox.workers;
  s.isolate_network = config.sandbox.isolate_network;
  s.cache_outcomes = config.sandbox.cache_outcomes;
  s.limits = config.train.limits;
  return s;
}

std::unique_ptr<Policy> make_policy(const RunConfig& config) {
  const auto& p = config.policy;
  if (p.backend == "toy") return std::make_unique<ToyPolicy>(p.toy);
  std::unique_ptr<Transport> transport;
  if (!p.command.empty()) {
    transport = std::make_unique<StdioTransport>(p.command);
  } else {
    transport = std::make_unique<SocketTransport>(p.socket);
  }
  return std::make_unique<ExternalPolicy>(std::move(transport), p.retries);
}

LoadedData load_data(const DataConfig& config) {
  LoadedData d;
  if (config.format == "mbpp") {
    if (config.train.empty()) throw ConfigError("data.train must name the MBPP file");
    auto split = load_mbpp(config.train);
    d.train = std::move(split.train);
    d.validation = std::move(split.validation);
    d.test = std::move(split.test);
  } else {
    if (!config.train.empty()) d.train = load_problems(config.train);
    if (!config.validation.empty()) d.validation = load_problems(config.validation);
    if (!config.test.empty()) d.test = load_problems(config.test);
  }
  if (!config.augmented.empty()) {
    for (auto& p : load_augmented(config.augmented)) {
      p.loss_weight = config.augmented_weight;
      d.train.push_back(std::move(p));
    }
  }
  return d;
}

nlohmann::json run_summary(const RunRecord& record) {
  json j{{"epochs", record.epochs.size()}, {"early_stopped", record.early_stopped}};
  j["initial_train_greedy"] = record.initial_train_greedy ? json(*record.initial_train_greedy) : json();
  j["best_epoch"] = record.best_epoch ? json(*record.best_epoch) : json();
  if (!record.epochs.empty()) {
    const auto& last = record.epochs.back();
    j["final_train_greedy"] = last.train_greedy ? json(*last.train_greedy) : json();
    j["final_distinct_valid"] = last.distinct_valid;
    j["final_buffer_total"] = last.buffer_total;
    j["final_mean_kl"] = last.mean_kl;
    j["final_zeta"] = last.zeta_next;
    if (record.best_epoch) j["best_validation_greedy"] = *record.epochs[*record.best_epoch - 1].validation_greedy;
  }
  return j;
}

RunRecord run_training(const RunConfig& config, const LoadedData& data, bool resume) {
  config.validate();
  if (data.train.empty()) throw ConfigError("no training problems");
  fs::create_directories(config.output_dir);
  write_file((fs::path(config.output_dir) / "config.json").string(), json(config).dump(2) + "\n");
  Sandbox sandbox(make_sandbox_config(config));
  auto policy = make_policy(config);
  Critic critic(config.critic);
  ReplayBuffer buffer(Canonicalizer(&sandbox.front_end()), &sandbox);
  Trainer trainer(config.train, *policy, critic, buffer, sandbox);
  trainer.set_run_dir(config.output_dir);
  if (resume) trainer.resume();
  const RunRecord record = trainer.train(data.train, data.validation);
  write_file((fs::path(config.output_dir) / "run.json").string(), run_summary(record).dump(2) + "\n");
  return record;
}

}  // namespace utrl
