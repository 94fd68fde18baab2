#pragma once

#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/critic.hpp"
#include "utrl/dataset.hpp"
#include "utrl/evaluator.hpp"
#include "utrl/policy.hpp"
#include "utrl/sandbox.hpp"
#include "utrl/toy_policy.hpp"
#include "utrl/trainer.hpp"

namespace utrl {

struct DataConfig {
  std::string format = "jsonl";  // jsonl (harness instances) or mbpp
  std::string train;             // jsonl: training instances; mbpp: the full dump, split by id
  std::string validation;        // jsonl only
  std::string test;              // jsonl only
  std::string augmented;         // optional augmented instances appended to the training split
  double augmented_weight = 0.2;

  void validate() const;
  bool operator==(const DataConfig&) const = default;
};

struct PolicyConfig {
  std::string backend = "toy";       // toy or external
  ToyPolicyConfig toy;
  std::vector<std::string> command;  // external: server program speaking the wire protocol on stdio
  std::string socket;                // external: unix socket path (used when command is empty)
  std::size_t retries = 3;           // external: reconnect attempts per request

  void validate() const;
  bool operator==(const PolicyConfig&) const = default;
};

struct SandboxSettings {
  std::vector<std::string> interpreter{"python3", "-I", "-B", "-S"};
  std::size_t workers = 0;
  bool isolate_network = true;
  bool cache_outcomes = true;

  bool operator==(const SandboxSettings&) const = default;
};

// Everything one `train` or `evaluate` invocation needs. Training fields sit
// at the top level so command-line flags mirror TrainConfig names.
struct RunConfig {
  TrainConfig train;
  DataConfig data;
  PolicyConfig policy;
  CriticConfig critic;
  EvalConfig eval;
  SandboxSettings sandbox;
  std::string output_dir = "runs/default";

  void validate() const;
  bool operator==(const RunConfig&) const = default;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);
void to_json(nlohmann::json& j, const PolicyConfig& c);
void from_json(const nlohmann::json& j, PolicyConfig& c);
void to_json(nlohmann::json& j, const SandboxSettings& c);
void from_json(const nlohmann::json& j, SandboxSettings& c);
void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);
void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);

// Dotted paths of every leaf in the config schema, e.g. "decoding.top_p".
std::vector<std::string> config_fields();

// Parses a config document, rejecting keys the schema does not know.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::string& path);

// Sets one dotted field from its command-line spelling. The value is read as
// JSON when it parses, otherwise as a plain string.
void apply_override(nlohmann::json& config, const std::string& field, const std::string& value);

SandboxConfig make_sandbox_config(const RunConfig& config);
std::unique_ptr<Policy> make_policy(const RunConfig& config);

struct LoadedData {
  std::vector<Problem> train;
  std::vector<Problem> validation;
  std::vector<Problem> test;
};
LoadedData load_data(const DataConfig& config);

// Trains into config.output_dir: echoes the config, builds sandbox, policy,
// critic and buffer, optionally resumes, then runs the trainer. Writes
// run.json with the run summary.
RunRecord run_training(const RunConfig& config, const LoadedData& data, bool resume = false);

nlohmann::json run_summary(const RunRecord& record);

}  // namespace utrl
