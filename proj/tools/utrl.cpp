#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "utrl/augment.hpp"
#include "utrl/errors.hpp"
#include "utrl/evaluator.hpp"
#include "utrl/log.hpp"
#include "utrl/protocol.hpp"
#include "utrl/run_config.hpp"
#include "utrl/text.hpp"

using namespace utrl;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kAbort = 2;

// Config file plus one --<field> flag per schema leaf; flags win.
struct ConfigOptions {
  std::string config_path;
  std::map<std::string, std::string> overrides;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "JSON run configuration; flags below override its fields");
    const json defaults = RunConfig{};
    for (const auto& field : config_fields()) {
      const json* node = &defaults;
      std::size_t start = 0;
      for (;;) {
        const auto dot = field.find('.', start);
        node = &(*node)[field.substr(start, dot == std::string::npos ? std::string::npos : dot - start)];
        if (dot == std::string::npos) break;
        start = dot + 1;
      }
      app->add_option("--" + field, overrides[field], "default " + node->dump());
    }
  }

  RunConfig resolve(CLI::App* app) const {
    json j = json::object();
    if (!config_path.empty()) j = json(load_run_config(config_path));
    for (const auto& [field, value] : overrides) {
      if (app->count("--" + field) > 0) apply_override(j, field, value);
    }
    RunConfig c = parse_run_config(j);
    c.validate();
    return c;
  }
};

std::vector<Problem> pick_split(const LoadedData& d, const std::string& split) {
  if (split == "train") return d.train;
  if (split == "validation") return d.validation;
  if (split == "test") return d.test;
  throw ConfigError("--split must be train, validation or test");
}

// A checkpoint reference is an epoch directory, a run directory (its `best`
// pointer, else the latest epoch) or a policy file.
std::string resolve_checkpoint(const std::string& ref) {
  const fs::path p(ref);
  if (fs::is_regular_file(p)) return p.string();
  if (fs::exists(p / "policy.bin")) return (p / "policy.bin").string();
  if (fs::exists(p / "best")) return (p / trim(read_file((p / "best").string())) / "policy.bin").string();
  if (fs::is_directory(p / "checkpoints")) {
    std::size_t latest = 0;
    for (const auto& e : fs::directory_iterator(p / "checkpoints")) {
      const std::string name = e.path().filename().string();
      if (starts_with(name, "epoch-") && name.find('.') == std::string::npos) {
        latest = std::max<std::size_t>(latest, std::stoul(name.substr(6)));
      }
    }
    if (latest > 0) return (p / "checkpoints" / ("epoch-" + std::to_string(latest)) / "policy.bin").string();
  }
  throw ConfigError("no checkpoint found at " + ref);
}

int cmd_train(const RunConfig& config, const LoadedData& data, bool resume) {
  const auto record = run_training(config, data, resume);
  std::cout << run_summary(record).dump(2) << "\n";
  return kOk;
}

int cmd_evaluate(const RunConfig& config, const LoadedData& data, const std::string& checkpoint,
                 const std::string& split, const std::string& out) {
  const auto problems = pick_split(data, split);
  if (problems.empty()) throw ConfigError("split '" + split + "' has no problems");
  Sandbox sandbox(make_sandbox_config(config));
  auto policy = make_policy(config);
  if (!checkpoint.empty()) policy->load(resolve_checkpoint(checkpoint));
  auto report = evaluate(problems, *policy, sandbox, config.eval);
  report.timestamp = iso_timestamp();
  const std::string prefix = out.empty() ? (fs::path(config.output_dir) / ("eval-" + split)).string() : out;
  if (fs::path(prefix).has_parent_path()) fs::create_directories(fs::path(prefix).parent_path());
  write_report(report, prefix);
  std::cout << report_to_tsv(report);
  return kOk;
}

std::string cell_name(const json& value) {
  std::string s = value.is_string() ? value.get<std::string>() : value.dump();
  for (char& ch : s) {
    if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
  }
  return s;
}

json median(std::vector<double> v) {
  if (v.empty()) return nullptr;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

int cmd_ablate(const RunConfig& base, const LoadedData& data, const std::string& sweep,
               const std::vector<std::string>& values_in, std::vector<std::uint64_t> seeds) {
  std::vector<json> values;
  if (sweep == "rho") {
    if (values_in.empty()) {
      values = {"inf", 0.1, 0.08, 0.07, 0.05, 0.02};
    } else {
      for (const auto& v : values_in) values.push_back(v == "inf" ? json("inf") : json(std::stod(v)));
    }
  } else if (sweep == "buffer") {
    values = {true, false};
  } else {
    throw ConfigError("--sweep must be 'rho' or 'buffer'");
  }
  if (seeds.empty()) seeds = {base.train.seed};
  std::vector<RunConfig> cells;
  for (const auto& v : values) {
    for (auto seed : seeds) {
      json j = base;
      if (sweep == "rho") {
        j["reward"]["rho"] = v;
      } else {
        j["buffer_enabled"] = v;
      }
      j["seed"] = seed;
      j["output_dir"] = (fs::path(base.output_dir) / (sweep + "-" + cell_name(v)) / ("seed-" + std::to_string(seed)))
                            .string();
      RunConfig c = parse_run_config(j);
      c.validate();
      cells.push_back(c);
    }
  }
  json table = json::array();
  std::string tsv = sweep + "\tseeds\tmedian_final_train_greedy\tmedian_best_validation_greedy\t"
                            "median_distinct_valid\tmedian_final_mean_kl\n";
  std::size_t k = 0;
  for (const auto& v : values) {
    std::vector<double> train_greedy, val_greedy, distinct, kl;
    json runs = json::array();
    for (std::size_t s = 0; s < seeds.size(); ++s, ++k) {
      const auto record = run_training(cells[k], data);
      const json summary = run_summary(record);
      runs.push_back(summary);
      if (summary.contains("final_train_greedy") && summary["final_train_greedy"].is_number()) {
        train_greedy.push_back(summary["final_train_greedy"].get<double>());
      }
      if (summary.contains("best_validation_greedy")) val_greedy.push_back(summary["best_validation_greedy"].get<double>());
      if (!record.epochs.empty()) {
        distinct.push_back(static_cast<double>(record.epochs.back().distinct_valid));
        kl.push_back(record.epochs.back().mean_kl);
      }
    }
    const json row{{"value", v},
                   {"median_final_train_greedy", median(train_greedy)},
                   {"median_best_validation_greedy", median(val_greedy)},
                   {"median_distinct_valid", median(distinct)},
                   {"median_final_mean_kl", median(kl)},
                   {"runs", runs}};
    table.push_back(row);
    std::ostringstream line;
    line.precision(6);
    line << (v.is_string() ? v.get<std::string>() : v.dump()) << '\t' << seeds.size();
    for (const char* key : {"median_final_train_greedy", "median_best_validation_greedy", "median_distinct_valid",
                            "median_final_mean_kl"}) {
      line << '\t';
      if (row[key].is_null()) {
        line << '-';
      } else {
        line << row[key].get<double>();
      }
    }
    tsv += line.str() + "\n";
  }
  fs::create_directories(base.output_dir);
  write_file((fs::path(base.output_dir) / ("ablation-" + sweep + ".json")).string(),
             json{{"sweep", sweep}, {"seeds", seeds}, {"cells", table}}.dump(2) + "\n");
  write_file((fs::path(base.output_dir) / ("ablation-" + sweep + ".tsv")).string(), tsv);
  std::cout << tsv;
  return kOk;
}

int cmd_serve_toy(const RunConfig& config, const std::string& checkpoint, const std::string& socket) {
  ToyPolicy policy(config.policy.toy);
  if (!checkpoint.empty()) policy.load(resolve_checkpoint(checkpoint));
  if (socket.empty()) {
    serve_stream(policy, std::cin, std::cout);
  } else {
    serve_socket(policy, socket);
  }
  return kOk;
}

int cmd_augment(const AugmentConfig& config) {
  const auto result = run_augment(config);
  std::cout << result.counts.to_json().dump(2) << "\n";
  return kOk;
}

int cmd_convert_tests(const std::string& in, const std::string& out, double tolerance) {
  const auto result = convert_suites_file(in, out, ConvertOptions{tolerance});
  std::cout << result.to_json().dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unit-test-driven reinforcement learning harness for code synthesis"};
  app.require_subcommand(1);
  std::string log_level = "info";
  app.add_option("--log-level", log_level, "debug, info, warn or error");

  auto* train = app.add_subcommand("train", "Run the training loop");
  ConfigOptions train_opts;
  train_opts.attach(train);
  bool resume = false;
  train->add_flag("--resume", resume, "Continue from the latest checkpoint in output_dir");

  auto* eval = app.add_subcommand("evaluate", "Greedy and pass@k evaluation of a checkpoint");
  ConfigOptions eval_opts;
  eval_opts.attach(eval);
  std::string checkpoint, split = "test", out;
  eval->add_option("--checkpoint", checkpoint, "Run directory, epoch directory or policy file");
  eval->add_option("--split", split, "train, validation or test");
  eval->add_option("--out", out, "Report path prefix (writes .json and .tsv)");

  auto* ablate = app.add_subcommand("ablate", "Run a rho or buffer on/off sweep and tabulate");
  ConfigOptions ablate_opts;
  ablate_opts.attach(ablate);
  std::string sweep = "rho";
  std::vector<std::string> values;
  std::vector<std::uint64_t> seeds;
  ablate->add_option("--sweep", sweep, "rho or buffer");
  ablate->add_option("--values", values, "rho values (default inf 0.1 0.08 0.07 0.05 0.02)");
  ablate->add_option("--seeds", seeds, "Seeds per cell (default: the config seed)");

  auto* serve = app.add_subcommand("serve-toy", "Serve the toy policy over the wire protocol");
  ConfigOptions serve_opts;
  serve_opts.attach(serve);
  std::string serve_checkpoint, socket;
  serve->add_option("--checkpoint", serve_checkpoint, "Policy checkpoint to load");
  serve->add_option("--socket", socket, "Unix socket path; default serves stdin/stdout");

  auto* augment = app.add_subcommand("augment", "Mine a source corpus into augmented instances");
  AugmentConfig aug;
  augment->add_option("--corpus", aug.corpus_root, "Source corpus directory")->required();
  augment->add_option("--out", aug.output, "Output instance file (jsonl)")->required();
  augment->add_option("--generator", aug.generator_command,
                      "Test generator command template; placeholders {workspace} {class} {budget} {source}");
  augment->add_option("--source-compiler", aug.compile_command, "Source compile check command template");
  augment->add_option("--budget", aug.time_budget_seconds, "Generator time budget in seconds");
  augment->add_option("--min-tokens", aug.min_tokens, "Shortest description kept");
  augment->add_option("--max-tokens", aug.max_tokens, "Longest description kept");
  augment->add_option("--tolerance", aug.float_tolerance, "Compare floating expected values within this absolute tolerance (0 keeps ==)");
  augment->add_option("--workers", aug.workers, "Parallel generator invocations");

  auto* convert = app.add_subcommand("convert-tests", "Convert externally generated suites to instances");
  std::string convert_in, convert_out;
  double convert_tolerance = 0.0;
  convert->add_option("--in", convert_in, "Suites file (jsonl)")->required();
  convert->add_option("--out", convert_out, "Output instance file (jsonl)")->required();
  convert->add_option("--tolerance", convert_tolerance, "Compare floating expected values within this absolute tolerance (0 keeps ==)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kInvalid;
  }

  try {
    log::set_min_level(log::parse_level(log_level));
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInvalid;
  }

  // Validation errors surface before any side effect.
  std::optional<RunConfig> config;
  std::optional<LoadedData> data;
  try {
    if (train->parsed()) config = train_opts.resolve(train);
    if (eval->parsed()) config = eval_opts.resolve(eval);
    if (ablate->parsed()) config = ablate_opts.resolve(ablate);
    if (serve->parsed()) config = serve_opts.resolve(serve);
    if (augment->parsed()) aug.validate();
    if (train->parsed() || eval->parsed() || ablate->parsed()) data = load_data(config->data);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInvalid;
  } catch (const DataError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInvalid;
  }

  try {
    if (train->parsed()) return cmd_train(*config, *data, resume);
    if (eval->parsed()) return cmd_evaluate(*config, *data, checkpoint, split, out);
    if (ablate->parsed()) return cmd_ablate(*config, *data, sweep, values, seeds);
    if (serve->parsed()) return cmd_serve_toy(*config, serve_checkpoint, socket);
    if (augment->parsed()) return cmd_augment(aug);
    if (convert->parsed()) return cmd_convert_tests(convert_in, convert_out, convert_tolerance);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kInvalid;
  } catch (const std::exception& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return kAbort;
  }
  return kOk;
}
