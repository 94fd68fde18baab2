#include "utrl/dataset.hpp"

#include <cctype>
#include <set>
#include <sstream>

#include "utrl/errors.hpp"
#include "utrl/log.hpp"
#include "utrl/sandbox.hpp"
#include "utrl/text.hpp"

namespace utrl {

using nlohmann::json;

namespace {

bool is_ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }

std::string record_error(std::size_t index, const std::string& what) {
  return "record " + std::to_string(index) + ": " + what;
}

const json& require(const json& record, std::size_t index, const char* field) {
  auto it = record.find(field);
  if (it == record.end() || it->is_null()) throw DataError(record_error(index, std::string("missing field '") + field + "'"));
  return *it;
}

std::string string_field(const json& v, std::size_t index, const char* field) {
  if (!v.is_string()) throw DataError(record_error(index, std::string("field '") + field + "' must be a string"));
  return v.get<std::string>();
}

std::vector<std::string> string_list(const json& v, std::size_t index, const char* field) {
  if (!v.is_array()) throw DataError(record_error(index, std::string("field '") + field + "' must be an array"));
  std::vector<std::string> out;
  for (const auto& e : v) out.push_back(string_field(e, index, field));
  return out;
}

std::string id_string(const json& v, std::size_t index) {
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  throw DataError(record_error(index, "field 'id' must be a string or integer"));
}

// Parses one JSON object per non-blank line and hands (record, index) to fn.
template <class Fn>
void for_each_record(const std::string& text, Fn&& fn) {
  std::size_t index = 0;
  for (const auto& line : split_lines(text)) {
    if (trim(line).empty()) continue;
    json record;
    try {
      record = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(record_error(index, std::string("invalid JSON: ") + e.what()));
    }
    if (!record.is_object()) throw DataError(record_error(index, "expected an object"));
    fn(record, index);
    ++index;
  }
  if (index == 0) throw DataError("no records");
}

void check_tests_reference_name(const Problem& p, std::size_t index) {
  const std::string name = function_name(p.signature);
  if (name.empty()) throw DataError(record_error(index, "signature is not a function header: '" + p.signature + "'"));
  for (const auto& t : p.unit_tests) {
    if (!references_identifier(t, name)) {
      throw DataError(record_error(index, "test does not reference '" + name + "': " + t));
    }
  }
}

// MBPP ships no signature; take the header of the gold-code function the tests call.
std::string derive_signature(const std::string& code, const std::vector<std::string>& tests, std::size_t index) {
  std::string fallback;
  for (const auto& raw : split_lines(code)) {
    std::string line = rtrim(raw);
    if (!starts_with(line, "def ")) continue;
    const std::string name = function_name(line);
    if (fallback.empty()) fallback = line;
    bool used = !tests.empty();
    for (const auto& t : tests) used = used && references_identifier(t, name);
    if (used) return line;
  }
  if (fallback.empty()) throw DataError(record_error(index, "cannot derive signature: gold code has no top-level def"));
  return fallback;
}

}  // namespace

json DatasetSplit::sizes() const {
  return json{{"train", train.size()}, {"validation", validation.size()}, {"test", test.size()}};
}

MbppPartition mbpp_partition(long id) {
  if (id >= 601) return MbppPartition::train;
  if (id >= 511) return MbppPartition::validation;
  return MbppPartition::test;
}

std::string function_name(const std::string& signature) {
  std::string s = trim(signature);
  if (starts_with(s, "async ")) s = trim(s.substr(6));
  if (!starts_with(s, "def ")) return {};
  std::size_t i = 4;
  while (i < s.size() && s[i] == ' ') ++i;
  std::size_t begin = i;
  while (i < s.size() && is_ident_char(s[i])) ++i;
  if (i == begin || i >= s.size() || s[i] != '(') return {};
  return s.substr(begin, i - begin);
}

bool references_identifier(const std::string& test, const std::string& name) {
  if (name.empty()) return false;
  std::size_t pos = 0;
  while ((pos = test.find(name, pos)) != std::string::npos) {
    bool left = pos == 0 || !is_ident_char(test[pos - 1]);
    std::size_t end = pos + name.size();
    bool right = end >= test.size() || !is_ident_char(test[end]);
    if (left && right) return true;
    pos = end;
  }
  return false;
}

Problem problem_from_json(const json& record, std::size_t index) {
  Problem p;
  p.id = id_string(require(record, index, "id"), index);
  p.description = string_field(require(record, index, "description"), index, "description");
  p.signature = rtrim(string_field(require(record, index, "signature"), index, "signature"));
  p.unit_tests = string_list(require(record, index, "tests"), index, "tests");
  if (auto it = record.find("solutions"); it != record.end() && !it->is_null()) {
    p.seed_solutions = string_list(*it, index, "solutions");
  }
  if (auto it = record.find("source"); it != record.end() && !it->is_null()) {
    const std::string src = string_field(*it, index, "source");
    if (src == "curated") {
      p.source = ProblemSource::curated;
    } else if (src == "augmented") {
      p.source = ProblemSource::augmented;
    } else {
      throw DataError(record_error(index, "unknown source '" + src + "'"));
    }
  }
  if (auto it = record.find("loss_weight"); it != record.end() && !it->is_null()) {
    if (!it->is_number()) throw DataError(record_error(index, "field 'loss_weight' must be a number"));
    p.loss_weight = it->get<double>();
  }
  if (!(p.loss_weight > 0.0 && p.loss_weight <= 1.0)) {
    throw DataError(record_error(index, "loss_weight must lie in (0, 1]"));
  }
  if (p.source == ProblemSource::curated && p.loss_weight != 1.0) {
    throw DataError(record_error(index, "curated problems must have loss_weight 1.0"));
  }
  if (p.unit_tests.empty()) throw DataError(record_error(index, "empty tests list"));
  check_tests_reference_name(p, index);
  return p;
}

json problem_to_json(const Problem& p) {
  json j{{"id", p.id},
         {"description", p.description},
         {"signature", p.signature},
         {"tests", p.unit_tests},
         {"source", p.source == ProblemSource::curated ? "curated" : "augmented"},
         {"loss_weight", p.loss_weight}};
  if (!p.seed_solutions.empty()) j["solutions"] = p.seed_solutions;
  return j;
}

std::string serialize_problems(const std::vector<Problem>& problems) {
  std::string out;
  for (const auto& p : problems) {
    out += problem_to_json(p).dump();
    out += '\n';
  }
  return out;
}

std::vector<Problem> parse_problems(const std::string& text) {
  std::vector<Problem> out;
  std::set<std::string> seen;
  for_each_record(text, [&](const json& record, std::size_t index) {
    Problem p = problem_from_json(record, index);
    if (!seen.insert(p.id).second) throw DataError(record_error(index, "duplicate id '" + p.id + "'"));
    out.push_back(std::move(p));
  });
  return out;
}

std::vector<Problem> load_problems(const std::string& path) { return parse_problems(read_file(path)); }

void save_problems(const std::string& path, const std::vector<Problem>& problems) {
  write_file(path, serialize_problems(problems));
}

DatasetSplit parse_mbpp(const std::string& text) {
  DatasetSplit split;
  std::set<long> seen;
  for_each_record(text, [&](const json& record, std::size_t index) {
    // Official MBPP names first, the harness's own names as fallback.
    auto pick = [&](const char* official, const char* own) -> const json& {
      if (record.contains(official)) return require(record, index, official);
      if (record.contains(own)) return require(record, index, own);
      throw DataError(record_error(index, std::string("missing field '") + official + "' (or '" + own + "')"));
    };
    const json& id_field = pick("task_id", "id");
    long id = 0;
    if (id_field.is_number_integer()) {
      id = id_field.get<long>();
    } else if (id_field.is_string()) {
      try {
        id = std::stol(id_field.get<std::string>());
      } catch (const std::exception&) {
        throw DataError(record_error(index, "MBPP id must be an integer"));
      }
    } else {
      throw DataError(record_error(index, "MBPP id must be an integer"));
    }
    if (id < 1) throw DataError(record_error(index, "MBPP id must be positive"));
    if (!seen.insert(id).second) throw DataError(record_error(index, "duplicate id " + std::to_string(id)));

    Problem p;
    p.id = std::to_string(id);
    p.description = string_field(pick("text", "description"), index, "text");
    p.unit_tests = string_list(pick("test_list", "tests"), index, "test_list");
    if (record.contains("code")) {
      p.seed_solutions.push_back(string_field(require(record, index, "code"), index, "code"));
    } else if (record.contains("solutions")) {
      p.seed_solutions = string_list(require(record, index, "solutions"), index, "solutions");
    } else {
      require(record, index, "code");
    }
    if (record.contains("signature")) {
      p.signature = rtrim(string_field(require(record, index, "signature"), index, "signature"));
    } else {
      p.signature = derive_signature(p.seed_solutions.front(), p.unit_tests, index);
    }
    if (p.unit_tests.empty()) throw DataError(record_error(index, "empty test_list"));
    check_tests_reference_name(p, index);
    switch (mbpp_partition(id)) {
      case MbppPartition::train: split.train.push_back(std::move(p)); break;
      case MbppPartition::validation: split.validation.push_back(std::move(p)); break;
      case MbppPartition::test: split.test.push_back(std::move(p)); break;
    }
  });
  if (split.total() != 964) {
    std::string msg = "MBPP file has " + std::to_string(split.total()) +
                      " records (official: 964); splitting by id range anyway";
    split.warnings.push_back(msg);
    log::warn(msg);
  }
  return split;
}

DatasetSplit load_mbpp(const std::string& path) { return parse_mbpp(read_file(path)); }

std::vector<Problem> parse_augmented(const std::string& text) {
  std::vector<Problem> out = parse_problems(text);
  for (auto& p : out) {
    p.source = ProblemSource::augmented;
    p.seed_solutions.clear();
  }
  return out;
}

std::vector<Problem> load_augmented(const std::string& path) { return parse_augmented(read_file(path)); }

std::string make_prompt(const Problem& problem) {
  const std::string description = normalize_block(problem.description);
  const std::string signature = rtrim(problem.signature);
  std::size_t first = 0;
  while (first < description.size() && description[first] == '\n') ++first;
  if (first == description.size()) return signature + "\n";
  return description.substr(first) + "\n" + signature + "\n";
}

std::string assemble_solution(const Problem& problem, const std::string& completion) {
  return rtrim(problem.signature) + "\n" + completion;
}

std::vector<std::string> validate_problems(const std::vector<Problem>& problems, Sandbox& sandbox) {
  std::vector<std::string> issues;
  for (const auto& p : problems) {
    auto stub = sandbox.check_compile(rtrim(p.signature) + "\n    pass\n");
    if (!stub.ok) issues.push_back(p.id + ": signature does not compile: " + stub.diagnostics);
    for (std::size_t i = 0; i < p.seed_solutions.size(); ++i) {
      auto r = sandbox.check_compile(p.seed_solutions[i]);
      if (!r.ok) issues.push_back(p.id + ": seed solution " + std::to_string(i) + " does not compile: " + r.diagnostics);
    }
  }
  return issues;
}

}  // namespace utrl
