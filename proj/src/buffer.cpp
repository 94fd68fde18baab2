#include "utrl/buffer.hpp"

#include <fstream>

#include "utrl/errors.hpp"
#include "utrl/log.hpp"
#include "utrl/text.hpp"

namespace utrl {

ReplayBuffer::ReplayBuffer(Canonicalizer canonicalizer, Sandbox* verifier)
    : canonicalizer_(canonicalizer), verifier_(verifier) {}

void ReplayBuffer::ensure(const std::string& problem_id) { store_[problem_id]; }

bool ReplayBuffer::add_if_new(const Problem& problem, const std::string& solution, std::size_t epoch) {
  Slot& slot = store_[problem.id];
  std::string canonical;
  try {
    canonical = canonicalizer_.canonicalize(solution, function_name(problem.signature));
  } catch (const std::exception& e) {
    ++stats_.failures;
    log::warn("buffer: skipping solution for " + problem.id + ": " + e.what());
    return false;
  }
  if (slot.texts.count(canonical)) {
    ++stats_.rejects;
    return false;
  }
  if (verifier_) {
    const auto outcome = verifier_->run_tests(canonical, problem.unit_tests);
    if (!outcome.all_passed()) {
      ++stats_.failures;
      log::warn("buffer: canonical form of a solution for " + problem.id + " passes " +
                std::to_string(outcome.passed_tests) + "/" + std::to_string(outcome.total_tests) +
                " tests; not stored");
      return false;
    }
  }
  slot.texts.insert(canonical);
  slot.entries.push_back({canonical, epoch});
  ++stats_.adds;
  return true;
}

std::vector<std::string> ReplayBuffer::sample_valid(const std::string& problem_id, std::size_t n, Rng& rng) const {
  const auto& e = entries(problem_id);
  std::vector<std::string> out;
  if (e.empty()) return out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) out.push_back(e[uniform_index(rng, e.size())].solution);
  return out;
}

std::size_t ReplayBuffer::size(const std::string& problem_id) const {
  auto it = store_.find(problem_id);
  return it == store_.end() ? 0 : it->second.entries.size();
}

std::size_t ReplayBuffer::total() const {
  std::size_t n = 0;
  for (const auto& [id, slot] : store_) n += slot.entries.size();
  return n;
}

const std::vector<BufferEntry>& ReplayBuffer::entries(const std::string& problem_id) const {
  auto it = store_.find(problem_id);
  if (it == store_.end()) throw DataError("replay buffer has no entry for problem " + problem_id);
  return it->second.entries;
}

std::map<std::string, std::size_t> ReplayBuffer::counts() const {
  std::map<std::string, std::size_t> out;
  for (const auto& [id, slot] : store_) out[id] = slot.entries.size();
  return out;
}

void ReplayBuffer::save(const std::string& path) const {
  std::string text;
  for (const auto& [id, slot] : store_) {
    if (slot.entries.empty()) {
      text += nlohmann::json{{"problem_id", id}}.dump() + "\n";
      continue;
    }
    for (const auto& e : slot.entries) {
      text += nlohmann::json{{"problem_id", id}, {"canonical_solution", e.solution}, {"epoch_added", e.epoch_added}}
                  .dump() +
              "\n";
    }
  }
  write_file(path, text);
}

void ReplayBuffer::load(const std::string& path) {
  std::map<std::string, Slot> store;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(read_file(path))) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Slot& slot = store[j.at("problem_id").get<std::string>()];
      if (!j.contains("canonical_solution")) continue;
      BufferEntry e{j["canonical_solution"].get<std::string>(), j.value("epoch_added", std::size_t{0})};
      if (slot.texts.insert(e.solution).second) slot.entries.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  store_ = std::move(store);
}

std::string completion_from_program(const std::string& program, const std::string& signature) {
  const std::string name = function_name(signature);
  const auto lines = split_lines(program);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string t = trim(lines[i]);
    if (!(starts_with(t, "def " + name + "(") || starts_with(t, "async def " + name + "("))) continue;
    // Multi-line headers end at the first line whose text ends with ':'.
    std::size_t j = i;
    while (j < lines.size() && rtrim(lines[j]).empty() == false && rtrim(lines[j]).back() != ':') ++j;
    std::string out;
    for (std::size_t k = j + 1; k < lines.size(); ++k) out += lines[k] + "\n";
    return out;
  }
  throw DataError("program has no definition of " + name);
}

}  // namespace utrl
