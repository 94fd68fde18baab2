#pragma once

#include <map>
#include <string>
#include <unordered_set>
#include <vector>

#include "utrl/canonical.hpp"
#include "utrl/dataset.hpp"
#include "utrl/rng.hpp"
#include "utrl/sandbox.hpp"

namespace utrl {

struct BufferEntry {
  std::string solution;  // canonical text
  std::size_t epoch_added = 0;
};

struct BufferStats {
  std::size_t adds = 0;
  std::size_t rejects = 0;   // canonical duplicates
  std::size_t failures = 0;  // canonicalization or verification failures
};

// Canonicalized, deduplicated valid solutions per problem.
class ReplayBuffer {
 public:
  // With a verifier, every canonical form must pass all of the problem's tests
  // before it is stored.
  ReplayBuffer(Canonicalizer canonicalizer, Sandbox* verifier);

  void ensure(const std::string& problem_id);
  bool contains(const std::string& problem_id) const { return store_.count(problem_id) > 0; }

  // Canonicalizes `solution` (a full program) and stores it if new. Failures
  // are logged and reported as false, never thrown.
  bool add_if_new(const Problem& problem, const std::string& solution, std::size_t epoch);

  // n draws with replacement; an empty store gives an empty list.
  std::vector<std::string> sample_valid(const std::string& problem_id, std::size_t n, Rng& rng) const;

  std::size_t size(const std::string& problem_id) const;
  std::size_t total() const;
  const std::vector<BufferEntry>& entries(const std::string& problem_id) const;
  std::map<std::string, std::size_t> counts() const;
  const BufferStats& stats() const { return stats_; }
  const Canonicalizer& canonicalizer() const { return canonicalizer_; }

  // Line-delimited {problem_id, canonical_solution, epoch_added} records.
  void save(const std::string& path) const;
  void load(const std::string& path);

 private:
  struct Slot {
    std::vector<BufferEntry> entries;
    std::unordered_set<std::string> texts;
  };

  Canonicalizer canonicalizer_;
  Sandbox* verifier_;
  std::map<std::string, Slot> store_;
  BufferStats stats_;
};

// The body that follows the entry function's header in a canonical program,
// i.e. the completion a signature-conditioned policy would have to emit.
// Lines before the header are dropped.
std::string completion_from_program(const std::string& program, const std::string& signature);

}  // namespace utrl
