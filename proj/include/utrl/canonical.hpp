#pragma once

#include <string>
#include <vector>

namespace utrl {

class FrontEnd;

// One token of the built-in Python lexer.
struct PyToken {
  enum Kind { name, number, string, op } kind;
  std::string text;
  bool operator==(const PyToken&) const = default;
};

// A logical line: indentation level plus its tokens (comments dropped,
// bracketed and backslash continuations joined).
struct PyLine {
  std::size_t level = 0;
  std::vector<PyToken> tokens;
};

// Throws DataError on unterminated strings, unbalanced brackets or
// inconsistent dedents.
std::vector<PyLine> py_logical_lines(const std::string& source);

// Grammar-based fallback for the function-level subset of Python seen in
// this task family: drops comments, keeps the entry function, everything it
// reaches by name, and referenced pre-entry bindings, and pretty-prints with
// fixed spacing and four-space indentation.
std::string canonicalize_builtin(const std::string& source, const std::string& entry_function);

// Reduces a solution to its canonical text via the interpreter front end
// (syntax tree regeneration) or the built-in fallback.
class Canonicalizer {
 public:
  // A null front end selects the built-in fallback.
  explicit Canonicalizer(FrontEnd* front_end = nullptr) : front_end_(front_end) {}

  std::string canonicalize(const std::string& source, const std::string& entry_function) const;
  std::string backend() const { return front_end_ ? "front_end" : "builtin"; }

 private:
  FrontEnd* front_end_;
};

}  // namespace utrl
