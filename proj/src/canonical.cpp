#include "utrl/canonical.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <string_view>

#include "utrl/errors.hpp"
#include "utrl/frontend.hpp"
#include "utrl/text.hpp"

namespace utrl {

namespace {

constexpr std::array<std::string_view, 35> kKeywords{
    "False", "None",   "True",     "and",    "as",     "assert", "async",  "await",    "break",
    "class", "continue", "def",    "del",    "elif",   "else",   "except", "finally",  "for",
    "from",  "global", "if",       "import", "in",     "is",     "lambda", "nonlocal", "not",
    "or",    "pass",   "raise",    "return", "try",    "while",  "with",   "yield"};

constexpr std::array<std::string_view, 4> kOps3{"**=", "//=", ">>=", "<<="};
constexpr std::array<std::string_view, 20> kOps2{"**", "//", "==", "!=", "<=", ">=", "->", "+=", "-=", "*=",
                                                 "/=", "%=", "&=", "|=", "^=", "<<", ">>", ":=", "@=", "<>"};

bool is_keyword(std::string_view s) { return std::find(kKeywords.begin(), kKeywords.end(), s) != kKeywords.end(); }

bool name_start(unsigned char c) { return std::isalpha(c) || c == '_' || c >= 0x80; }
bool name_char(unsigned char c) { return std::isalnum(c) || c == '_' || c >= 0x80; }

bool string_prefix(std::string_view s) {
  if (s.size() > 2) return false;
  std::string lower;
  for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  static const std::set<std::string> prefixes{"r", "u", "b", "f", "br", "rb", "fr", "rf"};
  return prefixes.count(lower) > 0;
}

class Lexer {
 public:
  explicit Lexer(const std::string& src) : s_(src) {}

  std::vector<PyLine> run() {
    indents_.push_back(0);
    bool line_start = true;
    while (i_ < s_.size()) {
      if (line_start && depth_ == 0) {
        if (!begin_line()) continue;
        line_start = false;
      }
      const char c = s_[i_];
      if (c == ' ' || c == '\t' || c == '\f' || c == '\r') {
        ++i_;
      } else if (c == '\\' && i_ + 1 < s_.size() && (s_[i_ + 1] == '\n' || s_[i_ + 1] == '\r')) {
        i_ += 2;
        if (i_ < s_.size() && s_[i_ - 1] == '\r' && s_[i_] == '\n') ++i_;
      } else if (c == '#') {
        while (i_ < s_.size() && s_[i_] != '\n') ++i_;
      } else if (c == '\n') {
        ++i_;
        if (depth_ == 0) {
          flush();
          line_start = true;
        }
      } else if (name_start(static_cast<unsigned char>(c))) {
        std::size_t j = i_;
        while (j < s_.size() && name_char(static_cast<unsigned char>(s_[j]))) ++j;
        std::string_view word(s_.data() + i_, j - i_);
        if (j < s_.size() && (s_[j] == '\'' || s_[j] == '"') && string_prefix(word)) {
          read_string(i_, j);
        } else {
          current_.tokens.push_back({PyToken::name, std::string(word)});
          i_ = j;
        }
      } else if (c == '\'' || c == '"') {
        read_string(i_, i_);
      } else if (std::isdigit(static_cast<unsigned char>(c)) ||
                 (c == '.' && i_ + 1 < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_ + 1])))) {
        read_number();
      } else {
        read_op();
      }
    }
    if (depth_ > 0) throw DataError("canonicalize: unbalanced brackets");
    flush();
    return std::move(lines_);
  }

 private:
  // Measures indentation; returns false for blank or comment-only lines.
  bool begin_line() {
    std::size_t col = 0;
    while (i_ < s_.size() && (s_[i_] == ' ' || s_[i_] == '\t' || s_[i_] == '\f')) {
      col = s_[i_] == '\t' ? (col / 8 + 1) * 8 : col + 1;
      ++i_;
    }
    if (i_ >= s_.size()) return false;
    if (s_[i_] == '\n' || s_[i_] == '\r' || s_[i_] == '#') {
      while (i_ < s_.size() && s_[i_] != '\n') ++i_;
      if (i_ < s_.size()) ++i_;
      return false;
    }
    if (col > indents_.back()) {
      indents_.push_back(col);
    } else {
      while (col < indents_.back()) indents_.pop_back();
      if (col != indents_.back()) throw DataError("canonicalize: inconsistent dedent");
    }
    current_.level = indents_.size() - 1;
    return true;
  }

  void flush() {
    if (!current_.tokens.empty()) lines_.push_back(std::move(current_));
    current_ = PyLine{};
  }

  void read_string(std::size_t start, std::size_t quote_pos) {
    const char q = s_[quote_pos];
    const bool triple = s_.compare(quote_pos, 3, std::string(3, q)) == 0;
    std::size_t j = quote_pos + (triple ? 3 : 1);
    for (;;) {
      if (j >= s_.size()) throw DataError("canonicalize: unterminated string");
      const char c = s_[j];
      if (c == '\\') {
        j += 2;
        continue;
      }
      if (!triple && c == '\n') throw DataError("canonicalize: unterminated string");
      if (c == q && (!triple || s_.compare(j, 3, std::string(3, q)) == 0)) {
        j += triple ? 3 : 1;
        break;
      }
      ++j;
    }
    current_.tokens.push_back({PyToken::string, s_.substr(start, j - start)});
    i_ = j;
  }

  void read_number() {
    std::size_t j = i_;
    const bool hex = s_.compare(i_, 2, "0x") == 0 || s_.compare(i_, 2, "0X") == 0;
    while (j < s_.size()) {
      const char c = s_[j];
      if (std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
        ++j;
      } else if ((c == '+' || c == '-') && !hex && (s_[j - 1] == 'e' || s_[j - 1] == 'E')) {
        ++j;
      } else {
        break;
      }
    }
    current_.tokens.push_back({PyToken::number, s_.substr(i_, j - i_)});
    i_ = j;
  }

  void read_op() {
    std::string_view rest(s_.data() + i_, s_.size() - i_);
    std::string op;
    if (rest.substr(0, 3) == "...") {
      op = "...";
    } else {
      for (auto o : kOps3) {
        if (rest.substr(0, 3) == o) op = o;
      }
      if (op.empty()) {
        for (auto o : kOps2) {
          if (rest.substr(0, 2) == o) op = o;
        }
      }
      if (op.empty()) op = std::string(1, rest[0]);
    }
    if (op == "(" || op == "[" || op == "{") ++depth_;
    if (op == ")" || op == "]" || op == "}") {
      if (depth_ == 0) throw DataError("canonicalize: unbalanced brackets");
      --depth_;
    }
    current_.tokens.push_back({PyToken::op, op});
    i_ += op.size();
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int depth_ = 0;
  std::vector<std::size_t> indents_;
  PyLine current_;
  std::vector<PyLine> lines_;
};

struct Statement {
  std::vector<PyLine> lines;
  std::size_t head = 0;  // first non-decorator line
};

const std::vector<PyToken>& head_tokens(const Statement& st) { return st.lines[st.head].tokens; }

std::string def_name(const Statement& st) {
  const auto& t = head_tokens(st);
  std::size_t k = 0;
  if (k < t.size() && t[k].text == "async") ++k;
  if (k + 1 < t.size() && (t[k].text == "def" || t[k].text == "class") && t[k + 1].kind == PyToken::name) {
    return t[k + 1].text;
  }
  return "";
}

// Splits tokens after `from` at top-level commas and takes each alias.
std::set<std::string> import_names(const std::vector<PyToken>& t, std::size_t from) {
  std::set<std::string> out;
  std::vector<PyToken> seg;
  auto take = [&] {
    for (std::size_t k = 0; k + 1 < seg.size(); ++k) {
      if (seg[k].text == "as") {
        out.insert(seg[k + 1].text);
        seg.clear();
        return;
      }
    }
    for (const auto& tok : seg) {
      if (tok.kind == PyToken::name) {
        out.insert(tok.text);
        break;
      }
    }
    seg.clear();
  };
  for (std::size_t k = from; k < t.size(); ++k) {
    if (t[k].text == ",") {
      take();
    } else if (t[k].text != "(" && t[k].text != ")") {
      seg.push_back(t[k]);
    }
  }
  take();
  return out;
}

std::set<std::string> names_bound(const Statement& st) {
  const std::string d = def_name(st);
  if (!d.empty()) return {d};
  const auto& t = head_tokens(st);
  if (t.empty()) return {};
  if (t[0].text == "import") return import_names(t, 1);
  if (t[0].text == "from") {
    for (std::size_t k = 1; k < t.size(); ++k) {
      if (t[k].text == "import") return import_names(t, k + 1);
    }
    return {};
  }
  if (t[0].kind == PyToken::name && is_keyword(t[0].text)) return {};
  // Assignment targets: names left of the last top-level assignment operator.
  int depth = 0;
  std::size_t end = 0;
  for (std::size_t k = 0; k < t.size(); ++k) {
    const auto& x = t[k].text;
    if (x == "(" || x == "[" || x == "{") ++depth;
    if (x == ")" || x == "]" || x == "}") --depth;
    if (depth != 0 || t[k].kind != PyToken::op) continue;
    const bool augmented = x.size() >= 2 && x.back() == '=' && x != "==" && x != "!=" && x != "<=" && x != ">=";
    if (x == "=" || augmented) {
      end = k;
    } else if (x == ":" && end == 0) {
      end = k;  // annotated target
      break;
    }
  }
  std::set<std::string> out;
  for (std::size_t k = 0; k < end; ++k) {
    if (t[k].kind == PyToken::name && !is_keyword(t[k].text) && (k == 0 || t[k - 1].text != ".")) {
      out.insert(t[k].text);
    }
  }
  return out;
}

std::set<std::string> names_used(const Statement& st) {
  std::set<std::string> out;
  for (const auto& line : st.lines) {
    const auto& t = line.tokens;
    for (std::size_t k = 0; k < t.size(); ++k) {
      if (t[k].kind == PyToken::name && !is_keyword(t[k].text) && (k == 0 || t[k - 1].text != ".")) {
        out.insert(t[k].text);
      }
    }
  }
  return out;
}

bool tight_before(const PyToken& prev, const PyToken& cur) {
  static const std::set<std::string> openers{"(", "[", "{"};
  static const std::set<std::string> closers{")", "]", "}", ",", ":", ";"};
  if (openers.count(prev.text) || prev.text == ".") return true;
  if (closers.count(cur.text)) return true;
  if (cur.text == ".") return prev.kind != PyToken::number;
  if (cur.text == "(" || cur.text == "[") {
    if (prev.kind == PyToken::name && !is_keyword(prev.text)) return true;
    if (prev.kind == PyToken::string || prev.text == ")" || prev.text == "]" || prev.text == "}") return true;
  }
  return false;
}

std::string render(const PyLine& line) {
  std::string out(line.level * 4, ' ');
  for (std::size_t k = 0; k < line.tokens.size(); ++k) {
    const auto& cur = line.tokens[k];
    if (k > 0) {
      const auto& prev = line.tokens[k - 1];
      const bool decorator = k == 1 && prev.text == "@";
      if (!decorator && !tight_before(prev, cur)) out += ' ';
    }
    out += cur.text;
  }
  return out;
}

}  // namespace

std::vector<PyLine> py_logical_lines(const std::string& source) { return Lexer(source).run(); }

std::string canonicalize_builtin(const std::string& source, const std::string& entry_function) {
  const auto lines = py_logical_lines(source);
  std::vector<Statement> body;
  Statement pending;
  for (const auto& line : lines) {
    if (line.level == 0) {
      const bool decorator = !line.tokens.empty() && line.tokens[0].text == "@";
      if (!pending.lines.empty() && pending.head < pending.lines.size()) {
        body.push_back(std::move(pending));
        pending = Statement{};
      }
      pending.lines.push_back(line);
      pending.head = decorator ? pending.lines.size() : pending.lines.size() - 1;
      continue;
    }
    if (pending.lines.empty()) throw DataError("canonicalize: unexpected indent");
    pending.lines.push_back(line);
  }
  if (!pending.lines.empty()) {
    if (pending.head >= pending.lines.size()) throw DataError("canonicalize: decorator without definition");
    body.push_back(std::move(pending));
  }

  std::size_t pos = body.size();
  for (std::size_t k = 0; k < body.size(); ++k) {
    if (def_name(body[k]) == entry_function) {
      pos = k;
      break;
    }
  }
  if (pos == body.size()) throw DataError("canonicalize: entry function '" + entry_function + "' not found");

  std::vector<std::set<std::string>> bound(body.size());
  std::vector<std::size_t> candidates;
  for (std::size_t k = 0; k < body.size(); ++k) {
    if (k == pos) continue;
    bound[k] = names_bound(body[k]);
    const bool is_def = !def_name(body[k]).empty();
    if (is_def || (k < pos && !bound[k].empty())) candidates.push_back(k);
  }
  std::set<std::size_t> keep{pos};
  std::vector<std::string> frontier;
  for (const auto& n : names_used(body[pos])) frontier.push_back(n);
  std::set<std::string> seen;
  while (!frontier.empty()) {
    const std::string name = frontier.back();
    frontier.pop_back();
    if (!seen.insert(name).second) continue;
    for (std::size_t k : candidates) {
      if (!keep.count(k) && bound[k].count(name)) {
        keep.insert(k);
        for (const auto& n : names_used(body[k])) frontier.push_back(n);
      }
    }
  }

  std::string out;
  for (std::size_t k : keep) {
    for (const auto& line : body[k].lines) out += render(line) + "\n";
  }
  return out;
}

std::string Canonicalizer::canonicalize(const std::string& source, const std::string& entry_function) const {
  if (front_end_) return front_end_->canonicalize(source, entry_function);
  return canonicalize_builtin(source, entry_function);
}

}  // namespace utrl
