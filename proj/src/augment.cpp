#include "utrl/augment.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>
#include <thread>

#include "utrl/errors.hpp"
#include "utrl/log.hpp"
#include "utrl/process.hpp"
#include "utrl/rng.hpp"
#include "utrl/text.hpp"

extern char** environ;

namespace utrl {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// ---------------------------------------------------------------- lexer

enum class Tok { ident, number, string, chr, punct, end };

struct JToken {
  Tok kind = Tok::end;
  std::string text;
  std::size_t begin = 0;  // byte offsets into the lexed text
  std::size_t end = 0;
};

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '$'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '$'; }

// Skips a quoted literal starting at s[i] (the opening quote); returns the
// index one past the closing quote.
std::size_t skip_quoted(const std::string& s, std::size_t i) {
  const char q = s[i++];
  while (i < s.size() && s[i] != q) {
    if (s[i] == '\\') ++i;
    if (i < s.size() && s[i] == '\n') throw DataError("unterminated literal");
    ++i;
  }
  if (i >= s.size()) throw DataError("unterminated literal");
  return i + 1;
}

std::vector<JToken> lex_java(const std::string& s) {
  std::vector<JToken> out;
  std::size_t i = 0;
  while (i < s.size()) {
    const char c = s[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '/' && i + 1 < s.size() && s[i + 1] == '/') {
      while (i < s.size() && s[i] != '\n') ++i;
    } else if (c == '/' && i + 1 < s.size() && s[i + 1] == '*') {
      const auto close = s.find("*/", i + 2);
      if (close == std::string::npos) throw DataError("unterminated comment");
      i = close + 2;
    } else if (ident_start(c)) {
      std::size_t j = i;
      while (j < s.size() && ident_char(s[j])) ++j;
      out.push_back({Tok::ident, s.substr(i, j - i), i, j});
      i = j;
    } else if (std::isdigit(static_cast<unsigned char>(c)) ||
               (c == '.' && i + 1 < s.size() && std::isdigit(static_cast<unsigned char>(s[i + 1])))) {
      std::size_t j = i;
      if (c == '0' && j + 1 < s.size() && (s[j + 1] == 'x' || s[j + 1] == 'X' || s[j + 1] == 'b' || s[j + 1] == 'B')) {
        j += 2;
        while (j < s.size() && (std::isxdigit(static_cast<unsigned char>(s[j])) || s[j] == '_')) ++j;
      } else {
        while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '_' || s[j] == '.')) ++j;
        if (j < s.size() && (s[j] == 'e' || s[j] == 'E')) {
          ++j;
          if (j < s.size() && (s[j] == '+' || s[j] == '-')) ++j;
          while (j < s.size() && std::isdigit(static_cast<unsigned char>(s[j]))) ++j;
        }
      }
      if (j < s.size() && std::strchr("lLfFdD", s[j]) != nullptr && s[j] != '\0') ++j;
      out.push_back({Tok::number, s.substr(i, j - i), i, j});
      i = j;
    } else if (c == '"' || c == '\'') {
      const std::size_t j = skip_quoted(s, i);
      out.push_back({c == '"' ? Tok::string : Tok::chr, s.substr(i, j - i), i, j});
      i = j;
    } else {
      std::size_t len = 1;
      if (s.compare(i, 3, "...") == 0) len = 3;
      out.push_back({Tok::punct, s.substr(i, len), i, i + len});
      i += len;
    }
  }
  return out;
}

const std::set<std::string>& java_modifiers() {
  static const std::set<std::string> m{"public",       "private", "protected", "static",   "final",
                                       "synchronized", "abstract", "native",   "strictfp", "default"};
  return m;
}

const std::set<std::string>& java_reserved() {
  static const std::set<std::string> r{
      "abstract", "assert",    "break",      "case",   "catch",     "class",    "const",        "continue",
      "default",  "do",        "else",       "enum",   "extends",   "final",    "finally",      "for",
      "goto",     "if",        "implements", "import", "instanceof", "interface", "native",      "new",
      "package",  "private",   "protected",  "public", "return",    "static",   "strictfp",     "super",
      "switch",   "synchronized", "this",    "throw",  "throws",    "transient", "try",         "volatile",
      "while",    "true",      "false",      "null"};
  return r;
}

const std::set<std::string>& python_reserved() {
  static const std::set<std::string> r{"False", "None",   "True",    "and",      "as",   "assert", "async",
                                       "await", "break",  "class",   "continue", "def",  "del",    "elif",
                                       "else",  "except", "finally", "for",      "from", "global", "if",
                                       "import", "in",    "is",      "lambda",   "nonlocal", "not", "or",
                                       "pass",  "raise",  "return",  "try",      "while", "with",  "yield"};
  return r;
}

class HeaderParser {
 public:
  explicit HeaderParser(std::vector<JToken> toks) : t_(std::move(toks)) {}

  JavaHeader parse() {
    JavaHeader h;
    for (;;) {
      skip_annotations();
      if (peek_ident() && java_modifiers().count(cur().text)) {
        h.modifiers.push_back(cur().text);
        ++p_;
      } else {
        break;
      }
    }
    if (is_punct("<")) skip_angle();
    skip_annotations();
    h.return_type = parse_type();
    h.name = expect_name("method name");
    expect("(");
    if (!is_punct(")")) {
      for (;;) {
        skip_annotations();
        while (peek_ident() && cur().text == "final") ++p_;
        skip_annotations();
        JavaParam param;
        param.type = parse_type();
        if (is_punct("...")) {
          param.type += "...";
          ++p_;
        }
        param.name = expect_name("parameter name");
        while (is_punct("[")) {
          ++p_;
          expect("]");
          param.type += "[]";
        }
        h.params.push_back(std::move(param));
        if (is_punct(",")) {
          ++p_;
          continue;
        }
        break;
      }
    }
    expect(")");
    if (peek_ident() && cur().text == "throws") {
      ++p_;
      parse_type();
      while (is_punct(",")) {
        ++p_;
        parse_type();
      }
    }
    if (p_ != t_.size()) throw DataError("unexpected '" + cur().text + "' after method header");
    return h;
  }

 private:
  const JToken& cur() const {
    static const JToken end{};
    return p_ < t_.size() ? t_[p_] : end;
  }
  bool peek_ident() const { return p_ < t_.size() && t_[p_].kind == Tok::ident; }
  bool is_punct(const char* s) const { return p_ < t_.size() && t_[p_].kind == Tok::punct && t_[p_].text == s; }
  void expect(const char* s) {
    if (!is_punct(s)) throw DataError(std::string("expected '") + s + "' in method header");
    ++p_;
  }
  std::string expect_name(const char* what) {
    if (!peek_ident() || java_reserved().count(cur().text)) throw DataError(std::string("expected ") + what);
    return t_[p_++].text;
  }
  void skip_annotations() {
    while (is_punct("@") && p_ + 1 < t_.size() && t_[p_ + 1].kind == Tok::ident && t_[p_ + 1].text != "interface") {
      p_ += 2;
      while (is_punct(".") && p_ + 1 < t_.size() && t_[p_ + 1].kind == Tok::ident) p_ += 2;
      if (is_punct("(")) {
        int depth = 0;
        do {
          if (is_punct("(")) ++depth;
          if (is_punct(")")) --depth;
          ++p_;
        } while (p_ < t_.size() && depth > 0);
      }
    }
  }
  void skip_angle() {
    int depth = 0;
    do {
      if (p_ >= t_.size()) throw DataError("unbalanced type arguments");
      if (is_punct("<")) ++depth;
      if (is_punct(">")) --depth;
      ++p_;
    } while (depth > 0);
  }
  std::string parse_type() {
    std::string type = expect_name("type");
    while (is_punct(".") && p_ + 1 < t_.size() && t_[p_ + 1].kind == Tok::ident) {
      type += "." + t_[p_ + 1].text;
      p_ += 2;
    }
    if (is_punct("<")) {
      const std::size_t start = p_;
      skip_angle();
      for (std::size_t i = start; i < p_; ++i) type += t_[i].text;
    }
    while (is_punct("[") && p_ + 1 < t_.size() && t_[p_ + 1].text == "]") {
      p_ += 2;
      type += "[]";
    }
    return type;
  }

  std::vector<JToken> t_;
  std::size_t p_ = 0;
};

std::string collapse_whitespace(const std::string& s) {
  std::string out;
  bool space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
    } else {
      if (space) out += ' ';
      out += c;
      space = false;
    }
  }
  return out;
}

std::string javadoc_text(const std::string& comment) {
  // comment includes the /** and */ delimiters
  std::string body = comment.substr(3, comment.size() - 5);
  std::string out;
  for (const auto& line : split_lines(body)) {
    std::size_t i = 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    while (i < line.size() && line[i] == '*') ++i;
    out += line.substr(i);
    out += '\n';
  }
  return collapse_whitespace(out);
}

// Index one past the brace matching s[open] == '{', skipping literals and
// comments.
std::size_t match_brace(const std::string& s, std::size_t open) {
  int depth = 0;
  std::size_t i = open;
  while (i < s.size()) {
    const char c = s[i];
    if (c == '"' || c == '\'') {
      i = skip_quoted(s, i);
      continue;
    }
    if (c == '/' && i + 1 < s.size() && s[i + 1] == '/') {
      while (i < s.size() && s[i] != '\n') ++i;
      continue;
    }
    if (c == '/' && i + 1 < s.size() && s[i + 1] == '*') {
      const auto close = s.find("*/", i + 2);
      if (close == std::string::npos) throw DataError("unterminated comment");
      i = close + 2;
      continue;
    }
    if (c == '{') ++depth;
    if (c == '}' && --depth == 0) return i + 1;
    ++i;
  }
  throw DataError("unbalanced braces");
}

std::string enclosing_type_name(const std::string& s, std::size_t pos) {
  std::string name;
  const auto toks = lex_java(s.substr(0, pos));
  for (std::size_t i = 0; i + 1 < toks.size(); ++i) {
    if (toks[i].kind == Tok::ident && (toks[i].text == "class" || toks[i].text == "interface" || toks[i].text == "enum") &&
        toks[i + 1].kind == Tok::ident) {
      name = toks[i + 1].text;
    }
  }
  return name;
}

// ---------------------------------------------------------------- assertions

// Splits "name(a, b(c, d), e)" style argument text at depth-0 commas.
std::vector<std::string> split_args(const std::vector<JToken>& toks, std::size_t open, std::size_t close,
                                    const std::string& src) {
  std::vector<std::string> args;
  int depth = 0;
  std::size_t start = open + 1;
  for (std::size_t i = open + 1; i < close; ++i) {
    const auto& t = toks[i];
    if (t.kind == Tok::punct && (t.text == "(" || t.text == "{" || t.text == "[")) ++depth;
    if (t.kind == Tok::punct && (t.text == ")" || t.text == "}" || t.text == "]")) --depth;
    if (depth == 0 && t.kind == Tok::punct && t.text == ",") {
      args.push_back(trim(src.substr(toks[start].begin, toks[i - 1].end - toks[start].begin)));
      start = i + 1;
    }
  }
  if (start < close) args.push_back(trim(src.substr(toks[start].begin, toks[close - 1].end - toks[start].begin)));
  return args;
}

const std::set<std::string>& assert_names() {
  static const std::set<std::string> n{"assertEquals", "assertTrue",    "assertFalse", "assertNull",
                                       "assertNotNull", "assertArrayEquals", "assertSame", "assertNotSame",
                                       "assertNotEquals"};
  return n;
}

struct ParsedAssertion {
  std::string name;
  std::vector<std::string> args;
};

std::optional<ParsedAssertion> parse_assertion(const std::string& text) {
  std::vector<JToken> toks;
  try {
    toks = lex_java(text);
  } catch (const DataError&) {
    return std::nullopt;
  }
  std::size_t i = 0;
  // Optional qualifier such as Assert. or org.junit.Assert.
  while (i + 1 < toks.size() && toks[i].kind == Tok::ident && toks[i + 1].text == "." &&
         !assert_names().count(toks[i].text)) {
    i += 2;
  }
  if (i >= toks.size() || !assert_names().count(toks[i].text)) return std::nullopt;
  if (i + 1 >= toks.size() || toks[i + 1].text != "(") return std::nullopt;
  int depth = 0;
  std::size_t close = i + 1;
  for (; close < toks.size(); ++close) {
    if (toks[close].kind != Tok::punct) continue;
    if (toks[close].text == "(") ++depth;
    if (toks[close].text == ")" && --depth == 0) break;
  }
  if (close >= toks.size()) return std::nullopt;
  std::size_t rest = close + 1;
  if (rest < toks.size() && toks[rest].text == ";") ++rest;
  if (rest != toks.size()) return std::nullopt;
  return ParsedAssertion{toks[i].text, split_args(toks, i + 1, close, text)};
}

bool is_string_literal(const std::string& s) { return s.size() >= 2 && s.front() == '"' && s.back() == '"'; }

// Normalizes assertion overloads with a leading message string.
void drop_message(ParsedAssertion& a) {
  const std::size_t plain = a.name == "assertTrue" || a.name == "assertFalse" || a.name == "assertNull" ||
                                    a.name == "assertNotNull"
                                ? 1
                                : 2;
  if (a.args.size() > plain && is_string_literal(a.args.front())) {
    // assertEquals(msg, exp, act) and assertEquals(msg, exp, act, delta)
    if (plain == 1 || a.args.size() == 4 || (a.args.size() == 3 && a.name != "assertEquals")) {
      a.args.erase(a.args.begin());
    } else if (a.args.size() == 3) {
      // (msg, exp, act) vs (exp, act, delta): a numeric third argument is a delta.
      const std::string& last = a.args.back();
      const bool numeric = !last.empty() && (std::isdigit(static_cast<unsigned char>(last[0])) || last[0] == '.');
      if (!numeric) a.args.erase(a.args.begin());
    }
  }
}

// ---------------------------------------------------------------- expression conversion

class ExprConverter {
 public:
  ExprConverter(std::vector<JToken> toks) : t_(std::move(toks)) {}

  std::optional<std::string> convert_all() {
    auto e = expr();
    if (!e || p_ != t_.size()) return std::nullopt;
    return e;
  }

  bool saw_call() const { return calls_ > 0; }
  bool saw_float() const { return floats_ > 0; }

 private:
  const JToken* at(std::size_t k) const { return p_ + k < t_.size() ? &t_[p_ + k] : nullptr; }
  bool punct(const char* s, std::size_t k = 0) const {
    const auto* t = at(k);
    return t && t->kind == Tok::punct && t->text == s;
  }
  bool ident(const char* s, std::size_t k = 0) const {
    const auto* t = at(k);
    return t && t->kind == Tok::ident && t->text == s;
  }

  static const std::set<std::string>& primitives() {
    static const std::set<std::string> p{"int", "long", "short", "byte", "double", "float", "boolean", "char"};
    return p;
  }

  std::optional<std::string> expr() {
    if (punct("-")) {
      ++p_;
      auto inner = expr();
      if (!inner) return std::nullopt;
      return "-" + *inner;
    }
    if (punct("(")) {
      // Cast "(int) x", "(short) (-1)" or grouping "(expr)".
      if (at(1) && at(1)->kind == Tok::ident && (primitives().count(at(1)->text) || at(1)->text == "String") &&
          punct(")", 2)) {
        p_ += 3;
        return expr();
      }
      ++p_;
      auto inner = expr();
      if (!inner || !punct(")")) return std::nullopt;
      ++p_;
      return inner;
    }
    if (punct("{")) return array_body();
    const auto* t = at(0);
    if (!t) return std::nullopt;
    switch (t->kind) {
      case Tok::number:
        ++p_;
        return number(t->text);
      case Tok::string:
        ++p_;
        return t->text;
      case Tok::chr:
        ++p_;
        return character(t->text);
      case Tok::ident:
        return ident_expr();
      default:
        return std::nullopt;
    }
  }

  std::optional<std::string> number(std::string s) {
    s.erase(std::remove(s.begin(), s.end(), '_'), s.end());
    bool is_float = false;
    const bool hex = s.size() > 1 && s[0] == '0' && (s[1] == 'x' || s[1] == 'X');
    const bool bin = s.size() > 1 && s[0] == '0' && (s[1] == 'b' || s[1] == 'B');
    if (!s.empty() && (s.back() == 'l' || s.back() == 'L')) {
      s.pop_back();
    } else if (!hex && !s.empty() && std::strchr("fFdD", s.back()) && s.back() != '\0') {
      s.pop_back();
      is_float = true;
    }
    if (!hex && !bin && (s.find('.') != std::string::npos || s.find('e') != std::string::npos ||
                         s.find('E') != std::string::npos)) {
      is_float = true;
    }
    if (is_float) {
      ++floats_;
      if (s.find('.') == std::string::npos && s.find('e') == std::string::npos && s.find('E') == std::string::npos) {
        s += ".0";
      }
      return s;
    }
    if (!hex && !bin && s.size() > 1 && s[0] == '0') {
      // Java octal literal; Python spells it 0o.
      return "0o" + s.substr(1);
    }
    return s;
  }

  static std::optional<std::string> character(const std::string& lit) {
    const std::string body = lit.substr(1, lit.size() - 2);
    if (body == "\"") return std::string("\"\\\"\"");
    if (body == "\\'") return std::string("\"'\"");
    return "\"" + body + "\"";
  }

  std::optional<std::string> array_body() {
    // At '{': comma-separated elements until the matching '}'.
    ++p_;
    std::vector<std::string> items;
    if (!punct("}")) {
      for (;;) {
        auto e = expr();
        if (!e) return std::nullopt;
        items.push_back(*e);
        if (punct(",")) {
          ++p_;
          if (punct("}")) break;
          continue;
        }
        break;
      }
    }
    if (!punct("}")) return std::nullopt;
    ++p_;
    std::string out = "[";
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out + "]";
  }

  std::optional<std::string> args() {
    // At '(': converted arguments joined by ", ".
    ++p_;
    std::vector<std::string> items;
    if (!punct(")")) {
      for (;;) {
        auto e = expr();
        if (!e) return std::nullopt;
        items.push_back(*e);
        if (punct(",")) {
          ++p_;
          continue;
        }
        break;
      }
    }
    if (!punct(")")) return std::nullopt;
    ++p_;
    std::string out = "(";
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + items[i];
    return out + ")";
  }

  std::optional<std::string> ident_expr() {
    const std::string& w = at(0)->text;
    if (w == "true") return ++p_, std::string("True");
    if (w == "false") return ++p_, std::string("False");
    if (w == "null") return ++p_, std::string("None");
    if (w == "new") return new_expr();
    // Qualified name; the last component before '(' is the callee.
    std::string last = w;
    ++p_;
    while (punct(".") && at(1) && at(1)->kind == Tok::ident) {
      last = at(1)->text;
      p_ += 2;
    }
    if (!punct("(")) return std::nullopt;  // bare variables and constants are outside the grammar
    return call(last);
  }

  std::optional<std::string> call(const std::string& name) {
    if (python_reserved().count(name)) return std::nullopt;
    auto a = args();
    if (!a) return std::nullopt;
    ++calls_;
    std::string out = name + *a;
    // A chained call on the result ("f(x).g()") has no faithful rendering.
    if (punct(".")) return std::nullopt;
    return out;
  }

  std::optional<std::string> new_expr() {
    ++p_;  // new
    if (!at(0) || at(0)->kind != Tok::ident) return std::nullopt;
    std::string type = at(0)->text;
    ++p_;
    while (punct(".") && at(1) && at(1)->kind == Tok::ident) {
      type = at(1)->text;
      p_ += 2;
    }
    if (punct("(")) {
      // new C().method(args): an instance created only to call the method.
      auto a = args();
      if (!a || *a != "()" || !punct(".") || !at(1) || at(1)->kind != Tok::ident || !punct("(", 2)) {
        return std::nullopt;
      }
      const std::string name = at(1)->text;
      p_ += 2;
      return call(name);
    }
    std::size_t dims = 0;
    std::optional<std::string> size;
    while (punct("[")) {
      ++p_;
      if (punct("]")) {
        ++p_;
        ++dims;
        continue;
      }
      if (dims > 0 || size) return std::nullopt;
      const auto* n = at(0);
      if (!n || n->kind != Tok::number || !punct("]", 1)) return std::nullopt;
      size = n->text;
      p_ += 2;
      ++dims;
    }
    if (dims == 0) return std::nullopt;
    if (size) {
      if (dims != 1) return std::nullopt;
      std::string fill;
      if (type == "int" || type == "long" || type == "short" || type == "byte") {
        fill = "0";
      } else if (type == "double" || type == "float") {
        fill = "0.0";
      } else if (type == "boolean") {
        fill = "False";
      } else if (type == "char") {
        fill = "\"\\x00\"";
      } else {
        fill = "None";
      }
      std::string digits = *size;
      digits.erase(std::remove(digits.begin(), digits.end(), '_'), digits.end());
      if (!digits.empty() && (digits.back() == 'l' || digits.back() == 'L')) digits.pop_back();
      const long n = std::stol(digits);
      if (n < 0 || n > 10000) return std::nullopt;
      std::string out = "[";
      for (long i = 0; i < n; ++i) out += (i ? ", " : "") + fill;
      return out + "]";
    }
    if (!punct("{")) return std::nullopt;
    return array_body();
  }

  std::vector<JToken> t_;
  std::size_t p_ = 0;
  std::size_t calls_ = 0;
  std::size_t floats_ = 0;
};

struct ConvertedExpr {
  std::string text;
  bool has_call = false;
  bool is_float = false;
};

std::optional<ConvertedExpr> convert_expr(const std::string& java) {
  std::vector<JToken> toks;
  try {
    toks = lex_java(java);
  } catch (const DataError&) {
    return std::nullopt;
  }
  if (toks.empty()) return std::nullopt;
  ExprConverter c(std::move(toks));
  auto out = c.convert_all();
  if (!out) return std::nullopt;
  return ConvertedExpr{*out, c.saw_call(), c.saw_float()};
}

std::string format_number(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

std::vector<std::string> environment() {
  std::vector<std::string> env;
  for (char** e = environ; e && *e; ++e) env.emplace_back(*e);
  return env;
}

std::vector<std::string> expand_template(const std::string& tmpl, const std::map<std::string, std::string>& vars) {
  std::vector<std::string> argv;
  std::istringstream in(tmpl);
  std::string word;
  while (in >> word) {
    for (const auto& [key, value] : vars) {
      const std::string needle = "{" + key + "}";
      std::size_t pos;
      while ((pos = word.find(needle)) != std::string::npos) word.replace(pos, needle.size(), value);
    }
    argv.push_back(word);
  }
  return argv;
}

}  // namespace

// ---------------------------------------------------------------- public API

JavaHeader parse_java_header(const std::string& header) {
  std::vector<JToken> toks = lex_java(header);
  if (toks.empty()) throw DataError("empty method header");
  return HeaderParser(std::move(toks)).parse();
}

namespace {

const std::set<std::string>& english_stopwords() {
  static const std::set<std::string> w{
      "a",     "about", "above", "after",  "again",  "all",   "also",  "an",    "and",   "any",    "are",
      "as",    "at",    "be",    "because", "been",  "before", "being", "both",  "but",   "by",     "can",
      "could", "did",   "do",    "does",   "each",   "else",  "for",   "from",  "given", "has",    "have",
      "how",   "if",    "in",    "into",   "is",     "it",    "its",   "may",   "more",  "most",   "must",
      "no",    "not",   "of",    "on",     "only",   "or",    "other", "otherwise", "out", "over", "same",
      "should", "so",   "some",  "such",   "than",   "that",  "the",   "their", "then",  "there",  "these",
      "this",  "those", "to",    "under",  "until",  "up",    "used",  "was",   "we",    "were",   "what",
      "when",  "where", "whether", "which", "while", "will",  "with",  "would", "you",   "your"};
  return w;
}

std::string lower_alpha(const std::string& token) {
  std::string out;
  for (char c : token) {
    if (std::isalpha(static_cast<unsigned char>(c))) out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

}  // namespace

std::size_t whitespace_tokens(const std::string& text) {
  std::istringstream in(text);
  std::size_t n = 0;
  std::string w;
  while (in >> w) ++n;
  return n;
}

double StopwordDetector::ratio(const std::string& text) const {
  std::istringstream in(text);
  std::string w;
  std::size_t total = 0, hits = 0;
  while (in >> w) {
    ++total;
    hits += english_stopwords().count(lower_alpha(w));
  }
  return total ? static_cast<double>(hits) / static_cast<double>(total) : 0.0;
}

bool StopwordDetector::is_english(const std::string& text) const { return ratio(text) >= min_ratio_; }

std::vector<SourceFunction> extract_from_source(const std::string& text, const std::string& origin) {
  std::vector<SourceFunction> out;
  std::size_t pos = 0;
  while ((pos = text.find("/**", pos)) != std::string::npos) {
    // Skip doc markers inside string literals or line comments.
    const std::size_t line_start = text.rfind('\n', pos) == std::string::npos ? 0 : text.rfind('\n', pos) + 1;
    const std::string before = text.substr(line_start, pos - line_start);
    if (before.find("//") != std::string::npos || std::count(before.begin(), before.end(), '"') % 2 == 1) {
      pos += 3;
      continue;
    }
    const auto close = text.find("*/", pos + 3);
    if (close == std::string::npos) break;
    const std::string comment = text.substr(pos, close + 2 - pos);
    std::size_t h = close + 2;
    // Header runs to the first '{' or ';' outside parentheses.
    std::size_t i = h;
    int depth = 0;
    while (i < text.size()) {
      const char c = text[i];
      if (c == '"' || c == '\'') {
        i = skip_quoted(text, i);
        continue;
      }
      if (c == '/' && i + 1 < text.size() && text[i + 1] == '/') {
        while (i < text.size() && text[i] != '\n') ++i;
        continue;
      }
      if (c == '/' && i + 1 < text.size() && text[i + 1] == '*') break;  // another doc comment first
      if (c == '(') ++depth;
      if (c == ')') --depth;
      if (depth == 0 && (c == '{' || c == ';')) break;
      ++i;
    }
    pos = close + 2;
    if (i >= text.size() || text[i] != '{') continue;
    const std::string header = trim(text.substr(h, i - h));
    JavaHeader parsed;
    try {
      parsed = parse_java_header(header);
    } catch (const DataError&) {
      continue;  // class, field or constructor documentation
    }
    const std::size_t body_end = match_brace(text, i);
    while (h < i && std::isspace(static_cast<unsigned char>(text[h]))) ++h;
    SourceFunction fn;
    fn.description = javadoc_text(comment);
    fn.signature = collapse_whitespace(header);
    fn.code = text.substr(h, body_end - h);
    fn.name = parsed.name;
    fn.class_name = enclosing_type_name(text, h);
    fn.origin = origin;
    fn.line = static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(h), '\n')) + 1;
    if (!fn.description.empty()) out.push_back(std::move(fn));
    pos = body_end;
  }
  return out;
}

std::vector<SourceFunction> extract_functions(const std::string& corpus_root, const ExtractOptions& options,
                                              const LanguageDetector& detector, ExtractStats& stats) {
  if (!fs::is_directory(corpus_root)) throw ConfigError("corpus root is not a directory: " + corpus_root);
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(corpus_root, fs::directory_options::skip_permission_denied)) {
    if (e.is_regular_file() && e.path().extension() == ".java") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<SourceFunction> kept;
  for (const auto& f : files) {
    ++stats.files;
    std::vector<SourceFunction> fns;
    try {
      const std::string rel = fs::relative(f, corpus_root).generic_string();
      fns = extract_from_source(read_file(f.string()), rel);
    } catch (const DataError& e) {
      ++stats.unreadable;
      log::warn("skipping " + f.string() + ": " + e.what());
      continue;
    }
    for (auto& fn : fns) {
      ++stats.functions;
      const std::size_t n = whitespace_tokens(fn.description);
      if (n < options.min_tokens) {
        ++stats.too_short;
      } else if (n > options.max_tokens) {
        ++stats.too_long;
      } else if (!detector.is_english(fn.description)) {
        ++stats.non_english;
      } else {
        ++stats.kept;
        kept.push_back(std::move(fn));
      }
    }
  }
  return kept;
}

std::vector<std::string> collect_assertions(const std::string& src) {
  const auto toks = lex_java(src);
  std::vector<std::string> out;
  std::map<std::string, std::string> bound;  // local variable -> initializer text
  std::size_t start = 0;
  int parens = 0;
  std::size_t initializers = 0;

  auto render = [&](std::size_t a, std::size_t b) {
    // Source text of tokens [a, b) with bound variables inlined.
    std::string s;
    std::size_t cursor = toks[a].begin;
    for (std::size_t i = a; i < b; ++i) {
      const auto& t = toks[i];
      const bool member = i > a && toks[i - 1].text == ".";
      const bool callee = i + 1 < b && toks[i + 1].text == "(";
      if (t.kind == Tok::ident && !member && !callee && bound.count(t.text)) {
        s += src.substr(cursor, t.begin - cursor);
        s += bound[t.text];
        cursor = t.end;
      }
    }
    s += src.substr(cursor, toks[b - 1].end - cursor);
    return s;
  };

  for (std::size_t i = 0; i < toks.size(); ++i) {
    const auto& t = toks[i];
    if (t.kind == Tok::punct && t.text == "@" && i + 1 < toks.size() && toks[i + 1].text == "Test") bound.clear();
    if (t.kind == Tok::punct && (t.text == "(" || t.text == ")")) parens += t.text == "(" ? 1 : -1;
    if (t.kind == Tok::punct && t.text == "{") {
      // Array initializers belong to the enclosing statement; other braces
      // open a block.
      const std::string prev = i > 0 ? toks[i - 1].text : "";
      if (initializers > 0 || parens > 0 || prev == "]" || prev == "=") {
        ++initializers;
      } else {
        start = i + 1;
      }
      continue;
    }
    if (t.kind == Tok::punct && t.text == "}") {
      if (initializers > 0) {
        --initializers;
      } else {
        start = i + 1;
      }
      continue;
    }
    if (!(t.kind == Tok::punct && t.text == ";")) continue;
    parens = 0;
    const std::size_t a = start, b = i;
    start = i + 1;
    if (a >= b) continue;
    // Statement tokens [a, b).
    std::size_t k = a;
    while (k + 1 < b && toks[k].kind == Tok::ident && toks[k + 1].text == "." && !assert_names().count(toks[k].text)) {
      k += 2;
    }
    if (toks[k].kind == Tok::ident && assert_names().count(toks[k].text) && k + 1 < b && toks[k + 1].text == "(") {
      out.push_back(render(k, b) + ";");
      continue;
    }
    // Local declaration: Type[<...>][[]...] name = init
    std::size_t j = a;
    while (j < b && toks[j].kind == Tok::ident && toks[j].text == "final") ++j;
    if (j >= b || toks[j].kind != Tok::ident) continue;
    ++j;
    while (j + 1 < b && toks[j].text == "." && toks[j + 1].kind == Tok::ident) j += 2;
    if (j < b && toks[j].text == "<") {
      int depth = 0;
      do {
        if (toks[j].text == "<") ++depth;
        if (toks[j].text == ">") --depth;
        ++j;
      } while (j < b && depth > 0);
    }
    while (j + 1 < b && toks[j].text == "[" && toks[j + 1].text == "]") j += 2;
    if (j + 2 < b && toks[j].kind == Tok::ident && toks[j + 1].text == "=") {
      bound[toks[j].text] = render(j + 2, b);
    }
  }
  return out;
}

std::optional<std::string> expected_value(const std::string& assertion) {
  auto a = parse_assertion(assertion);
  if (!a) return std::nullopt;
  drop_message(*a);
  if (a->name == "assertTrue") return std::string("true");
  if (a->name == "assertFalse") return std::string("false");
  if (a->name == "assertNull") return std::string("null");
  if (a->name == "assertNotNull") return std::string("!null");
  if (a->args.size() < 2) return std::nullopt;
  return a->args[0];
}

std::optional<GeneratedSuite> filter_suite(const GeneratedSuite& suite) {
  if (suite.tests.size() < 2) return std::nullopt;
  std::set<std::string> outcomes;
  for (std::size_t i = 0; i < suite.tests.size(); ++i) {
    const auto v = expected_value(suite.tests[i]);
    // An unrecognized assertion counts as its own outcome.
    outcomes.insert(v ? "=" + collapse_whitespace(*v) : "#" + std::to_string(i));
  }
  if (outcomes.size() < 2) return std::nullopt;
  return suite;
}

std::string convert_signature(const std::string& source_signature) {
  const JavaHeader h = parse_java_header(source_signature);
  if (h.return_type.empty()) throw DataError("not a method header");
  if (python_reserved().count(h.name)) throw DataError("method name '" + h.name + "' is a Python keyword");
  std::string out = "def " + h.name + "(";
  for (std::size_t i = 0; i < h.params.size(); ++i) {
    const auto& p = h.params[i];
    if (python_reserved().count(p.name)) throw DataError("parameter name '" + p.name + "' is a Python keyword");
    if (p.type.size() >= 3 && p.type.compare(p.type.size() - 3, 3, "...") == 0) {
      out += (i ? ", *" : "*") + p.name;
    } else {
      out += (i ? ", " : "") + p.name;
    }
  }
  return out + "):";
}

std::optional<std::string> convert_assertion(const std::string& source_assertion, const ConvertOptions& options) {
  auto a = parse_assertion(source_assertion);
  if (!a) return std::nullopt;
  drop_message(*a);
  auto actual_of = [&](const std::string& text) -> std::optional<ConvertedExpr> {
    auto e = convert_expr(text);
    if (!e || !e->has_call) return std::nullopt;
    return e;
  };
  if (a->name == "assertTrue" || a->name == "assertFalse") {
    if (a->args.size() != 1) return std::nullopt;
    const auto act = actual_of(a->args[0]);
    if (!act) return std::nullopt;
    return "assert " + act->text + " == " + (a->name == "assertTrue" ? "True" : "False");
  }
  if (a->name == "assertNull" || a->name == "assertNotNull") {
    if (a->args.size() != 1) return std::nullopt;
    const auto act = actual_of(a->args[0]);
    if (!act) return std::nullopt;
    return "assert " + act->text + (a->name == "assertNull" ? " is None" : " is not None");
  }
  if (a->name != "assertEquals" && a->name != "assertArrayEquals") return std::nullopt;
  if (a->args.size() != 2 && a->args.size() != 3) return std::nullopt;
  const auto expected = convert_expr(a->args[0]);
  const auto act = actual_of(a->args[1]);
  if (!expected || expected->has_call || !act) return std::nullopt;
  double delta = 0.0;
  if (a->args.size() == 3) {
    const auto d = convert_expr(a->args[2]);
    if (!d || d->has_call) return std::nullopt;
    try {
      delta = std::stod(d->text);
    } catch (const std::exception&) {
      return std::nullopt;
    }
  }
  const bool floating = expected->is_float || a->args.size() == 3;
  if (options.float_tolerance > 0.0 && floating && a->name == "assertEquals") {
    const double tol = delta > 0.0 ? delta : options.float_tolerance;
    return "assert abs(" + act->text + " - " + expected->text + ") <= " + format_number(tol);
  }
  return "assert " + act->text + " == " + expected->text;
}

json ConversionCounts::to_json() const {
  return {{"suites", suites},
          {"filtered", filtered},
          {"bad_signature", bad_signature},
          {"dropped_assertions", dropped_assertions},
          {"too_few_after_conversion", too_few_after_conversion},
          {"compile_failures", compile_failures},
          {"emitted", emitted}};
}

json AugmentCounts::to_json() const {
  return {{"files", extract.files},
          {"unreadable", extract.unreadable},
          {"functions", extract.functions},
          {"non_english", extract.non_english},
          {"too_short", extract.too_short},
          {"too_long", extract.too_long},
          {"extracted", extract.kept},
          {"generator_failures", generator_failures},
          {"conversion", conversion.to_json()}};
}

std::optional<ConvertedInstance> convert_suite(const GeneratedSuite& suite, const ConvertOptions& options,
                                               Sandbox* compile_checker, ConversionCounts& counts) {
  ++counts.suites;
  if (!filter_suite(suite)) {
    ++counts.filtered;
    return std::nullopt;
  }
  std::string signature;
  try {
    signature = convert_signature(suite.function.signature);
  } catch (const DataError& e) {
    ++counts.bad_signature;
    log::debug(suite.function.origin + ": " + e.what());
    return std::nullopt;
  }
  std::vector<std::string> tests;
  for (const auto& t : suite.tests) {
    auto c = convert_assertion(t, options);
    if (c) {
      tests.push_back(*c);
    } else {
      ++counts.dropped_assertions;
    }
  }
  if (tests.size() < 2) {
    ++counts.too_few_after_conversion;
    return std::nullopt;
  }
  if (compile_checker) {
    std::string program = signature + "\n    pass\n";
    for (const auto& t : tests) program += t + "\n";
    const auto r = compile_checker->check_compile(program);
    if (!r.ok) {
      ++counts.compile_failures;
      log::debug(suite.function.origin + ": converted instance does not compile: " + r.diagnostics);
      return std::nullopt;
    }
  }
  std::string content = signature + "\n" + suite.function.description + "\n";
  for (const auto& t : tests) content += t + "\n";
  ConvertedInstance out;
  out.provenance.content_hash = hex_digest(content);
  out.problem.id = suite.function.name + "-" + out.provenance.content_hash.substr(0, 12);
  out.problem.description = suite.function.description;
  out.problem.signature = signature;
  out.problem.unit_tests = std::move(tests);
  out.problem.source = ProblemSource::augmented;
  out.provenance.id = out.problem.id;
  out.provenance.origin = suite.function.origin;
  out.provenance.line = suite.function.line;
  out.provenance.class_name = suite.function.class_name;
  out.provenance.method = suite.function.name;
  ++counts.emitted;
  return out;
}

GenerationResult generate_tests(const SourceFunction& fn, const GeneratorSpec& spec, const std::string& workspace) {
  GenerationResult result;
  const fs::path ws(workspace);
  fs::create_directories(ws / "src");
  fs::remove_all(ws / "tests");
  fs::create_directories(ws / "tests");
  const std::string cls = fn.class_name.empty() ? "Subject" : fn.class_name;
  const fs::path source = ws / "src" / (cls + ".java");
  write_file(source.string(), "public class " + cls + " {\n\n  " + fn.code + "\n}\n");
  std::ostringstream budget;
  budget << spec.time_budget_seconds;
  const std::map<std::string, std::string> vars{
      {"workspace", ws.string()}, {"class", cls}, {"budget", budget.str()}, {"source", source.string()}};
  const auto timeout = std::chrono::duration<double>(spec.time_budget_seconds + 30.0);
  std::string log_text;
  result.log_path = (ws / "generator.log").string();

  auto run = [&](const std::string& tmpl, const char* what) -> bool {
    SpawnOptions opts;
    opts.argv = expand_template(tmpl, vars);
    opts.env = environment();
    opts.working_dir = ws.string();
    if (opts.argv.empty()) {
      result.failure = std::string(what) + " command is empty";
      return false;
    }
    ProcessResult r;
    try {
      r = run_process(opts, "", timeout, 1 << 22);
    } catch (const SandboxError& e) {
      result.failure = std::string(what) + " could not start: " + e.what();
      return false;
    }
    log_text += "$ " + tmpl + "\n" + r.out + r.err;
    if (r.timed_out) {
      result.failure = std::string(what) + " timed out";
      return false;
    }
    if (r.exit_code != 0) {
      result.failure = std::string(what) + " exited with status " + std::to_string(r.exit_code);
      return false;
    }
    return true;
  };

  const bool ok = (spec.compile_command.empty() || run(spec.compile_command, "source compile check")) &&
                  run(spec.command, "test generator");
  write_file(result.log_path, log_text);
  if (!ok) return result;

  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(ws / "tests")) {
    if (e.is_regular_file() && e.path().extension() == ".java") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  GeneratedSuite suite;
  suite.function = fn;
  for (const auto& f : files) {
    try {
      for (auto& a : collect_assertions(read_file(f.string()))) suite.tests.push_back(std::move(a));
    } catch (const DataError& e) {
      suite.diagnostics += f.filename().string() + ": " + e.what() + "\n";
    }
  }
  if (suite.tests.empty()) {
    result.failure = "test generator emitted no assertions";
    return result;
  }
  result.suite = std::move(suite);
  return result;
}

void AugmentConfig::validate() const {
  if (corpus_root.empty()) throw ConfigError("augment needs a corpus directory");
  if (!fs::is_directory(corpus_root)) throw ConfigError("corpus directory not found: " + corpus_root);
  if (output.empty()) throw ConfigError("augment needs an output path");
  if (generator_command.empty()) throw ConfigError("augment needs a test generator command");
  if (min_tokens > max_tokens) throw ConfigError("min_tokens exceeds max_tokens");
  if (!(time_budget_seconds > 0.0)) throw ConfigError("generator time budget must be positive");
  if (float_tolerance < 0.0) throw ConfigError("float tolerance must be non-negative");
  if (workers == 0) throw ConfigError("workers must be positive");
}

namespace {

json provenance_to_json(const Provenance& p) {
  return {{"id", p.id},
          {"origin", p.origin},
          {"line", p.line},
          {"class", p.class_name},
          {"method", p.method},
          {"generator_log", p.generator_log},
          {"content_hash", p.content_hash}};
}

void write_instances(const std::string& out, const std::vector<ConvertedInstance>& instances) {
  if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
  std::vector<Problem> problems;
  std::string provenance;
  for (const auto& i : instances) {
    problems.push_back(i.problem);
    provenance += provenance_to_json(i.provenance).dump() + "\n";
  }
  write_file(out, serialize_problems(problems));
  write_file(out + ".provenance.jsonl", provenance);
}

}  // namespace

AugmentResult run_augment(const AugmentConfig& config, const LanguageDetector& detector) {
  config.validate();
  AugmentResult result;
  const auto functions =
      extract_functions(config.corpus_root, {config.min_tokens, config.max_tokens}, detector, result.counts.extract);
  GeneratorSpec spec{config.generator_command, config.compile_command, config.time_budget_seconds};
  const fs::path work = config.output + ".work";

  std::vector<GenerationResult> generated(functions.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < functions.size(); i = next++) {
      const auto& fn = functions[i];
      const std::string key = fn.class_name + "-" + fn.name + "-" + hex_digest(fn.origin + "\n" + fn.code).substr(0, 12);
      const fs::path ws = work / key;
      const fs::path done = ws / "result.json";
      if (fs::exists(done)) {
        // Resume: reuse the recorded generator outcome.
        try {
          const json j = json::parse(read_file(done.string()));
          GenerationResult r;
          r.log_path = (ws / "generator.log").string();
          r.failure = j.value("failure", std::string());
          if (r.failure.empty()) r.suite = GeneratedSuite{fn, j.at("tests").get<std::vector<std::string>>(), ""};
          generated[i] = std::move(r);
          continue;
        } catch (const std::exception&) {
          // fall through and regenerate
        }
      }
      generated[i] = generate_tests(fn, spec, ws.string());
      const auto& r = generated[i];
      json j{{"failure", r.failure}, {"tests", r.suite ? r.suite->tests : std::vector<std::string>{}}};
      write_file(done.string(), j.dump() + "\n");
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(config.workers, std::max<std::size_t>(functions.size(), 1)); ++w) {
    pool.emplace_back(worker);
  }
  for (auto& t : pool) t.join();

  SandboxConfig sc;
  sc.interpreter = config.interpreter;
  Sandbox checker(sc);
  ConvertOptions options{config.float_tolerance};
  for (std::size_t i = 0; i < functions.size(); ++i) {
    const auto& g = generated[i];
    if (!g.suite) {
      ++result.counts.generator_failures;
      log::info(functions[i].origin + ":" + std::to_string(functions[i].line) + " " + functions[i].name + ": " +
                g.failure);
      continue;
    }
    auto inst = convert_suite(*g.suite, options, &checker, result.counts.conversion);
    if (!inst) continue;
    inst->provenance.generator_log = fs::relative(g.log_path, fs::path(config.output).parent_path().empty()
                                                                  ? fs::current_path()
                                                                  : fs::path(config.output).parent_path())
                                         .generic_string();
    result.instances.push_back(std::move(*inst));
  }
  write_instances(config.output, result.instances);
  return result;
}

ConversionCounts convert_suites_file(const std::string& in, const std::string& out, const ConvertOptions& options) {
  ConversionCounts counts;
  std::vector<ConvertedInstance> instances;
  Sandbox checker;
  std::size_t line_no = 0;
  for (const auto& line : split_lines(read_file(in))) {
    ++line_no;
    if (trim(line).empty()) continue;
    GeneratedSuite suite;
    try {
      const json j = json::parse(line);
      suite.function.signature = j.at("signature").get<std::string>();
      suite.function.description = j.value("description", std::string());
      suite.function.origin = j.value("origin", in + ":" + std::to_string(line_no));
      suite.function.line = j.value("line", line_no);
      suite.tests = j.at("tests").get<std::vector<std::string>>();
      suite.function.name = parse_java_header(suite.function.signature).name;
    } catch (const json::exception& e) {
      throw DataError(in + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      ++counts.suites;
      ++counts.bad_signature;
      continue;
    }
    auto inst = convert_suite(suite, options, &checker, counts);
    if (inst) instances.push_back(std::move(*inst));
  }
  write_instances(out, instances);
  return counts;
}

SolvabilityResult solvability_filter(const std::vector<Problem>& instances, Policy& policy, Sandbox& sandbox,
                                     std::size_t n, const DecodingParams& decoding, std::uint64_t seed) {
  SolvabilityResult r;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& p = instances[i];
    Rng rng = substream(seed, "solvability", i);
    const auto samples = policy.sample_batch(make_prompt(p), n, decoding, rng());
    std::vector<Sandbox::Job> jobs;
    for (const auto& s : samples) jobs.push_back({assemble_solution(p, s.text), p.unit_tests});
    const auto outcomes = sandbox.run_batch(jobs);
    const bool solved = std::any_of(outcomes.begin(), outcomes.end(), [](const auto& o) { return o.all_passed(); });
    (solved ? r.kept : r.rejected).push_back(p);
  }
  return r;
}

}  // namespace utrl
