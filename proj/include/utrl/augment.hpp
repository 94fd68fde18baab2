#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/dataset.hpp"
#include "utrl/policy.hpp"
#include "utrl/sandbox.hpp"

namespace utrl {

// A documented Java method.
struct SourceFunction {
  std::string description;  // doc comment text, whitespace collapsed
  std::string signature;    // method header up to the closing parenthesis / throws clause
  std::string code;         // header plus body
  std::string name;
  std::string class_name;
  std::string origin;       // file path
  std::size_t line = 0;     // 1-based line of the header

  bool operator==(const SourceFunction&) const = default;
};

struct JavaParam {
  std::string type;
  std::string name;
};

struct JavaHeader {
  std::vector<std::string> modifiers;
  std::string return_type;
  std::string name;
  std::vector<JavaParam> params;
};

// Parses a method header such as "public static int max(int a, int b)".
// Throws DataError when the text is not a complete Java method header.
JavaHeader parse_java_header(const std::string& header);

// Pluggable English classifier for descriptions.
class LanguageDetector {
 public:
  virtual ~LanguageDetector() = default;
  virtual bool is_english(const std::string& text) const = 0;
  virtual std::string name() const = 0;
};

// Share of whitespace tokens that are common English function words.
class StopwordDetector : public LanguageDetector {
 public:
  explicit StopwordDetector(double min_ratio = 0.15) : min_ratio_(min_ratio) {}
  bool is_english(const std::string& text) const override;
  std::string name() const override { return "stopword-ratio"; }
  double ratio(const std::string& text) const;

 private:
  double min_ratio_;
};

std::size_t whitespace_tokens(const std::string& text);

// All documented methods in one Java source text.
std::vector<SourceFunction> extract_from_source(const std::string& text, const std::string& origin);

struct ExtractStats {
  std::size_t files = 0;
  std::size_t unreadable = 0;
  std::size_t functions = 0;
  std::size_t non_english = 0;
  std::size_t too_short = 0;
  std::size_t too_long = 0;
  std::size_t kept = 0;
};

struct ExtractOptions {
  std::size_t min_tokens = 10;
  std::size_t max_tokens = 512;
};

// Walks `corpus_root` for .java files in path order and keeps English
// descriptions within the token bounds.
std::vector<SourceFunction> extract_functions(const std::string& corpus_root, const ExtractOptions& options,
                                              const LanguageDetector& detector, ExtractStats& stats);

struct GeneratedSuite {
  SourceFunction function;
  std::vector<std::string> tests;  // Java assertion statements, variables already resolved
  std::string diagnostics;
};

struct GeneratorSpec {
  // Whitespace-separated argv template. Placeholders: {workspace} {class}
  // {budget} {source}.
  std::string command;
  std::string compile_command;  // optional source compile check, same placeholders
  double time_budget_seconds = 60;
};

struct GenerationResult {
  std::optional<GeneratedSuite> suite;
  std::string failure;  // set when suite is empty
  std::string log_path;
};

// Writes the method into <workspace>/src/<Class>.java, runs the optional
// compile check and the generator, then collects assertions from every .java
// file under <workspace>/tests.
GenerationResult generate_tests(const SourceFunction& fn, const GeneratorSpec& spec, const std::string& workspace);

// Assertions of a JUnit source text. Results bound to local variables
// ("int int0 = C.max(0, 581); assertEquals(581, int0);") are inlined into
// the assertion.
std::vector<std::string> collect_assertions(const std::string& junit_source);

// The expected-value text of an assertion ("true" for assertTrue).
std::optional<std::string> expected_value(const std::string& assertion);

// Drops suites with fewer than two tests or a single distinct expected value.
std::optional<GeneratedSuite> filter_suite(const GeneratedSuite& suite);

// "public static int max(int a, int b)" -> "def max(a, b):". Throws DataError
// for anything that is not a Java method header.
std::string convert_signature(const std::string& source_signature);

struct ConvertOptions {
  // Floating expected values compare with abs(actual - expected) <= tolerance
  // instead of ==; 0 keeps exact equality.
  double float_tolerance = 0.0;
};

// One Java assertion to a Python assert statement; nullopt when the pattern
// or a literal is outside the supported grammar.
std::optional<std::string> convert_assertion(const std::string& source_assertion, const ConvertOptions& options = {});

struct ConversionCounts {
  std::size_t suites = 0;
  std::size_t filtered = 0;            // filter_suite rejections
  std::size_t bad_signature = 0;
  std::size_t dropped_assertions = 0;  // unsupported assertion patterns
  std::size_t too_few_after_conversion = 0;
  std::size_t compile_failures = 0;
  std::size_t emitted = 0;

  nlohmann::json to_json() const;
};

struct Provenance {
  std::string id;
  std::string origin;
  std::size_t line = 0;
  std::string class_name;
  std::string method;
  std::string generator_log;
  std::string content_hash;
};

struct ConvertedInstance {
  Problem problem;
  Provenance provenance;
};

// Filter, convert signature and assertions, stub-compile check. Ids derive
// from a content hash so reruns are identical.
std::optional<ConvertedInstance> convert_suite(const GeneratedSuite& suite, const ConvertOptions& options,
                                               Sandbox* compile_checker, ConversionCounts& counts);

struct AugmentConfig {
  std::string corpus_root;
  std::string output;            // instances jsonl; provenance goes to <output>.provenance.jsonl
  std::string generator_command;
  std::string compile_command;
  double time_budget_seconds = 60;
  std::size_t min_tokens = 10;
  std::size_t max_tokens = 512;
  double float_tolerance = 0.0;
  std::size_t workers = 1;
  std::vector<std::string> interpreter{"python3", "-I", "-B", "-S"};

  void validate() const;
};

struct AugmentCounts {
  ExtractStats extract;
  std::size_t generator_failures = 0;
  ConversionCounts conversion;

  nlohmann::json to_json() const;
};

struct AugmentResult {
  std::vector<ConvertedInstance> instances;
  AugmentCounts counts;
};

// extract -> generate -> filter -> convert -> compile check -> write.
AugmentResult run_augment(const AugmentConfig& config, const LanguageDetector& detector = StopwordDetector());

// Suites file: one {"signature", "description", "tests": [java assertions], ...}
// object per line. Writes converted instances and returns the counts.
ConversionCounts convert_suites_file(const std::string& in, const std::string& out, const ConvertOptions& options = {});

// Keeps instances with at least one of n nucleus samples passing every test.
struct SolvabilityResult {
  std::vector<Problem> kept;
  std::vector<Problem> rejected;
};
SolvabilityResult solvability_filter(const std::vector<Problem>& instances, Policy& policy, Sandbox& sandbox,
                                     std::size_t n = 100, const DecodingParams& decoding = {}, std::uint64_t seed = 0);

}  // namespace utrl
