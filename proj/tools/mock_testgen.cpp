// Stand-in for a JUnit test generator. Reads "// @example <call> => <expected>"
// comments inside method bodies of <workspace>/src/<Class>.java and writes an
// EvoSuite-style <Class>_ESTest.java into <workspace>/tests.
// Usage: mock_testgen <workspace> <Class>
#include <cctype>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "utrl/augment.hpp"
#include "utrl/text.hpp"

namespace fs = std::filesystem;

namespace {

struct Example {
  std::string return_type;
  std::string call;
  std::string expected;
};

}  // namespace

int main(int argc, char** argv) {
  if (argc != 3) {
    std::cerr << "usage: mock_testgen <workspace> <Class>\n";
    return 2;
  }
  const fs::path ws(argv[1]);
  const std::string cls = argv[2];
  std::string source;
  try {
    source = utrl::read_file((ws / "src" / (cls + ".java")).string());
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  std::vector<Example> examples;
  std::string return_type;
  for (const auto& raw : utrl::split_lines(source)) {
    const std::string line = utrl::trim(raw);
    const auto paren = line.find('(');
    if (paren != std::string::npos && line.back() == '{' && line.rfind("//", 0) != 0) {
      try {
        const auto close = line.rfind(')');
        return_type = utrl::parse_java_header(line.substr(0, close + 1)).return_type;
      } catch (const std::exception&) {
        // not a header line
      }
    }
    if (line.rfind("// @crash", 0) == 0) {
      std::cerr << "generator crashed on " << cls << "\n";
      return 3;
    }
    if (line.rfind("// @example ", 0) == 0) {
      const std::string body = line.substr(12);
      const auto arrow = body.find(" => ");
      if (arrow == std::string::npos) continue;
      examples.push_back({return_type, utrl::trim(body.substr(0, arrow)), utrl::trim(body.substr(arrow + 4))});
    }
  }
  std::string out = "import org.junit.Test;\nimport static org.junit.Assert.*;\n\npublic class " + cls +
                    "_ESTest {\n";
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    const std::string var = ex.return_type;
    std::string name;
    for (char c : var) {
      if (std::isalnum(static_cast<unsigned char>(c))) name += static_cast<char>(std::tolower(c));
    }
    name += std::to_string(i);
    out += "\n  @Test(timeout = 4000)\n  public void test" + std::to_string(i) + "() throws Throwable {\n";
    out += "    " + var + " " + name + " = " + cls + "." + ex.call + ";\n";
    if (var == "boolean") {
      out += std::string("    assert") + (ex.expected == "true" ? "True" : "False") + "(" + name + ");\n";
    } else if (var == "double" || var == "float") {
      out += "    assertEquals(" + ex.expected + ", " + name + ", 0.01);\n";
    } else if (var.size() > 2 && var.compare(var.size() - 2, 2, "[]") == 0) {
      out += "    assertArrayEquals(" + ex.expected + ", " + name + ");\n";
    } else {
      out += "    assertEquals(" + ex.expected + ", " + name + ");\n";
    }
    out += "  }\n";
  }
  out += "}\n";
  fs::create_directories(ws / "tests");
  utrl::write_file((ws / "tests" / (cls + "_ESTest.java")).string(), out);
  std::cout << "generated " << examples.size() << " tests for " << cls << "\n";
  return 0;
}
