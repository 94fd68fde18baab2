#include "utrl/frontend.hpp"

#include "utrl/errors.hpp"
#include "utrl/log.hpp"

namespace utrl {

using nlohmann::json;

namespace {

// Parses and compiles only. Candidate code is never executed here.
constexpr const char* kScript = R"PY(
import ast, json, sys

def names_used(node):
    return {n.id for n in ast.walk(node) if isinstance(n, ast.Name)}

def names_bound(stmt):
    if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
        return {stmt.name}
    if isinstance(stmt, (ast.Import, ast.ImportFrom)):
        return {(a.asname or a.name).split(".")[0] for a in stmt.names}
    out = set()
    targets = []
    if isinstance(stmt, ast.Assign):
        targets = stmt.targets
    elif isinstance(stmt, (ast.AnnAssign, ast.AugAssign)):
        targets = [stmt.target]
    for t in targets:
        out |= {n.id for n in ast.walk(t) if isinstance(n, ast.Name)}
    return out

def is_def(stmt):
    return isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef))

def canonicalize(src, entry):
    tree = ast.parse(src)
    body = tree.body
    pos = None
    for i, stmt in enumerate(body):
        if isinstance(stmt, (ast.FunctionDef, ast.AsyncFunctionDef)) and stmt.name == entry:
            pos = i
            break
    if pos is None:
        raise LookupError("entry function '%s' not found" % entry)
    # Candidates: every definition, plus name-binding statements before the entry.
    candidates = []
    for i, stmt in enumerate(body):
        if i == pos:
            continue
        if is_def(stmt) or (i < pos and names_bound(stmt)):
            candidates.append(i)
    keep = {pos}
    frontier = set(names_used(body[pos]))
    seen = set()
    while frontier:
        name = frontier.pop()
        if name in seen:
            continue
        seen.add(name)
        for i in candidates:
            if i not in keep and name in names_bound(body[i]):
                keep.add(i)
                frontier |= names_used(body[i])
    kept = [body[i] for i in sorted(keep)]
    out = ast.unparse(ast.Module(body=kept, type_ignores=[]))
    return out.rstrip("\n") + "\n"

def handle(req):
    op = req.get("op")
    if op == "ping":
        return {"ok": True, "version": list(sys.version_info[:3])}
    if op == "compile":
        try:
            compile(req["src"], "<candidate>", "exec", dont_inherit=True)
            return {"ok": True}
        except SyntaxError as e:
            return {"ok": False, "diagnostics": "%s: %s (line %s)" % (type(e).__name__, e.msg, e.lineno)}
        except (ValueError, MemoryError, RecursionError, OverflowError) as e:
            return {"ok": False, "diagnostics": "%s: %s" % (type(e).__name__, e)}
    if op == "canonicalize":
        try:
            return {"ok": True, "text": canonicalize(req["src"], req["entry"])}
        except (SyntaxError, ValueError, LookupError, MemoryError, RecursionError) as e:
            return {"ok": False, "diagnostics": "%s: %s" % (type(e).__name__, e)}
    return {"ok": False, "diagnostics": "unknown op %r" % (op,)}

for line in sys.stdin:
    try:
        req = json.loads(line)
        resp = handle(req)
    except Exception as e:
        resp = {"ok": False, "diagnostics": "front end failure: %s: %s" % (type(e).__name__, e)}
    sys.stdout.write(json.dumps(resp) + "\n")
    sys.stdout.flush()
)PY";

}  // namespace

const char* FrontEnd::script() { return kScript; }

FrontEnd::FrontEnd(std::vector<std::string> interpreter, std::chrono::duration<double> timeout)
    : interpreter_(std::move(interpreter)), timeout_(timeout) {
  if (interpreter_.empty()) throw ConfigError("interpreter command is empty");
  if (find_executable(interpreter_[0]).empty()) {
    throw ConfigError("interpreter not found: " + interpreter_[0]);
  }
  start();
  json pong = request({{"op", "ping"}});
  if (!pong.value("ok", false)) throw ConfigError("front end handshake failed");
  auto v = pong["version"];
  if (!(v.is_array() && v.size() == 3 && (v[0].get<int>() > 3 || (v[0].get<int>() == 3 && v[1].get<int>() >= 9)))) {
    throw ConfigError("target interpreter must be Python >= 3.9 (needs ast.unparse)");
  }
}

FrontEnd::~FrontEnd() = default;

void FrontEnd::start() {
  SpawnOptions opts;
  opts.argv = interpreter_;
  opts.argv.push_back("-c");
  opts.argv.push_back(kScript);
  opts.limits.address_space_bytes = std::uint64_t{1} << 30;
  child_ = std::make_unique<LineChild>(std::move(opts));
}

json FrontEnd::request(const json& message) {
  std::lock_guard lock(mutex_);
  const std::string line = message.dump(-1, ' ', false, json::error_handler_t::replace);
  // One restart: a pathological input may take the helper down with it.
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      if (!child_ || !child_->alive()) start();
      child_->write_line(line);
      return json::parse(child_->read_line(timeout_));
    } catch (const ProtocolError& e) {
      log::warn(std::string("front end restarted: ") + e.what());
      child_.reset();
    }
  }
  return json{{"ok", false}, {"diagnostics", "front end crashed or timed out on this input"}};
}

CompileResult FrontEnd::compile(const std::string& source) {
  json r = request({{"op", "compile"}, {"src", source}});
  return {r.value("ok", false), r.value("diagnostics", std::string())};
}

std::string FrontEnd::canonicalize(const std::string& source, const std::string& entry_function) {
  json r = request({{"op", "canonicalize"}, {"src", source}, {"entry", entry_function}});
  if (!r.value("ok", false)) throw DataError("canonicalize: " + r.value("diagnostics", std::string("failed")));
  return r["text"].get<std::string>();
}

}  // namespace utrl
