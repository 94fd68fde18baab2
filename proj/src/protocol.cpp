#include "utrl/protocol.hpp"

#include <poll.h>
#include <sys/socket.h>
#include <sys/un.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <istream>
#include <ostream>

#include "utrl/errors.hpp"
#include "utrl/log.hpp"

extern char** environ;

namespace utrl {

using nlohmann::json;

namespace {

using Clock = std::chrono::steady_clock;

std::vector<std::string> current_environment() {
  std::vector<std::string> env;
  for (char** e = environ; e && *e; ++e) env.emplace_back(*e);
  return env;
}

const char* mode_name(DecodeMode m) { return m == DecodeMode::greedy ? "greedy" : "nucleus"; }

}  // namespace

StdioTransport::StdioTransport(std::vector<std::string> command) {
  if (command.empty()) throw ConfigError("external policy command is empty");
  if (find_executable(command[0]).empty()) throw ConfigError("external policy program not found: " + command[0]);
  SpawnOptions opts;
  opts.argv = std::move(command);
  opts.env = current_environment();
  child_ = std::make_unique<LineChild>(std::move(opts));
}

void StdioTransport::send(const std::string& line) { child_->write_line(line); }

std::string StdioTransport::receive(std::chrono::duration<double> timeout) {
  std::string line = child_->read_line(timeout);
  const std::string err = child_->drain_stderr();
  if (!err.empty()) log::debug("policy server: " + err);
  return line;
}

SocketTransport::SocketTransport(std::string path) : path_(std::move(path)) { connect_socket(); }

SocketTransport::~SocketTransport() {
  if (fd_ >= 0) ::close(fd_);
}

void SocketTransport::connect_socket() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
  pending_.clear();
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path_.size() >= sizeof(addr.sun_path)) throw ConfigError("socket path too long: " + path_);
  std::memcpy(addr.sun_path, path_.c_str(), path_.size() + 1);
  const int fd = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw ProtocolError(std::string("socket: ") + std::strerror(errno), true);
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int e = errno;
    ::close(fd);
    throw ProtocolError("cannot connect to " + path_ + ": " + std::strerror(e), true);
  }
  fd_ = fd;
}

bool SocketTransport::reconnect() {
  try {
    connect_socket();
    return true;
  } catch (const ProtocolError&) {
    return false;
  }
}

void SocketTransport::send(const std::string& line) {
  if (fd_ < 0) throw ProtocolError("socket not connected", true);
  const std::string data = line + "\n";
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw ProtocolError(std::string("socket send failed: ") + std::strerror(errno), true);
    }
    off += static_cast<std::size_t>(n);
  }
}

std::string SocketTransport::receive(std::chrono::duration<double> timeout) {
  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(timeout);
  char buf[65536];
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    if (fd_ < 0) throw ProtocolError("socket closed", true);
    const auto remaining = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
    if (remaining <= 0) throw ProtocolError("timed out waiting for policy server", true);
    pollfd p{fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, static_cast<int>(std::min<long long>(remaining, 1000)));
    if (rc < 0 && errno != EINTR) throw ProtocolError(std::string("poll: ") + std::strerror(errno), true);
    if (rc <= 0) continue;
    const ssize_t n = ::recv(fd_, buf, sizeof buf, 0);
    if (n > 0) {
      pending_.append(buf, static_cast<std::size_t>(n));
    } else if (n == 0) {
      ::close(fd_);
      fd_ = -1;
    } else if (errno != EINTR && errno != EAGAIN) {
      throw ProtocolError(std::string("socket receive failed: ") + std::strerror(errno), true);
    }
  }
}

json trajectory_to_wire(const Trajectory& t) {
  json j{{"text", t.text},
         {"tokens", t.tokens},
         {"terminated", t.terminated},
         {"logp_policy", t.logp_policy},
         {"logp_reference", t.logp_reference}};
  if (!t.embedding.empty()) j["embedding"] = t.embedding;
  return j;
}

Trajectory trajectory_from_wire(const json& j, const std::string& prompt) {
  Trajectory t;
  t.prompt = prompt;
  try {
    t.text = j.at("text").get<std::string>();
    t.tokens = j.at("tokens").get<std::vector<int>>();
    t.terminated = j.value("terminated", true);
    t.logp_policy = j.at("logp_policy").get<std::vector<double>>();
    t.logp_reference = j.at("logp_reference").get<std::vector<double>>();
    if (j.contains("embedding")) t.embedding = j["embedding"].get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw ProtocolError(std::string("malformed trajectory: ") + e.what());
  }
  if (t.tokens.size() != t.logp_policy.size() || t.tokens.size() != t.logp_reference.size()) {
    throw ProtocolError("trajectory token and log-probability lengths differ");
  }
  return t;
}

ExternalPolicy::ExternalPolicy(std::unique_ptr<Transport> transport, std::size_t retries,
                               std::chrono::duration<double> timeout)
    : transport_(std::move(transport)), retries_(retries), timeout_(timeout) {
  info_ = request({{"op", "hello"}, {"protocol", kProtocolVersion}}, true);
  if (info_.value("protocol", 0) != kProtocolVersion) {
    throw ProtocolError("policy server speaks protocol " + info_.value("protocol", json()).dump() + ", expected " +
                        std::to_string(kProtocolVersion));
  }
}

json ExternalPolicy::request(json message, bool idempotent) {
  const std::string op = message.value("op", std::string());
  std::string last_error;
  for (std::size_t attempt = 0; attempt <= retries_; ++attempt) {
    const std::uint64_t id = next_id_++;
    message["id"] = id;
    bool delivered = false;
    try {
      transport_->send(message.dump());
      delivered = true;
      json response;
      for (;;) {
        const std::string line = transport_->receive(timeout_);
        try {
          response = json::parse(line);
        } catch (const json::exception& e) {
          throw ProtocolError("policy server sent malformed JSON: " + std::string(e.what()));
        }
        // Late answers to earlier attempts are discarded.
        const bool stale = response.is_object() && response.contains("id") && response["id"].is_number_unsigned() &&
                           response["id"].get<std::uint64_t>() < id;
        if (!stale) break;
      }
      if (!response.is_object() || !response.contains("id") || response["id"] != id) {
        throw ProtocolError("policy server response id mismatch for " + op);
      }
      if (!response.value("ok", false)) {
        const json err = response.value("error", json::object());
        const std::string what = err.value("message", std::string("unspecified error"));
        if (!err.value("retryable", false)) throw ProtocolError("policy server rejected " + op + ": " + what);
        last_error = what;
        log::warn("policy server retryable error on " + op + ": " + what);
        continue;
      }
      return response;
    } catch (const ProtocolError& e) {
      if (!e.retryable()) throw;
      last_error = e.what();
      if (delivered && !idempotent) {
        throw ProtocolError(op + " may have reached the policy server before failing (" + last_error +
                            "); not retried");
      }
      log::warn("transport failure on " + op + ": " + last_error);
      if (!transport_->reconnect()) break;
    }
  }
  throw ProtocolError("policy server unreachable after " + std::to_string(retries_ + 1) + " attempts on " + op + ": " +
                      last_error);
}

std::vector<Trajectory> ExternalPolicy::sample_batch(const std::string& prompt, std::size_t n,
                                                     const DecodingParams& params, std::uint64_t seed) {
  params.validate();
  const json r = request({{"op", "sample"},
                          {"prompt", prompt},
                          {"n", n},
                          {"top_p", params.top_p},
                          {"temperature", params.temperature},
                          {"max_len", params.max_len},
                          {"mode", mode_name(params.mode)},
                          {"seed", seed}},
                         true);
  std::vector<Trajectory> out;
  for (const auto& s : r.value("samples", json::array())) out.push_back(trajectory_from_wire(s, prompt));
  if (out.size() != n) throw ProtocolError("policy server returned " + std::to_string(out.size()) + " samples, not " +
                                           std::to_string(n));
  for (const auto& t : out) {
    if (t.tokens.size() > params.max_len) throw ProtocolError("policy server exceeded max_len");
  }
  return out;
}

Trajectory ExternalPolicy::greedy(const std::string& prompt, std::size_t max_len) {
  DecodingParams p;
  p.mode = DecodeMode::greedy;
  p.max_len = max_len;
  return sample_batch(prompt, 1, p, 0).front();
}

ScoreResult ExternalPolicy::score(const std::string& prompt, const std::string& completion, bool terminated) {
  const json r =
      request({{"op", "score"}, {"prompt", prompt}, {"completion", completion}, {"terminated", terminated}}, true);
  const Trajectory t = trajectory_from_wire(json{{"text", completion},
                                                 {"tokens", r.value("tokens", json::array())},
                                                 {"logp_policy", r.value("logp_policy", json::array())},
                                                 {"logp_reference", r.value("logp_reference", json::array())},
                                                 {"embedding", r.value("embedding", json::array())}},
                                            prompt);
  return ScoreResult{t.tokens, t.logp_policy, t.logp_reference, t.embedding};
}

double ExternalPolicy::apply_update(std::span<const UpdateItem> batch, double learning_rate) {
  check_update_batch(batch);
  json items = json::array();
  for (const auto& it : batch) {
    items.push_back({{"prompt", it.prompt},
                     {"completion", it.completion},
                     {"terminated", it.terminated},
                     {"advantage", it.advantage},
                     {"weight", it.weight}});
  }
  const json r = request({{"op", "update"}, {"items", items}, {"learning_rate", learning_rate}}, false);
  if (!r.contains("objective") || !r["objective"].is_number()) throw ProtocolError("update response lacks objective");
  return r["objective"].get<double>();
}

void ExternalPolicy::freeze_reference() { request({{"op", "freeze_reference"}}, false); }

void ExternalPolicy::save(const std::string& path) { request({{"op", "save"}, {"path", path}}, false); }

void ExternalPolicy::load(const std::string& path) { request({{"op", "load"}, {"path", path}}, false); }

namespace {

json error_response(const json& id, const std::string& message, bool retryable = false) {
  return {{"id", id}, {"ok", false}, {"error", {{"message", message}, {"retryable", retryable}}}};
}

DecodeMode parse_mode(const std::string& s) {
  if (s == "nucleus") return DecodeMode::nucleus;
  if (s == "greedy") return DecodeMode::greedy;
  throw DataError("unknown decoding mode: " + s);
}

std::vector<UpdateItem> parse_items(const json& items) {
  if (!items.is_array()) throw DataError("update items must be an array");
  std::vector<UpdateItem> out;
  for (const auto& it : items) {
    UpdateItem u;
    u.prompt = it.at("prompt").get<std::string>();
    u.completion = it.at("completion").get<std::string>();
    u.terminated = it.value("terminated", true);
    u.advantage = it.at("advantage").get<double>();
    u.weight = it.value("weight", 1.0);
    out.push_back(std::move(u));
  }
  return out;
}

}  // namespace

json PolicyServer::dispatch(const json& req) {
  const std::string op = req.at("op").get<std::string>();
  json r{{"id", req.at("id")}, {"ok", true}};
  if (op == "hello") {
    r["protocol"] = kProtocolVersion;
    r["backend"] = policy_.backend();
    r["ops"] = {"hello", "sample", "score", "update", "freeze_reference", "save", "load", "shutdown"};
  } else if (op == "sample") {
    DecodingParams p;
    p.top_p = req.value("top_p", p.top_p);
    p.temperature = req.value("temperature", p.temperature);
    p.max_len = req.value("max_len", p.max_len);
    p.mode = parse_mode(req.value("mode", std::string("nucleus")));
    const std::string prompt = req.at("prompt").get<std::string>();
    const std::size_t n = req.at("n").get<std::size_t>();
    std::vector<Trajectory> samples;
    if (p.mode == DecodeMode::greedy) {
      for (std::size_t i = 0; i < n; ++i) samples.push_back(policy_.greedy(prompt, p.max_len));
    } else {
      samples = policy_.sample_batch(prompt, n, p, req.value("seed", std::uint64_t{0}));
    }
    json list = json::array();
    for (const auto& t : samples) list.push_back(trajectory_to_wire(t));
    r["samples"] = list;
  } else if (op == "score") {
    const auto s = policy_.score(req.at("prompt").get<std::string>(), req.at("completion").get<std::string>(),
                                 req.value("terminated", true));
    r["tokens"] = s.tokens;
    r["logp_policy"] = s.logp_policy;
    r["logp_reference"] = s.logp_reference;
    if (!s.embedding.empty()) r["embedding"] = s.embedding;
  } else if (op == "update") {
    const auto items = parse_items(req.at("items"));
    r["objective"] = policy_.apply_update(items, req.at("learning_rate").get<double>());
  } else if (op == "freeze_reference") {
    policy_.freeze_reference();
  } else if (op == "save") {
    policy_.save(req.at("path").get<std::string>());
  } else if (op == "load") {
    policy_.load(req.at("path").get<std::string>());
  } else if (op == "shutdown") {
    shutdown_ = true;
  } else {
    throw DataError("unknown op: " + op);
  }
  return r;
}

std::string PolicyServer::handle(const std::string& line) {
  json req;
  try {
    req = json::parse(line);
  } catch (const json::exception& e) {
    return error_response(nullptr, std::string("malformed JSON: ") + e.what()).dump();
  }
  if (!req.is_object()) return error_response(nullptr, "request must be an object").dump();
  const json id = req.value("id", json());
  if (!req.contains("op") || !req["op"].is_string()) return error_response(id, "request lacks op").dump();
  if (!req.contains("id")) return error_response(id, "request lacks id").dump();
  try {
    return dispatch(req).dump();
  } catch (const std::bad_alloc&) {
    return error_response(id, "out of memory", true).dump();
  } catch (const json::exception& e) {
    return error_response(id, std::string("bad request: ") + e.what()).dump();
  } catch (const std::exception& e) {
    return error_response(id, e.what()).dump();
  }
}

void serve_stream(Policy& policy, std::istream& in, std::ostream& out) {
  PolicyServer server(policy);
  std::string line;
  while (!server.shutdown_requested() && std::getline(in, line)) {
    if (line.empty()) continue;
    out << server.handle(line) << '\n' << std::flush;
  }
}

void serve_socket(Policy& policy, const std::string& path) {
  sockaddr_un addr{};
  addr.sun_family = AF_UNIX;
  if (path.size() >= sizeof(addr.sun_path)) throw ConfigError("socket path too long: " + path);
  std::memcpy(addr.sun_path, path.c_str(), path.size() + 1);
  const int listener = ::socket(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (listener < 0) throw ProtocolError(std::string("socket: ") + std::strerror(errno));
  ::unlink(path.c_str());
  if (::bind(listener, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(listener, 4) != 0) {
    const int e = errno;
    ::close(listener);
    throw ProtocolError("cannot listen on " + path + ": " + std::strerror(e));
  }
  PolicyServer server(policy);
  while (!server.shutdown_requested()) {
    const int fd = ::accept(listener, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    std::string pending;
    char buf[65536];
    bool open = true;
    while (open && !server.shutdown_requested()) {
      std::size_t nl;
      while (!server.shutdown_requested() && (nl = pending.find('\n')) != std::string::npos) {
        const std::string line = pending.substr(0, nl);
        pending.erase(0, nl + 1);
        if (line.empty()) continue;
        const std::string reply = server.handle(line) + "\n";
        std::size_t off = 0;
        while (off < reply.size()) {
          const ssize_t n = ::send(fd, reply.data() + off, reply.size() - off, MSG_NOSIGNAL);
          if (n <= 0) {
            if (n < 0 && errno == EINTR) continue;
            open = false;
            break;
          }
          off += static_cast<std::size_t>(n);
        }
      }
      if (!open || server.shutdown_requested()) break;
      const ssize_t n = ::recv(fd, buf, sizeof buf, 0);
      if (n > 0) {
        pending.append(buf, static_cast<std::size_t>(n));
      } else if (n == 0 || errno != EINTR) {
        open = false;
      }
    }
    ::close(fd);
  }
  ::close(listener);
  ::unlink(path.c_str());
}

}  // namespace utrl
