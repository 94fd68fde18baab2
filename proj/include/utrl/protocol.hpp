#pragma once

#include <chrono>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "utrl/policy.hpp"
#include "utrl/process.hpp"

namespace utrl {

inline constexpr int kProtocolVersion = 1;

// Line-delimited message channel to a policy server.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void send(const std::string& line) = 0;
  // Throws ProtocolError (retryable) on timeout or a closed channel.
  virtual std::string receive(std::chrono::duration<double> timeout) = 0;
  // Re-establishes the channel after a failure; false when that is impossible.
  virtual bool reconnect() = 0;
};

// Talks to a server started as a child process over its stdin/stdout. A dead
// child cannot be restarted without losing its parameters, so reconnect fails.
class StdioTransport : public Transport {
 public:
  explicit StdioTransport(std::vector<std::string> command);
  void send(const std::string& line) override;
  std::string receive(std::chrono::duration<double> timeout) override;
  bool reconnect() override { return false; }

 private:
  std::unique_ptr<LineChild> child_;
};

// Talks to a server listening on a unix domain socket.
class SocketTransport : public Transport {
 public:
  explicit SocketTransport(std::string path);
  ~SocketTransport() override;
  void send(const std::string& line) override;
  std::string receive(std::chrono::duration<double> timeout) override;
  bool reconnect() override;

 private:
  void connect_socket();
  std::string path_;
  int fd_ = -1;
  std::string pending_;
};

// Policy whose parameters live in an external server. Idempotent requests
// (hello, sample, score) are retried after transport failures; update,
// freeze_reference and save are retried only when the request never reached
// the server or the server answered with a retryable error.
class ExternalPolicy : public Policy {
 public:
  ExternalPolicy(std::unique_ptr<Transport> transport, std::size_t retries,
                 std::chrono::duration<double> timeout = std::chrono::seconds(600));

  // Handshake result: protocol version, backend name and supported ops.
  const nlohmann::json& server_info() const { return info_; }

  std::vector<Trajectory> sample_batch(const std::string& prompt, std::size_t n, const DecodingParams& params,
                                       std::uint64_t seed) override;
  Trajectory greedy(const std::string& prompt, std::size_t max_len) override;
  ScoreResult score(const std::string& prompt, const std::string& completion, bool terminated = true) override;
  double apply_update(std::span<const UpdateItem> batch, double learning_rate) override;
  void freeze_reference() override;
  void save(const std::string& path) override;
  void load(const std::string& path) override;
  std::string backend() const override { return "external:" + info_.value("backend", std::string("unknown")); }

  nlohmann::json request(nlohmann::json message, bool idempotent);

 private:
  std::unique_ptr<Transport> transport_;
  std::size_t retries_;
  std::chrono::duration<double> timeout_;
  std::uint64_t next_id_ = 1;
  nlohmann::json info_;
};

// Server side of the protocol around any Policy. One request per line, one
// response per line; malformed requests get an error response and the
// session continues.
class PolicyServer {
 public:
  explicit PolicyServer(Policy& policy) : policy_(policy) {}
  std::string handle(const std::string& line);
  bool shutdown_requested() const { return shutdown_; }

 private:
  nlohmann::json dispatch(const nlohmann::json& request);
  Policy& policy_;
  bool shutdown_ = false;
};

// Serves requests from `in` until shutdown or end of input.
void serve_stream(Policy& policy, std::istream& in, std::ostream& out);
// Serves connections on a unix socket one at a time until a shutdown request.
void serve_socket(Policy& policy, const std::string& path);

nlohmann::json trajectory_to_wire(const Trajectory& t);
Trajectory trajectory_from_wire(const nlohmann::json& j, const std::string& prompt);

}  // namespace utrl
