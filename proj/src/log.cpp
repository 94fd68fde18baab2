#include "utrl/log.hpp"

#include <iostream>
#include <mutex>
#include <string>

#include "utrl/errors.hpp"

namespace utrl::log {
namespace {

std::mutex g_mutex;
Level g_min = Level::info;

void stderr_sink(Level level, std::string_view message) {
  static constexpr const char* kNames[] = {"debug", "info", "warn", "error"};
  std::cerr << "[" << kNames[static_cast<int>(level)] << "] " << message << '\n';
}

Sink& sink_ref() {
  static Sink sink = stderr_sink;
  return sink;
}

}  // namespace

Sink set_sink(Sink sink) {
  std::lock_guard lock(g_mutex);
  Sink old = std::move(sink_ref());
  sink_ref() = sink ? std::move(sink) : Sink(stderr_sink);
  return old;
}

void set_min_level(Level level) {
  std::lock_guard lock(g_mutex);
  g_min = level;
}

Level parse_level(std::string_view name) {
  if (name == "debug") return Level::debug;
  if (name == "info") return Level::info;
  if (name == "warn") return Level::warn;
  if (name == "error") return Level::error;
  throw ConfigError("unknown log level: " + std::string(name));
}

void write(Level level, std::string_view message) {
  std::lock_guard lock(g_mutex);
  if (level < g_min) return;
  sink_ref()(level, message);
}

}  // namespace utrl::log
