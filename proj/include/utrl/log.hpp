#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace utrl::log {

enum class Level { debug, info, warn, error };

using Sink = std::function<void(Level, std::string_view)>;

// Replaces the process-wide sink (stderr by default); returns the old one.
Sink set_sink(Sink sink);
void set_min_level(Level level);
// "debug", "info", "warn" or "error"; throws ConfigError otherwise.
Level parse_level(std::string_view name);

void write(Level level, std::string_view message);
inline void debug(std::string_view m) { write(Level::debug, m); }
inline void info(std::string_view m) { write(Level::info, m); }
inline void warn(std::string_view m) { write(Level::warn, m); }
inline void error(std::string_view m) { write(Level::error, m); }

}  // namespace utrl::log
