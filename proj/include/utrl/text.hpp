#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace utrl {

std::vector<std::string> split_lines(std::string_view text);
std::string trim(std::string_view s);
std::string rtrim(std::string_view s);
bool starts_with(std::string_view s, std::string_view prefix);

// Strips trailing whitespace from every line and leaves exactly one trailing
// newline. The empty string (or whitespace-only text) normalizes to "".
std::string normalize_text(std::string_view text);

// Same per-line stripping without forcing a trailing newline.
std::string normalize_block(std::string_view text);

// 64-bit FNV-1a; stable across platforms, used for feature hashing.
std::uint64_t fnv1a(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL);

std::string hex_digest(std::string_view data);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view content);

// Current UTC time as YYYY-MM-DDTHH:MM:SSZ.
std::string iso_timestamp();

}  // namespace utrl
