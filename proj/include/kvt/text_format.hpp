#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace kvt {

/// Shortest representation that parses back to the same double.
std::string format_double(double value);

// Each parser throws ConfigError naming `key` when the text is not a valid value.
double parse_double(std::string_view text, std::string_view key);
std::uint64_t parse_uint(std::string_view text, std::string_view key);
bool parse_bool(std::string_view text, std::string_view key);

std::string trim(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

/// Parses `key=value` lines; '#' starts a comment, blank lines are skipped.
/// Throws ConfigError on a malformed line or a repeated key.
std::map<std::string, std::string> parse_key_values(std::string_view text);
std::string write_key_values(const std::map<std::string, std::string>& values);

}  // namespace kvt
