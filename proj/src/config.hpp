#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace dygl {

// `key = value` lines; '#' starts a comment; blank lines are ignored.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

KeyValues parse_key_values(std::string_view text);
std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& text);

std::int64_t parse_int(const std::string& key, const std::string& value);
double parse_double(const std::string& key, const std::string& value);
bool parse_bool(const std::string& key, const std::string& value);
/// Accepts "1,2,3" or "[1, 2, 3]".
std::vector<std::int64_t> parse_int_list(const std::string& key, const std::string& value);
std::vector<double> parse_double_list(const std::string& key, const std::string& value);

std::string format_double(double v);

}  // namespace dygl
