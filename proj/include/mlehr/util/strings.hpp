#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mlehr::util {

std::string_view trim(std::string_view s);
std::string lower_ascii(std::string_view s);
// Splits on runs of ASCII whitespace; never yields empty pieces.
std::vector<std::string> split_ws(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
// Collapses whitespace runs (including tabs/newlines) to one space and trims.
std::string normalize_ws(std::string_view s);

// Strict full-string parse; rejects empty, partial and non-finite input.
std::optional<double> parse_double(std::string_view s);
std::optional<long long> parse_int(std::string_view s);

// Shortest representation that round-trips through parse_double.
std::string format_double(double v);

bool is_all_digits(std::string_view s);

}  // namespace mlehr::util
