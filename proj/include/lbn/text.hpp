#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace lbn::text {

// Shortest representation that round-trips; "nan"/"inf" for non-finite.
std::string fmt(double v);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);

// Both throw lbn::ConfigError naming `what` on malformed input.
double parse_double(std::string_view s, std::string_view what);
long long parse_int(std::string_view s, std::string_view what);

}  // namespace lbn::text
