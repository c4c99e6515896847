#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace calib {

/// Shortest decimal text that parses back to the same double ("inf" for +infinity).
std::string format_real(double value);
/// Parses a full token as a double; returns false on any trailing garbage.
bool parse_real(std::string_view text, double& out);

std::vector<std::string_view> split(std::string_view s, char sep);
std::string_view trim(std::string_view s);

}  // namespace calib
