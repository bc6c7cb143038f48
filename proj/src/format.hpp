#pragma once

// Internal: locale-independent numeric formatting for CSV output.

#include <charconv>
#include <string>
#include <system_error>

namespace stacksim::detail {

/// Scientific notation with 9 significant digits.
inline std::string sci(double x) {
    char buf[40];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, x, std::chars_format::scientific, 8);
    if (ec != std::errc{}) return "nan";
    return {buf, end};
}

}  // namespace stacksim::detail
