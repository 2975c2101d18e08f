#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace ehrnip {

/// Half-up rounding to two decimals. The epsilon absorbs representation
/// error such as 2.675 being stored as 2.67499999...
inline double round_half_up_2(double value) noexcept {
    return std::floor(value * 100.0 + 0.5 + 1e-9) / 100.0;
}

/// "%.2f" of round_half_up_2(value).
inline std::string fixed2(double value) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", round_half_up_2(value));
    return buf;
}

}  // namespace ehrnip
