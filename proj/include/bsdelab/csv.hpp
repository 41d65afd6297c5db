#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace bsdelab {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCsvVersionLine = "# bsdelab 0.1.0";

/// Shortest round-trip decimal form with '.' as separator.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) break;
    }
    return buf;
}

}  // namespace bsdelab
