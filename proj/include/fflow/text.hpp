#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <string>

namespace fflow {

/// Shortest decimal text that round-trips the double ("%.17g" trimmed by
/// trying lower precisions first).
inline std::string format_double(double x) {
    if (std::isnan(x)) {
        return "nan";
    }
    if (std::isinf(x)) {
        return x > 0 ? "inf" : "-inf";
    }
    char buf[32];
    for (int precision = 15; precision <= 17; ++precision) {
        std::snprintf(buf, sizeof buf, "%.*g", precision, x);
        if (std::strtod(buf, nullptr) == x) {
            break;
        }
    }
    return buf;
}

}  // namespace fflow
