#pragma once

#include <cmath>
#include <cstdio>
#include <string>

namespace qpalf {

/// Compact, locale-independent number formatting for CSV output. Infinite
/// PSNR sentinels appear as "inf".
inline std::string num(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.12g", v);
    return buf;
}

}  // namespace qpalf
