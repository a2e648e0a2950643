#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace qpalf {

/// One 8-bit luma plane, row-major.
struct FramePlane {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> samples;

    FramePlane() = default;
    FramePlane(int w, int h, std::uint8_t fill = 0)
        : width(w), height(h), samples(static_cast<std::size_t>(w) * h, fill) {
        if (w < 1 || h < 1) throw std::invalid_argument("frame: dimensions must be positive");
    }

    std::uint8_t at(int x, int y) const {
        return samples[static_cast<std::size_t>(y) * width + x];
    }
    std::uint8_t& at(int x, int y) {
        return samples[static_cast<std::size_t>(y) * width + x];
    }

    bool same_size(const FramePlane& o) const { return width == o.width && height == o.height; }
};

inline double mse(const FramePlane& a, const FramePlane& b) {
    if (!a.same_size(b)) throw std::invalid_argument("mse: plane dimensions differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const double d = static_cast<double>(a.samples[i]) - static_cast<double>(b.samples[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(a.samples.size());
}

/// Sum of squared differences in exact integer arithmetic.
inline std::uint64_t ssd(const FramePlane& a, const FramePlane& b) {
    if (!a.same_size(b)) throw std::invalid_argument("ssd: plane dimensions differ");
    std::uint64_t acc = 0;
    for (std::size_t i = 0; i < a.samples.size(); ++i) {
        const std::int64_t d = static_cast<std::int64_t>(a.samples[i]) - b.samples[i];
        acc += static_cast<std::uint64_t>(d * d);
    }
    return acc;
}

}  // namespace qpalf
