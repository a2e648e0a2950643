#pragma once

#include <string>

#include "qpalf/frame.hpp"

namespace qpalf {

/// Binary 8-bit grayscale PGM ("P5", maxval 255). Comments after the magic
/// are accepted; other PNM flavors are rejected.
FramePlane load_pgm(const std::string& path);
void save_pgm(const FramePlane& plane, const std::string& path);

/// BT.601 limited-range luma: Y = 16 + (65.481 R + 128.553 G + 24.966 B)/255,
/// rounded and clipped to [16,235].
FramePlane rgb_to_luma(const FramePlane& r, const FramePlane& g, const FramePlane& b);

/// Y plane of the first frame of a raw planar 8-bit YUV 4:2:0 file.
FramePlane load_yuv420(const std::string& path, int width, int height);

}  // namespace qpalf
