#pragma once

#include <string>

#include "qpalf/net.hpp"

namespace qpalf {

/// Writes magic "QPALFWT1", a length-prefixed UTF-8 manifest (version, config
/// echo, per-tensor name/shape/byte-offset records), then the little-endian
/// float32 blob in parameter order. Round trip is bit-exact.
void save_weights(const QpalfWeights<float>& weights, const std::string& path);

/// Reads a weight file; the returned config comes from the manifest.
QpalfWeights<float> load_weights(const std::string& path);

/// Same, but the manifest config must equal `expected` (ConfigMismatchError).
QpalfWeights<float> load_weights(const std::string& path, const NetworkConfig& expected);

}  // namespace qpalf
