#pragma once

#include "qpalf/frame.hpp"

namespace qpalf {

struct CodecConfig {
    int qp = 32;
    int block_size = 8;
    bool dc_prediction = true;
    bool deblock = true;

    void validate() const {
        if (qp < 0 || qp > 63) {
            throw std::invalid_argument("codec: qp must be in [0,63], got " + std::to_string(qp));
        }
        if (block_size != 4 && block_size != 8 && block_size != 16) {
            throw std::invalid_argument("codec: block size must be 4, 8, or 16");
        }
    }
};

/// Quantization step 2^((qp-4)/6).
double qstep(int qp);

struct EncodeResult {
    FramePlane recon;
    // Order-0 entropy of the quantized coefficient stream over the coded
    // (padded) area, in bits per pixel. A modeled rate, not real bits.
    double bpp = 0.0;
};

/// Block-DCT intra codec pass: per block DC prediction from the reconstructed
/// top/left border, orthonormal DCT-II, uniform scalar quantization with
/// qstep(qp), reconstruction, then a mild boundary low-pass. Deterministic.
EncodeResult encode_decode_rate(const FramePlane& plane, const CodecConfig& config);

inline FramePlane encode_decode(const FramePlane& plane, const CodecConfig& config) {
    return encode_decode_rate(plane, config).recon;
}

}  // namespace qpalf
