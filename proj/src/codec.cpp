#include "qpalf/codec.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

namespace qpalf {

double qstep(int qp) {
    if (qp < 0 || qp > 63) {
        throw std::invalid_argument("qstep: qp must be in [0,63], got " + std::to_string(qp));
    }
    return std::pow(2.0, (qp - 4) / 6.0);
}

namespace {

// Orthonormal 1-D DCT-II basis: T[u][x] = c_u sqrt(2/B) cos(pi (2x+1) u / 2B).
std::vector<double> dct_matrix(int b) {
    std::vector<double> t(static_cast<std::size_t>(b) * b);
    const double pi = std::acos(-1.0);
    for (int u = 0; u < b; ++u) {
        const double cu = (u == 0) ? std::sqrt(0.5) : 1.0;
        for (int x = 0; x < b; ++x) {
            t[static_cast<std::size_t>(u) * b + x] =
                cu * std::sqrt(2.0 / b) * std::cos(pi * (2 * x + 1) * u / (2.0 * b));
        }
    }
    return t;
}

FramePlane pad_to_blocks(const FramePlane& plane, int b) {
    const int pw = (plane.width + b - 1) / b * b;
    const int ph = (plane.height + b - 1) / b * b;
    if (pw == plane.width && ph == plane.height) return plane;
    FramePlane out(pw, ph);
    for (int y = 0; y < ph; ++y) {
        const int sy = std::min(y, plane.height - 1);
        for (int x = 0; x < pw; ++x) {
            out.at(x, y) = plane.at(std::min(x, plane.width - 1), sy);
        }
    }
    return out;
}

// Mean of the block's top and left reconstructed border in raster order.
// Frame-edge blocks take missing border samples from the source frame's
// replicated edge; a fixed mid-gray default would leave constant frames
// inexact at large Qstep.
double dc_predict(const FramePlane& recon, const FramePlane& src, int x0, int y0, int b) {
    double sum = 0.0;
    int count = 0;
    for (int x = x0; x < x0 + b; ++x) {
        sum += (y0 > 0) ? recon.at(x, y0 - 1) : src.at(x, 0);
        ++count;
    }
    for (int y = y0; y < y0 + b; ++y) {
        sum += (x0 > 0) ? recon.at(x0 - 1, y) : src.at(0, y);
        ++count;
    }
    return sum / count;
}

void deblock_pass(FramePlane& recon, int b, double step) {
    const double threshold = 2.0 * step;
    // Vertical block edges left to right, then horizontal edges top to
    // bottom. The filter touches only p0/q0, one sample each side, so edges
    // never overlap (b >= 4) and in-place filtering is order-independent.
    for (int x = b; x < recon.width; x += b) {
        for (int y = 0; y < recon.height; ++y) {
            const int p1 = recon.at(x - 2, y), p0 = recon.at(x - 1, y);
            const int q0 = recon.at(x, y), q1 = recon.at(x + 1, y);
            if (std::abs(p0 - q0) < threshold) {
                const int v = (p1 + 3 * p0 + 3 * q0 + q1 + 4) / 8;
                recon.at(x - 1, y) = static_cast<std::uint8_t>(v);
                recon.at(x, y) = static_cast<std::uint8_t>(v);
            }
        }
    }
    for (int y = b; y < recon.height; y += b) {
        for (int x = 0; x < recon.width; ++x) {
            const int p1 = recon.at(x, y - 2), p0 = recon.at(x, y - 1);
            const int q0 = recon.at(x, y), q1 = recon.at(x, y + 1);
            if (std::abs(p0 - q0) < threshold) {
                const int v = (p1 + 3 * p0 + 3 * q0 + q1 + 4) / 8;
                recon.at(x, y - 1) = static_cast<std::uint8_t>(v);
                recon.at(x, y) = static_cast<std::uint8_t>(v);
            }
        }
    }
}

}  // namespace

EncodeResult encode_decode_rate(const FramePlane& plane, const CodecConfig& config) {
    config.validate();
    const int b = config.block_size;
    const double step = qstep(config.qp);
    const FramePlane src = pad_to_blocks(plane, b);
    const auto t = dct_matrix(b);

    FramePlane recon(src.width, src.height);
    std::vector<double> block(static_cast<std::size_t>(b) * b);
    std::vector<double> tmp(block.size());
    std::vector<double> coeff(block.size());
    std::map<long, std::uint64_t> level_histogram;
    std::uint64_t level_count = 0;

    for (int y0 = 0; y0 < src.height; y0 += b) {
        for (int x0 = 0; x0 < src.width; x0 += b) {
            const double pred =
                config.dc_prediction ? dc_predict(recon, src, x0, y0, b) : 0.0;
            for (int y = 0; y < b; ++y) {
                for (int x = 0; x < b; ++x) {
                    block[static_cast<std::size_t>(y) * b + x] = src.at(x0 + x, y0 + y) - pred;
                }
            }
            // coeff = T block T^t, via tmp = T block.
            for (int u = 0; u < b; ++u) {
                for (int x = 0; x < b; ++x) {
                    double acc = 0.0;
                    for (int y = 0; y < b; ++y) {
                        acc += t[static_cast<std::size_t>(u) * b + y] *
                               block[static_cast<std::size_t>(y) * b + x];
                    }
                    tmp[static_cast<std::size_t>(u) * b + x] = acc;
                }
            }
            for (int u = 0; u < b; ++u) {
                for (int v = 0; v < b; ++v) {
                    double acc = 0.0;
                    for (int x = 0; x < b; ++x) {
                        acc += tmp[static_cast<std::size_t>(u) * b + x] *
                               t[static_cast<std::size_t>(v) * b + x];
                    }
                    const long level = std::lround(acc / step);
                    ++level_histogram[level];
                    ++level_count;
                    coeff[static_cast<std::size_t>(u) * b + v] = level * step;
                }
            }
            // block = T^t coeff T.
            for (int y = 0; y < b; ++y) {
                for (int v = 0; v < b; ++v) {
                    double acc = 0.0;
                    for (int u = 0; u < b; ++u) {
                        acc += t[static_cast<std::size_t>(u) * b + y] *
                               coeff[static_cast<std::size_t>(u) * b + v];
                    }
                    tmp[static_cast<std::size_t>(y) * b + v] = acc;
                }
            }
            for (int y = 0; y < b; ++y) {
                for (int x = 0; x < b; ++x) {
                    double acc = 0.0;
                    for (int v = 0; v < b; ++v) {
                        acc += tmp[static_cast<std::size_t>(y) * b + v] *
                               t[static_cast<std::size_t>(v) * b + x];
                    }
                    const long value = std::lround(acc + pred);
                    recon.at(x0 + x, y0 + y) =
                        static_cast<std::uint8_t>(std::clamp(value, 0L, 255L));
                }
            }
        }
    }

    if (config.deblock) deblock_pass(recon, b, step);

    double entropy = 0.0;
    for (const auto& [level, count] : level_histogram) {
        const double p = static_cast<double>(count) / static_cast<double>(level_count);
        entropy -= p * std::log2(p);
    }

    EncodeResult result;
    result.bpp = entropy;  // one level per coded pixel
    if (recon.width != plane.width || recon.height != plane.height) {
        FramePlane cropped(plane.width, plane.height);
        for (int y = 0; y < plane.height; ++y) {
            for (int x = 0; x < plane.width; ++x) cropped.at(x, y) = recon.at(x, y);
        }
        result.recon = std::move(cropped);
    } else {
        result.recon = std::move(recon);
    }
    return result;
}

}  // namespace qpalf
