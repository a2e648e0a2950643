#include "qpalf/image_io.hpp"

#include <cmath>
#include <fstream>

#include "qpalf/errors.hpp"

namespace qpalf {

namespace {

// Next PGM header token, skipping whitespace and '#' comment lines.
std::string next_token(std::istream& in, const std::string& path) {
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw FormatError("'" + path + "': truncated PGM header");
    std::string tok;
    while (c != EOF && !std::isspace(c)) {
        tok.push_back(static_cast<char>(c));
        c = in.get();
    }
    return tok;
}

int parse_dim(const std::string& tok, const std::string& path) {
    try {
        const int v = std::stoi(tok);
        if (v < 1) throw std::out_of_range("non-positive");
        return v;
    } catch (const std::exception&) {
        throw FormatError("'" + path + "': bad PGM dimension '" + tok + "'");
    }
}

}  // namespace

FramePlane load_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char m0 = 0, m1 = 0;
    in.get(m0);
    in.get(m1);
    if (!in || m0 != 'P') throw FormatError("'" + path + "' is not a PNM file");
    if (m1 != '5') {
        throw FormatError("'" + path + "': only binary 8-bit PGM (P5) is supported, got P" +
                          std::string(1, m1));
    }

    const int width = parse_dim(next_token(in, path), path);
    const int height = parse_dim(next_token(in, path), path);
    const std::string maxval = next_token(in, path);
    if (maxval != "255") {
        throw FormatError("'" + path + "': maxval must be 255, got " + maxval);
    }
    // The maxval token is followed by exactly one whitespace byte, consumed
    // by next_token's trailing get().

    FramePlane plane(width, height);
    in.read(reinterpret_cast<char*>(plane.samples.data()),
            static_cast<std::streamsize>(plane.samples.size()));
    if (in.gcount() != static_cast<std::streamsize>(plane.samples.size())) {
        throw TruncatedError("'" + path + "': PGM body shorter than header declares");
    }
    return plane;
}

void save_pgm(const FramePlane& plane, const std::string& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << "P5\n" << plane.width << " " << plane.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(plane.samples.data()),
              static_cast<std::streamsize>(plane.samples.size()));
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

FramePlane rgb_to_luma(const FramePlane& r, const FramePlane& g, const FramePlane& b) {
    if (!r.same_size(g) || !r.same_size(b)) {
        throw std::invalid_argument("rgb_to_luma: plane dimensions differ");
    }
    FramePlane y(r.width, r.height);
    for (std::size_t i = 0; i < y.samples.size(); ++i) {
        const double v = 16.0 + (65.481 * r.samples[i] + 128.553 * g.samples[i] +
                                 24.966 * b.samples[i]) / 255.0;
        const long rounded = std::lround(v);
        y.samples[i] = static_cast<std::uint8_t>(std::clamp(rounded, 16L, 235L));
    }
    return y;
}

FramePlane load_yuv420(const std::string& path, int width, int height) {
    if (width < 1 || height < 1) {
        throw std::invalid_argument("load_yuv420: dimensions must be positive");
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    const std::uint64_t luma = static_cast<std::uint64_t>(width) * height;
    in.seekg(0, std::ios::end);
    const std::uint64_t size = static_cast<std::uint64_t>(in.tellg());
    if (size * 2 < luma * 3) {  // one 4:2:0 frame is 1.5 * W * H bytes
        throw std::invalid_argument("'" + path + "': file holds " + std::to_string(size) +
                                    " bytes, one " + std::to_string(width) + "x" +
                                    std::to_string(height) + " 4:2:0 frame needs " +
                                    std::to_string(luma * 3 / 2));
    }
    in.seekg(0, std::ios::beg);
    FramePlane plane(width, height);
    in.read(reinterpret_cast<char*>(plane.samples.data()), static_cast<std::streamsize>(luma));
    if (in.gcount() != static_cast<std::streamsize>(luma)) {
        throw TruncatedError("'" + path + "': unexpected end of YUV data");
    }
    return plane;
}

}  // namespace qpalf
