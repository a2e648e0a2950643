#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qpalf/codec.hpp"
#include "qpalf/errors.hpp"
#include "qpalf/image_io.hpp"

using namespace qpalf;

namespace {

std::string testdata(const std::string& name) {
    return std::string(QPALF_TESTDATA_DIR) + "/" + name;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

// Boundary low-pass written from the contract: across each block boundary,
// p0/q0 become (p1+3p0+3q0+q1+4)/8 when |p0-q0| < 2*Qstep. Test frames have a
// single edge so filtering order cannot matter.
FramePlane deblock_oracle(FramePlane r, int b, double step) {
    const double threshold = 2.0 * step;
    for (int x = b; x < r.width; x += b) {
        for (int y = 0; y < r.height; ++y) {
            const int p1 = r.at(x - 2, y), p0 = r.at(x - 1, y);
            const int q0 = r.at(x, y), q1 = r.at(x + 1, y);
            if (std::abs(p0 - q0) < threshold) {
                const int v = (p1 + 3 * p0 + 3 * q0 + q1 + 4) / 8;
                r.at(x - 1, y) = static_cast<std::uint8_t>(v);
                r.at(x, y) = static_cast<std::uint8_t>(v);
            }
        }
    }
    for (int y = b; y < r.height; y += b) {
        for (int x = 0; x < r.width; ++x) {
            const int p1 = r.at(x, y - 2), p0 = r.at(x, y - 1);
            const int q0 = r.at(x, y), q1 = r.at(x, y + 1);
            if (std::abs(p0 - q0) < threshold) {
                const int v = (p1 + 3 * p0 + 3 * q0 + q1 + 4) / 8;
                r.at(x, y - 1) = static_cast<std::uint8_t>(v);
                r.at(x, y) = static_cast<std::uint8_t>(v);
            }
        }
    }
    return r;
}

FramePlane half_split_vertical(int w, int h, std::uint8_t left, std::uint8_t right) {
    FramePlane p(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) p.at(x, y) = x < w / 2 ? left : right;
    }
    return p;
}

FramePlane checkerboard(int w, int h) {
    FramePlane p(w, h);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            p.at(x, y) = static_cast<std::uint8_t>((x * 31 + y * 57 + (x * y) % 13 * 7) % 256);
        }
    }
    return p;
}

bool same_samples(const FramePlane& a, const FramePlane& b) {
    return a.same_size(b) &&
           std::memcmp(a.samples.data(), b.samples.data(), a.samples.size()) == 0;
}

}  // namespace

TEST_CASE("qstep pinned values and range check") {
    CHECK(qstep(4) == 1.0);
    CHECK(qstep(10) == 2.0);
    CHECK(qstep(22) == 8.0);
    CHECK(qstep(37) == doctest::Approx(std::pow(2.0, 33.0 / 6.0)));
    CHECK_THROWS_AS((void)qstep(-1), std::invalid_argument);
    CHECK_THROWS_AS((void)qstep(64), std::invalid_argument);
}

TEST_CASE("codec config validation") {
    CodecConfig cfg;
    cfg.qp = 64;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.qp = 32;
    cfg.block_size = 5;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    for (int b : {4, 8, 16}) {
        cfg.block_size = b;
        CHECK_NOTHROW(cfg.validate());
    }
}

TEST_CASE("constant frames reconstruct exactly with DC prediction") {
    for (int value : {0, 57, 128, 255}) {
        for (int block : {4, 8, 16}) {
            CodecConfig cfg;
            cfg.qp = 37;
            cfg.block_size = block;
            FramePlane plane(30, 22, static_cast<std::uint8_t>(value));
            const auto recon = encode_decode(plane, cfg);
            CHECK(same_samples(recon, plane));

            cfg.deblock = false;
            CHECK(same_samples(encode_decode(plane, cfg), plane));
        }
    }
}

TEST_CASE("qp=4 distortion is bounded by rounding") {
    CodecConfig cfg;
    cfg.qp = 4;

    // Pure quantization path: the bound holds for arbitrary content.
    cfg.deblock = false;
    CHECK(mse(encode_decode(checkerboard(48, 40), cfg), checkerboard(48, 40)) <= 1.0);

    // Full pipeline on a natural image: the deblocker's tiny threshold only
    // touches near-flat boundaries there, so the bound survives.
    cfg.deblock = true;
    const auto img = load_pgm(testdata("img01.pgm"));
    CHECK(mse(encode_decode(img, cfg), img) <= 1.0);
}

TEST_CASE("distortion grows with qp and the modeled rate shrinks") {
    const auto img = load_pgm(testdata("img02.pgm"));
    double prev_mse = -1.0;
    double prev_bpp = 1e9;
    for (int qp : {22, 27, 32, 37}) {
        CodecConfig cfg;
        cfg.qp = qp;
        const auto r = encode_decode_rate(img, cfg);
        const double m = mse(r.recon, img);
        CHECK(m >= prev_mse);
        CHECK(r.bpp < prev_bpp);
        CHECK(r.bpp > 0.0);
        prev_mse = m;
        prev_bpp = r.bpp;
    }
    CHECK(prev_mse > 1.0);  // qp=37 visibly distorts a natural image
}

TEST_CASE("re-encoding its own output stays within first-pass distortion") {
    const auto img = load_pgm(testdata("img03.pgm"));
    for (int qp : {27, 37}) {
        CodecConfig cfg;
        cfg.qp = qp;
        const auto once = encode_decode(img, cfg);
        const auto twice = encode_decode(once, cfg);
        CHECK(mse(twice, once) <= mse(once, img));
    }
}

TEST_CASE("encode_decode is deterministic and preserves dimensions") {
    const auto img = load_pgm(testdata("img01.pgm"));
    CodecConfig cfg;
    cfg.qp = 32;
    CHECK(same_samples(encode_decode(img, cfg), encode_decode(img, cfg)));

    FramePlane odd = checkerboard(21, 13);
    const auto recon = encode_decode(odd, cfg);
    CHECK(recon.width == 21);
    CHECK(recon.height == 13);
}

TEST_CASE("deblock smooths weak edges and skips strong ones") {
    SUBCASE("strong vertical edge stays untouched") {
        const auto plane = half_split_vertical(16, 8, 100, 200);
        CodecConfig on, off;
        on.qp = off.qp = 22;
        off.deblock = false;
        const auto r_off = encode_decode(plane, off);
        const auto r_on = encode_decode(plane, on);
        CHECK(std::abs(r_off.at(7, 3) - r_off.at(8, 3)) >= 2.0 * qstep(22));
        CHECK(same_samples(r_on, r_off));
    }
    SUBCASE("weak vertical edge matches the low-pass oracle") {
        const auto plane = half_split_vertical(16, 8, 100, 104);
        CodecConfig on, off;
        on.qp = off.qp = 27;
        off.deblock = false;
        const auto r_off = encode_decode(plane, off);
        const auto r_on = encode_decode(plane, on);
        CHECK_FALSE(same_samples(r_on, r_off));
        CHECK(same_samples(r_on, deblock_oracle(r_off, 8, qstep(27))));
    }
    SUBCASE("weak horizontal edge matches the low-pass oracle") {
        FramePlane plane(8, 16);
        for (int y = 0; y < 16; ++y) {
            for (int x = 0; x < 8; ++x) plane.at(x, y) = y < 8 ? 100 : 104;
        }
        CodecConfig on, off;
        on.qp = off.qp = 27;
        off.deblock = false;
        const auto r_off = encode_decode(plane, off);
        const auto r_on = encode_decode(plane, on);
        CHECK_FALSE(same_samples(r_on, r_off));
        CHECK(same_samples(r_on, deblock_oracle(r_off, 8, qstep(27))));
    }
}

TEST_CASE("dc prediction zeroes the rate of constant frames") {
    CodecConfig cfg;
    cfg.qp = 22;
    FramePlane flat(32, 32, 128);
    CHECK(encode_decode_rate(flat, cfg).bpp == 0.0);

    cfg.dc_prediction = false;
    CHECK(encode_decode_rate(flat, cfg).bpp > 0.0);
}

TEST_CASE("pgm round trip and header handling") {
    const auto path = temp_file("qpalf_io_test.pgm");

    SUBCASE("round trip is lossless") {
        FramePlane plane(19, 7);
        for (std::size_t i = 0; i < plane.samples.size(); ++i) {
            plane.samples[i] = static_cast<std::uint8_t>((i * 37) % 256);
        }
        save_pgm(plane, path.string());
        const auto back = load_pgm(path.string());
        CHECK(same_samples(back, plane));
    }
    SUBCASE("comments after the magic are accepted") {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n# a comment\n4 2\n# another\n255\n";
        const char body[8] = {0, 1, 2, 3, 4, 5, 6, 7};
        f.write(body, sizeof(body));
        f.close();
        const auto p = load_pgm(path.string());
        CHECK(p.width == 4);
        CHECK(p.height == 2);
        CHECK(p.at(3, 1) == 7);
    }
    SUBCASE("ascii PGM is rejected") {
        std::ofstream f(path, std::ios::binary);
        f << "P2\n2 2\n255\n0 1 2 3\n";
        f.close();
        CHECK_THROWS_AS((void)load_pgm(path.string()), FormatError);
    }
    SUBCASE("wrong maxval is rejected") {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n2 2\n254\n";
        f.write("\0\0\0\0", 4);
        f.close();
        CHECK_THROWS_AS((void)load_pgm(path.string()), FormatError);
    }
    SUBCASE("short body is rejected") {
        std::ofstream f(path, std::ios::binary);
        f << "P5\n4 4\n255\n";
        f.write("\0\0\0", 3);
        f.close();
        CHECK_THROWS_AS((void)load_pgm(path.string()), TruncatedError);
    }
    SUBCASE("missing file is an io error") {
        CHECK_THROWS_AS((void)load_pgm("/nonexistent/file.pgm"), IoError);
    }
    std::filesystem::remove(path);
}

TEST_CASE("rgb_to_luma pinned values") {
    FramePlane r(2, 1), g(2, 1), b(2, 1);
    auto set_all = [&](std::uint8_t v) {
        for (auto* p : {&r, &g, &b}) p->samples.assign(2, v);
    };
    set_all(255);
    CHECK(rgb_to_luma(r, g, b).at(0, 0) == 235);
    set_all(0);
    CHECK(rgb_to_luma(r, g, b).at(0, 0) == 16);
    set_all(128);
    CHECK(rgb_to_luma(r, g, b).at(0, 0) == 126);

    FramePlane wrong(3, 1);
    CHECK_THROWS_AS((void)rgb_to_luma(r, g, wrong), std::invalid_argument);
}

TEST_CASE("yuv420 loading takes the first frame's luma") {
    const auto path = temp_file("qpalf_io_test.yuv");
    const int w = 4, h = 2;
    {
        std::ofstream f(path, std::ios::binary);
        for (int i = 0; i < w * h; ++i) f.put(static_cast<char>(i * 10));
        for (int i = 0; i < w * h / 2; ++i) f.put(static_cast<char>(128));  // U+V
    }
    const auto plane = load_yuv420(path.string(), w, h);
    CHECK(plane.width == w);
    CHECK(plane.height == h);
    CHECK(plane.at(0, 0) == 0);
    CHECK(plane.at(3, 1) == 70);

    CHECK_THROWS_AS((void)load_yuv420(path.string(), 100, 100), std::invalid_argument);
    CHECK_THROWS_AS((void)load_yuv420("/nonexistent/clip.yuv", w, h), IoError);
    std::filesystem::remove(path);
}
