#include <array>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qpalf/codec.hpp"
#include "qpalf/errors.hpp"
#include "qpalf/evaluation.hpp"
#include "qpalf/image_io.hpp"
#include "qpalf/rng.hpp"

using namespace qpalf;

namespace {

std::string testdata(const std::string& name) {
    return std::string(QPALF_TESTDATA_DIR) + "/" + name;
}

std::filesystem::path temp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / name;
}

FramePlane noisy(int w, int h, std::uint64_t seed) {
    FramePlane p(w, h);
    Rng rng(seed);
    for (auto& s : p.samples) s = static_cast<std::uint8_t>(rng.next_u64() % 256);
    return p;
}

// Direct per-window SSIM: the 2-D Gaussian kernel is materialized and every
// window position is evaluated with plain nested loops, no separable passes.
double ssim_reference(const FramePlane& a, const FramePlane& b) {
    constexpr int kWin = 11;
    double kernel[kWin][kWin];
    double ksum = 0.0;
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) {
            const double di = i - 5.0, dj = j - 5.0;
            kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            ksum += kernel[i][j];
        }
    }
    for (int i = 0; i < kWin; ++i) {
        for (int j = 0; j < kWin; ++j) kernel[i][j] /= ksum;
    }
    const double c1 = 0.01 * 255.0 * 0.01 * 255.0;
    const double c2 = 0.03 * 255.0 * 0.03 * 255.0;

    double acc = 0.0;
    std::size_t count = 0;
    for (int y0 = 0; y0 + kWin <= a.height; ++y0) {
        for (int x0 = 0; x0 + kWin <= a.width; ++x0) {
            double ma = 0.0, mb = 0.0, maa = 0.0, mbb = 0.0, mab = 0.0;
            for (int i = 0; i < kWin; ++i) {
                for (int j = 0; j < kWin; ++j) {
                    const double va = a.at(x0 + j, y0 + i);
                    const double vb = b.at(x0 + j, y0 + i);
                    const double w = kernel[i][j];
                    ma += w * va;
                    mb += w * vb;
                    maa += w * va * va;
                    mbb += w * vb * vb;
                    mab += w * va * vb;
                }
            }
            const double var_a = maa - ma * ma;
            const double var_b = mbb - mb * mb;
            const double cov = mab - ma * mb;
            acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
            ++count;
        }
    }
    return acc / static_cast<double>(count);
}

RdCurve curve(std::initializer_list<RdPoint> pts) {
    RdCurve c;
    c.points = pts;
    return c;
}

RdCurve scaled_rates(const RdCurve& c, double k) {
    RdCurve out = c;
    for (auto& p : out.points) p.rate *= k;
    return out;
}

}  // namespace

TEST_CASE("psnr pinned values, oracle, and symmetry") {
    FramePlane a(10, 10, 100), b(10, 10, 101);
    CHECK(psnr(a, b) == doctest::Approx(20.0 * std::log10(255.0)).epsilon(1e-12));
    CHECK(psnr(a, b) == doctest::Approx(48.1308).epsilon(1e-4));

    CHECK(std::isinf(psnr(a, a)));

    const auto x = noisy(17, 9, 1);
    const auto y = noisy(17, 9, 2);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.samples.size(); ++i) {
        const double d = static_cast<double>(x.samples[i]) - y.samples[i];
        acc += d * d;
    }
    const double expect = 10.0 * std::log10(255.0 * 255.0 * x.samples.size() / acc);
    CHECK(psnr(x, y) == doctest::Approx(expect).epsilon(1e-9));
    CHECK(psnr(x, y) == psnr(y, x));

    FramePlane wrong(9, 10);
    CHECK_THROWS_AS((void)psnr(a, wrong), std::invalid_argument);
}

TEST_CASE("ssim basics") {
    const auto img = load_pgm(testdata("img01.pgm"));
    CHECK(ssim(img, img) == doctest::Approx(1.0).epsilon(1e-12));

    FramePlane inverted(img.width, img.height);
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
        inverted.samples[i] = static_cast<std::uint8_t>(255 - img.samples[i]);
    }
    CHECK(ssim(img, inverted) < 0.3);

    const auto n1 = noisy(32, 20, 3), n2 = noisy(32, 20, 4);
    const double s = ssim(n1, n2);
    CHECK(s >= -1.0);
    CHECK(s <= 1.0);
    CHECK(std::abs(ssim(n1, n2) - ssim(n2, n1)) <= 1e-12);

    FramePlane small(10, 12);
    CHECK_THROWS_AS((void)ssim(small, small), std::invalid_argument);
    FramePlane wrong(12, 12);
    CHECK_THROWS_AS((void)ssim(small, wrong), std::invalid_argument);
}

TEST_CASE("ssim matches an independent per-window reference") {
    const auto img = load_pgm(testdata("img01.pgm"));
    CodecConfig cfg;
    cfg.qp = 32;
    const auto recon = encode_decode(img, cfg);

    const double got = ssim(img, recon);
    const double ref = ssim_reference(img, recon);
    CHECK(got == doctest::Approx(ref).epsilon(1e-4));
    CHECK(got > 0.5);  // sanity: a mid-QP reconstruction stays structurally close
    CHECK(got < 1.0);

    // A second, structurally different pair.
    const auto n1 = noisy(40, 33, 5), n2 = noisy(40, 33, 6);
    CHECK(ssim(n1, n2) == doctest::Approx(ssim_reference(n1, n2)).epsilon(1e-4));
}

TEST_CASE("bd_rate pinned values") {
    const auto anchor = curve({{0.28, 36.6}, {0.46, 39.6}, {0.70, 42.3}, {1.00, 44.6}});

    CHECK(bd_rate(anchor, anchor) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(bd_rate(anchor, scaled_rates(anchor, 1.1)) == doctest::Approx(10.0).epsilon(1e-4));
    CHECK(bd_rate(anchor, scaled_rates(anchor, 0.9)) == doctest::Approx(-10.0).epsilon(1e-4));

    // Uniform scaling by k is exactly (k-1)*100: the log offset is constant.
    const auto other =
        curve({{0.1, 30.0}, {0.3, 33.5}, {0.8, 36.0}, {1.7, 38.2}, {3.0, 40.0}});
    CHECK(bd_rate(other, scaled_rates(other, 1.37)) == doctest::Approx(37.0).epsilon(1e-6));
    CHECK(bd_rate(other, scaled_rates(other, 0.5)) == doctest::Approx(-50.0).epsilon(1e-6));
}

TEST_CASE("bd_rate rejects bad curves") {
    const auto anchor = curve({{0.28, 36.6}, {0.46, 39.6}, {0.70, 42.3}, {1.00, 44.6}});

    auto disjoint = anchor;
    for (auto& p : disjoint.points) p.psnr += 20.0;
    CHECK_THROWS_AS((void)bd_rate(anchor, disjoint), EvalError);

    auto short_curve = anchor;
    short_curve.points.pop_back();
    CHECK_THROWS_AS((void)bd_rate(anchor, short_curve), EvalError);

    auto non_monotone = anchor;
    non_monotone.points[2].psnr = 30.0;
    CHECK_THROWS_AS((void)bd_rate(anchor, non_monotone), EvalError);

    auto bad_rate = anchor;
    bad_rate.points[0].rate = -0.1;
    CHECK_THROWS_AS((void)bd_rate(anchor, bad_rate), EvalError);
}

TEST_CASE("gain rate cdf") {
    const auto series = gain_rate_cdf({0.05, 0.15, 0.10});
    REQUIRE(series.points.size() == 3);
    CHECK(series.points[0] == std::pair{0.05, 1.0 / 3.0});
    CHECK(series.points[1] == std::pair{0.10, 2.0 / 3.0});
    CHECK(series.points[2] == std::pair{0.15, 1.0});

    const auto flat = gain_rate_cdf({0.2, 0.2, 0.2});
    REQUIRE(flat.points.size() == 1);
    CHECK(flat.points[0] == std::pair{0.2, 1.0});

    Rng rng(8);
    std::vector<double> values;
    for (int i = 0; i < 100; ++i) values.push_back(rng.normal());
    const auto big = gain_rate_cdf(values);
    double prev_g = -1e18, prev_f = 0.0;
    for (const auto& [g, f] : big.points) {
        CHECK(g > prev_g);
        CHECK(f > prev_f);
        prev_g = g;
        prev_f = f;
    }
    CHECK(prev_f == 1.0);

    CHECK(big.csv().rfind("gain_rate,cum_fraction\n", 0) == 0);
    CHECK_THROWS_AS((void)gain_rate_cdf({}), std::invalid_argument);
}

TEST_CASE("rd gate compares distortion strictly") {
    FramePlane orig(8, 8, 0);
    FramePlane unfiltered(8, 8, 0);
    FramePlane filtered(8, 8, 0);
    for (int i = 0; i < 10; ++i) unfiltered.samples[static_cast<std::size_t>(i)] = 10;
    for (int i = 0; i < 9; ++i) filtered.samples[static_cast<std::size_t>(i)] = 10;

    const auto d = rd_gate(orig, unfiltered, filtered, 37);
    CHECK(d.ssd_unfiltered == 1000);
    CHECK(d.ssd_filtered == 900);
    CHECK(d.enabled);
    CHECK(d.lambda == doctest::Approx(0.57 * std::pow(2.0, 25.0 / 3.0)));
    CHECK(d.flag_bits == 1);

    CHECK_FALSE(rd_gate(orig, unfiltered, unfiltered, 37).enabled);  // tie: not strict
    CHECK_FALSE(rd_gate(orig, filtered, unfiltered, 37).enabled);    // worse

    FramePlane wrong(8, 9);
    CHECK_THROWS_AS((void)rd_gate(orig, unfiltered, wrong, 37), std::invalid_argument);
}

TEST_CASE("filter_frame identity, gating, and shape") {
    NetworkConfig cfg;
    cfg.channels = 4;
    cfg.rfa_count = 1;
    auto weights = init_weights<float>(cfg, 17);

    const auto img = load_pgm(testdata("img01.pgm"));
    CodecConfig codec;
    codec.qp = 37;
    const auto recon = encode_decode(img, codec);

    SUBCASE("zero recon conv is the identity and the gate stays off") {
        auto ident = clone_weights(weights);
        auto d = ident.params.at("recon.conv.w").data_mut();
        std::fill(d.begin(), d.end(), 0.0f);

        const auto gated = filter_frame(recon, 37, ident, &img);
        CHECK_FALSE(gated.flag);
        CHECK(std::memcmp(gated.plane.samples.data(), recon.samples.data(),
                          recon.samples.size()) == 0);

        const auto ungated = filter_frame(recon, 37, ident);
        CHECK(ungated.flag);
        CHECK(std::memcmp(ungated.plane.samples.data(), recon.samples.data(),
                          recon.samples.size()) == 0);
    }
    SUBCASE("gated output is never worse than the unfiltered frame") {
        const auto result = filter_frame(recon, 37, weights, &img);
        CHECK(ssd(result.plane, img) <= ssd(recon, img));
    }
    SUBCASE("non-multiple-of-64 frames keep their shape") {
        FramePlane odd(70, 52, 0);
        for (std::size_t i = 0; i < odd.samples.size(); ++i) {
            odd.samples[i] = static_cast<std::uint8_t>((i * 7) % 256);
        }
        const auto result = filter_frame(odd, 27, weights);
        CHECK(result.plane.width == 70);
        CHECK(result.plane.height == 52);
    }
    SUBCASE("tiny frames are rejected") {
        FramePlane tiny(15, 20, 0);
        CHECK_THROWS_AS((void)filter_frame(tiny, 27, weights), std::invalid_argument);
    }
}

TEST_CASE("delta_time pinned values") {
    CHECK(delta_time(1.0, 85.286) == doctest::Approx(84.286).epsilon(1e-9));  // 8428.6%
    CHECK(delta_time(2.5, 2.5) == 0.0);
    CHECK(delta_time(100.0, 110.0) == doctest::Approx(0.10).epsilon(1e-12));
    CHECK_THROWS_AS((void)delta_time(0.0, 1.0), std::invalid_argument);
    CHECK_THROWS_AS((void)delta_time(-1.0, 1.0), std::invalid_argument);

    TimingReport t;
    t.baseline_seconds = 4.0;
    t.augmented_seconds = 5.0;
    CHECK(t.delta() == doctest::Approx(0.25));
}

TEST_CASE("csv emission and the rd round trip") {
    std::vector<MetricsRow> rows(1);
    rows[0].frame = "patch0";
    rows[0].qp = 37;
    rows[0].psnr_in = std::numeric_limits<double>::infinity();
    rows[0].psnr_out = 36.5;
    rows[0].ssim_in = 0.9;
    rows[0].ssim_out = 0.95;
    rows[0].gain_rate = 0.1;
    rows[0].flag = true;
    const auto csv = metrics_csv(rows);
    CHECK(csv == "frame,qp,psnr_in,psnr_out,ssim_in,ssim_out,gain_rate,flag\n"
                 "patch0,37,inf,36.5,0.9,0.95,0.1,1\n");

    std::vector<RdCsvRow> rd = {{22, 1.00186, 44.614}, {37, 0.28154, 36.629},
                                {27, 0.70028, 42.328}, {32, 0.45682, 39.614}};
    const auto path = temp_file("qpalf_rd_roundtrip.csv");
    std::ofstream(path) << rd_curve_csv(rd);
    const auto loaded = load_rd_csv(path.string());
    REQUIRE(loaded.points.size() == 4);
    CHECK_NOTHROW(loaded.validate());  // sorted ascending by rate on load
    CHECK(loaded.points[0].rate == doctest::Approx(0.28154));
    CHECK(loaded.points[0].psnr == doctest::Approx(36.629));
    CHECK(loaded.points[3].rate == doctest::Approx(1.00186));

    std::ofstream(path) << "qp,bpp,psnr\n22,abc,44\n";
    CHECK_THROWS_AS((void)load_rd_csv(path.string()), FormatError);
    std::ofstream(path) << "wrong,header\n";
    CHECK_THROWS_AS((void)load_rd_csv(path.string()), FormatError);
    CHECK_THROWS_AS((void)load_rd_csv("/nonexistent/rd.csv"), IoError);
    std::filesystem::remove(path);
}
