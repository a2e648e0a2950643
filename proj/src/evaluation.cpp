#include "qpalf/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "qpalf/errors.hpp"
#include "qpalf/text.hpp"

namespace qpalf {

double psnr(const FramePlane& a, const FramePlane& b, double peak) {
    const double m = mse(a, b);
    if (m == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / m);
}

namespace {

constexpr int kSsimWindow = 11;

std::array<double, kSsimWindow> gaussian_window() {
    std::array<double, kSsimWindow> w{};
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < kSsimWindow; ++i) {
        const double d = i - (kSsimWindow - 1) / 2.0;
        w[static_cast<std::size_t>(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[static_cast<std::size_t>(i)];
    }
    for (auto& v : w) v /= sum;
    return w;
}

// Horizontal then vertical pass over fully covered positions only; the
// result grid is (width-10) x (height-10).
std::vector<double> filter_valid(const std::vector<double>& img, int width, int height,
                                 const std::array<double, kSsimWindow>& w) {
    const int out_w = width - kSsimWindow + 1;
    const int out_h = height - kSsimWindow + 1;
    std::vector<double> horiz(static_cast<std::size_t>(out_w) * height);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                acc += w[static_cast<std::size_t>(k)] *
                       img[static_cast<std::size_t>(y) * width + x + k];
            }
            horiz[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    }
    std::vector<double> out(static_cast<std::size_t>(out_w) * out_h);
    for (int y = 0; y < out_h; ++y) {
        for (int x = 0; x < out_w; ++x) {
            double acc = 0.0;
            for (int k = 0; k < kSsimWindow; ++k) {
                acc += w[static_cast<std::size_t>(k)] *
                       horiz[static_cast<std::size_t>(y + k) * out_w + x];
            }
            out[static_cast<std::size_t>(y) * out_w + x] = acc;
        }
    }
    return out;
}

}  // namespace

double ssim(const FramePlane& a, const FramePlane& b) {
    if (!a.same_size(b)) throw std::invalid_argument("ssim: plane dimensions differ");
    if (a.width < kSsimWindow || a.height < kSsimWindow) {
        throw std::invalid_argument("ssim: plane must be at least 11x11");
    }
    const double L = 255.0;
    const double c1 = (0.01 * L) * (0.01 * L);
    const double c2 = (0.03 * L) * (0.03 * L);
    const auto w = gaussian_window();

    const std::size_t n = a.samples.size();
    std::vector<double> pa(n), pb(n), paa(n), pbb(n), pab(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double va = a.samples[i], vb = b.samples[i];
        pa[i] = va;
        pb[i] = vb;
        paa[i] = va * va;
        pbb[i] = vb * vb;
        pab[i] = va * vb;
    }
    const auto mu_a = filter_valid(pa, a.width, a.height, w);
    const auto mu_b = filter_valid(pb, a.width, a.height, w);
    const auto raw_aa = filter_valid(paa, a.width, a.height, w);
    const auto raw_bb = filter_valid(pbb, a.width, a.height, w);
    const auto raw_ab = filter_valid(pab, a.width, a.height, w);

    double acc = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double ma = mu_a[i], mb = mu_b[i];
        const double var_a = raw_aa[i] - ma * ma;
        const double var_b = raw_bb[i] - mb * mb;
        const double cov = raw_ab[i] - ma * mb;
        acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
               ((ma * ma + mb * mb + c1) * (var_a + var_b + c2));
    }
    return acc / static_cast<double>(mu_a.size());
}

void RdCurve::validate() const {
    if (points.size() < 4) throw EvalError("rd curve: need at least 4 points for BD-rate");
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (points[i].rate <= 0.0) throw EvalError("rd curve: rates must be positive");
        if (i > 0 && (points[i].rate <= points[i - 1].rate ||
                      points[i].psnr <= points[i - 1].psnr)) {
            throw EvalError("rd curve: points must increase strictly in rate and psnr");
        }
    }
}

namespace {

// Least-squares cubic of log10(rate) over psnr. x is shifted by x0 before
// fitting, so evaluate as p(psnr - x0).
struct CubicFit {
    double x0 = 0.0;
    std::array<double, 4> c{};  // c0 + c1 x + c2 x^2 + c3 x^3
};

CubicFit fit_log_rate(const RdCurve& curve) {
    CubicFit fit;
    const std::size_t n = curve.points.size();
    for (const auto& p : curve.points) fit.x0 += p.psnr;
    fit.x0 /= static_cast<double>(n);

    // Normal equations A c = r with A[i][j] = sum x^(i+j), r[i] = sum y x^i.
    std::array<double, 7> pow_sum{};
    std::array<double, 4> rhs{};
    for (const auto& p : curve.points) {
        const double x = p.psnr - fit.x0;
        const double y = std::log10(p.rate);
        double xp = 1.0;
        for (int i = 0; i < 7; ++i) {
            pow_sum[static_cast<std::size_t>(i)] += xp;
            if (i < 4) rhs[static_cast<std::size_t>(i)] += y * xp;
            xp *= x;
        }
    }
    double a[4][5];
    for (int i = 0; i < 4; ++i) {
        for (int j = 0; j < 4; ++j) a[i][j] = pow_sum[static_cast<std::size_t>(i + j)];
        a[i][4] = rhs[static_cast<std::size_t>(i)];
    }
    // Gaussian elimination with partial pivoting.
    for (int col = 0; col < 4; ++col) {
        int pivot = col;
        for (int row = col + 1; row < 4; ++row) {
            if (std::abs(a[row][col]) > std::abs(a[pivot][col])) pivot = row;
        }
        if (std::abs(a[pivot][col]) < 1e-30) throw EvalError("bd-rate: degenerate curve fit");
        if (pivot != col) {
            for (int j = 0; j < 5; ++j) std::swap(a[pivot][j], a[col][j]);
        }
        for (int row = col + 1; row < 4; ++row) {
            const double f = a[row][col] / a[col][col];
            for (int j = col; j < 5; ++j) a[row][j] -= f * a[col][j];
        }
    }
    for (int i = 3; i >= 0; --i) {
        double acc = a[i][4];
        for (int j = i + 1; j < 4; ++j) acc -= a[i][j] * fit.c[static_cast<std::size_t>(j)];
        fit.c[static_cast<std::size_t>(i)] = acc / a[i][i];
    }
    return fit;
}

// Definite integral of the fitted cubic over [lo, hi] in original x.
double integrate(const CubicFit& fit, double lo, double hi) {
    auto antiderivative = [&](double x) {
        const double t = x - fit.x0;
        return fit.c[0] * t + fit.c[1] * t * t / 2.0 + fit.c[2] * t * t * t / 3.0 +
               fit.c[3] * t * t * t * t / 4.0;
    };
    return antiderivative(hi) - antiderivative(lo);
}

}  // namespace

double bd_rate(const RdCurve& anchor, const RdCurve& test) {
    anchor.validate();
    test.validate();
    const double lo = std::max(anchor.points.front().psnr, test.points.front().psnr);
    const double hi = std::min(anchor.points.back().psnr, test.points.back().psnr);
    if (!(hi > lo)) throw EvalError("bd-rate: curves share no psnr interval");
    const CubicFit fa = fit_log_rate(anchor);
    const CubicFit ft = fit_log_rate(test);
    const double avg_diff = (integrate(ft, lo, hi) - integrate(fa, lo, hi)) / (hi - lo);
    return (std::pow(10.0, avg_diff) - 1.0) * 100.0;
}

CdfSeries gain_rate_cdf(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("gain_rate_cdf: empty input");
    std::vector<double> sorted = values;
    std::sort(sorted.begin(), sorted.end());
    CdfSeries out;
    const double n = static_cast<double>(sorted.size());
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i + 1 < sorted.size() && sorted[i + 1] == sorted[i]) continue;
        out.points.emplace_back(sorted[i], static_cast<double>(i + 1) / n);
    }
    return out;
}

std::string CdfSeries::csv() const {
    std::ostringstream os;
    os << "gain_rate,cum_fraction\n";
    for (const auto& [g, f] : points) os << num(g) << "," << num(f) << "\n";
    return os.str();
}

GateDecision rd_gate(const FramePlane& orig, const FramePlane& unfiltered,
                     const FramePlane& filtered, int qp, double lambda_scale, int flag_bits) {
    if (!orig.same_size(unfiltered) || !orig.same_size(filtered)) {
        throw std::invalid_argument("rd_gate: plane dimensions differ");
    }
    GateDecision d;
    d.ssd_unfiltered = ssd(orig, unfiltered);
    d.ssd_filtered = ssd(orig, filtered);
    d.lambda = lambda_scale * std::pow(2.0, (qp - 12) / 3.0);
    d.flag_bits = flag_bits;
    d.enabled = d.ssd_filtered < d.ssd_unfiltered;
    return d;
}

FilterResult filter_frame(const FramePlane& plane, int qp, const QpalfWeights<float>& weights,
                          const FramePlane* orig_for_gate) {
    if (plane.width < 16 || plane.height < 16) {
        throw std::invalid_argument("filter_frame: frame must be at least 16x16");
    }
    NoGradGuard no_grad;
    const std::int64_t h = plane.height, w = plane.width;
    const std::int64_t in_ch = weights.config.head_in_channels();
    std::vector<float> x(static_cast<std::size_t>(in_ch * h * w));
    for (std::size_t i = 0; i < plane.samples.size(); ++i) x[i] = plane.samples[i] / 255.0f;
    if (in_ch == 2) {
        std::fill(x.begin() + h * w, x.end(), static_cast<float>(qp / 63.0));
    }
    Tensor<float> input = Tensor<float>::from_data({1, in_ch, h, w}, std::move(x));
    Tensor<float> output = qpalf_forward(input, qp, weights);

    FramePlane filtered(plane.width, plane.height);
    for (std::size_t i = 0; i < filtered.samples.size(); ++i) {
        const float v = std::clamp(output.data()[i], 0.0f, 1.0f);
        filtered.samples[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }

    FilterResult result;
    if (orig_for_gate != nullptr) {
        const GateDecision gate = rd_gate(*orig_for_gate, plane, filtered, qp);
        result.flag = gate.enabled;
        result.plane = gate.enabled ? std::move(filtered) : plane;
    } else {
        result.flag = true;
        result.plane = std::move(filtered);
    }
    return result;
}

double delta_time(double t, double t_hat) {
    if (t <= 0.0) throw std::invalid_argument("delta_time: baseline must be positive");
    return (t_hat - t) / t;
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
    std::ostringstream os;
    os << "frame,qp,psnr_in,psnr_out,ssim_in,ssim_out,gain_rate,flag\n";
    for (const auto& r : rows) {
        os << r.frame << "," << r.qp << "," << num(r.psnr_in) << "," << num(r.psnr_out) << ","
           << num(r.ssim_in) << "," << num(r.ssim_out) << "," << num(r.gain_rate) << ","
           << (r.flag ? 1 : 0) << "\n";
    }
    return os.str();
}

std::string rd_curve_csv(const std::vector<RdCsvRow>& rows) {
    std::ostringstream os;
    os << "qp,bpp,psnr\n";
    for (const auto& r : rows) os << r.qp << "," << num(r.bpp) << "," << num(r.psnr) << "\n";
    return os.str();
}

RdCurve load_rd_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    std::string line;
    if (!std::getline(in, line)) throw FormatError("'" + path + "': empty CSV");
    if (line != "qp,bpp,psnr") {
        throw FormatError("'" + path + "': expected header qp,bpp,psnr, got '" + line + "'");
    }
    RdCurve curve;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string qp_s, bpp_s, psnr_s;
        if (!std::getline(ls, qp_s, ',') || !std::getline(ls, bpp_s, ',') ||
            !std::getline(ls, psnr_s)) {
            throw FormatError("'" + path + "': malformed row '" + line + "'");
        }
        try {
            curve.points.push_back({std::stod(bpp_s), std::stod(psnr_s)});
        } catch (const std::exception&) {
            throw FormatError("'" + path + "': non-numeric row '" + line + "'");
        }
    }
    std::sort(curve.points.begin(), curve.points.end(),
              [](const RdPoint& a, const RdPoint& b) { return a.rate < b.rate; });
    return curve;
}

}  // namespace qpalf
