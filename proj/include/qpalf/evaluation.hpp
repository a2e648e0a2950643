#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "qpalf/frame.hpp"
#include "qpalf/net.hpp"

namespace qpalf {

/// 10 log10(peak^2 / MSE); identical planes return +inf (callers report the
/// sentinel as "inf" and exclude it from averages).
double psnr(const FramePlane& a, const FramePlane& b, double peak = 255.0);

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
/// dynamic range 255, averaged over all fully covered window positions.
double ssim(const FramePlane& a, const FramePlane& b);

struct RdPoint {
    double rate = 0.0;  // bits per pixel (modeled)
    double psnr = 0.0;  // dB
};

/// Rate-distortion curve: at least 4 points, sorted by rate, strictly
/// increasing in both coordinates.
struct RdCurve {
    std::vector<RdPoint> points;
    void validate() const;
};

/// Bjontegaard delta rate in percent (negative = bitrate savings): cubic
/// least-squares fits of log10(rate) over psnr, integrated across the common
/// psnr interval.
double bd_rate(const RdCurve& anchor, const RdCurve& test);

struct CdfSeries {
    std::vector<std::pair<double, double>> points;  // (gain_rate, cum_fraction)
    std::string csv() const;                        // header gain_rate,cum_fraction
};

/// Empirical CDF of PSNR gain rates (Fig-4 style curve).
CdfSeries gain_rate_cdf(const std::vector<double>& values);

struct GateDecision {
    bool enabled = false;
    std::uint64_t ssd_unfiltered = 0;
    std::uint64_t ssd_filtered = 0;
    double lambda = 0.0;
    int flag_bits = 1;
};

/// Frame-level filter on/off decision. The one-bit flag is paid in both
/// branches, so the RD cost difference reduces to the distortion difference:
/// enabled iff SSD_filtered < SSD_unfiltered, strictly. lambda is recorded
/// for transparency (reference-encoder convention 0.57 * 2^((qp-12)/3)).
GateDecision rd_gate(const FramePlane& orig, const FramePlane& unfiltered,
                     const FramePlane& filtered, int qp, double lambda_scale = 0.57,
                     int flag_bits = 1);

struct FilterResult {
    FramePlane plane;
    bool flag = false;
};

/// Runs the network over one frame: normalize to [0,1], forward, clip,
/// re-quantize to 8 bits. With orig_for_gate set, the RD gate picks the
/// winner and the flag reports it; otherwise the filtered frame is returned
/// with the flag set.
FilterResult filter_frame(const FramePlane& plane, int qp, const QpalfWeights<float>& weights,
                          const FramePlane* orig_for_gate = nullptr);

/// Complexity increase (T_hat - T) / T.
double delta_time(double t, double t_hat);

struct TimingReport {
    double baseline_seconds = 0.0;
    double augmented_seconds = 0.0;
    double delta() const { return delta_time(baseline_seconds, augmented_seconds); }
};

struct MetricsRow {
    std::string frame;
    int qp = 0;
    double psnr_in = 0.0;
    double psnr_out = 0.0;
    double ssim_in = 0.0;
    double ssim_out = 0.0;
    double gain_rate = 0.0;
    bool flag = false;
};

// CSV emission/parsing for the artifact formats.
std::string metrics_csv(const std::vector<MetricsRow>& rows);

struct RdCsvRow {
    int qp = 0;
    double bpp = 0.0;
    double psnr = 0.0;
};
std::string rd_curve_csv(const std::vector<RdCsvRow>& rows);

/// Reads a qp,bpp,psnr CSV back into a curve (sorted by rate).
RdCurve load_rd_csv(const std::string& path);

}  // namespace qpalf
