#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qpalf/dataset.hpp"
#include "qpalf/errors.hpp"
#include "qpalf/net.hpp"
#include "qpalf/tensor.hpp"

namespace qpalf {

struct LossConfig {
    enum class Mode { MSE, FOCAL };
    Mode mode = Mode::MSE;
    std::map<int, double> alpha = {{22, 0.1}, {27, 0.25}, {32, 0.3}, {37, 0.35}};
    double gamma = 1.0;
    double epsilon = 1e-12;

    void validate() const {
        if (gamma < 0.0) throw ConfigError("loss: gamma must be >= 0");
        if (epsilon <= 0.0) throw ConfigError("loss: epsilon must be > 0");
        for (const auto& [qp, a] : alpha) {
            if (a <= 0.0) {
                throw ConfigError("loss: alpha for QP " + std::to_string(qp) + " must be > 0");
            }
        }
    }

    double alpha_for(int qp) const {
        auto it = alpha.find(qp);
        if (it == alpha.end()) {
            throw ConfigError("loss: no alpha weight configured for QP " + std::to_string(qp));
        }
        return it->second;
    }
};

struct Schedule {
    int total_epochs = 100;
    int batch_size = 64;
    double initial_lr = 1e-4;
    double decay_factor = 0.5;
    int decay_every = 25;
    int finetune_epochs = 50;
    double finetune_lr = 1e-5;
    std::uint64_t seed = 0;
    std::int64_t max_steps = 0;  // optional cap on optimizer steps; 0 = epochs only

    void validate() const {
        if (total_epochs < 1 || batch_size < 1 || decay_every < 1 || finetune_epochs < 1) {
            throw ConfigError("schedule: epochs, batch size, and decay interval must be positive");
        }
        if (initial_lr <= 0.0 || decay_factor <= 0.0 || finetune_lr <= 0.0) {
            throw ConfigError("schedule: learning rates and decay factor must be positive");
        }
        if (max_steps < 0) throw ConfigError("schedule: max_steps must be >= 0");
    }
};

inline double lr_at_epoch(const Schedule& schedule, int epoch) {
    return schedule.initial_lr *
           std::pow(schedule.decay_factor, static_cast<double>(epoch / schedule.decay_every));
}

enum class ProtocolKind { COMBINED, SEPARATE, FINETUNE_FOCAL };

struct TrainProtocol {
    ProtocolKind kind = ProtocolKind::COMBINED;
    int anchor_qp = 37;        // SEPARATE: trained first, at initial_lr
    double warm_start_lr = 1e-5;  // SEPARATE: initial lr for the non-anchor QPs
};

struct EpochRecord {
    int epoch = 0;
    double lr = 0.0;
    double train_loss = 0.0;
    double valid_loss = 0.0;
    double valid_psnr_gain = 0.0;  // dB
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    std::string csv() const;  // header epoch,lr,train_loss,valid_loss,valid_psnr_gain
};

// ---------------------------------------------------------------------------
// Losses. Templated on the scalar so gradients can be finite-difference
// checked in double.
// ---------------------------------------------------------------------------

/// Eq-(7) batch loss: mean over samples of the per-pixel mean squared error.
/// Computed as mean_n(mean_pixels(d^2)) so the focal loss at gamma=0, alpha=1
/// reduces to it bit-exactly.
template <typename S>
Tensor<S> loss_mse(const Tensor<S>& pred, const Tensor<S>& target) {
    if (pred.shape() != target.shape()) {
        throw std::invalid_argument("loss_mse: prediction and target shapes differ");
    }
    Tensor<S> d = pred - target;
    return mean_all(mean_per_sample(d * d));
}

/// Per-sample PSNR gain rate R = 1 - L_rec / max(L_init, eps) (Eq 8). Plain
/// arithmetic on the batch, no gradients.
template <typename S>
std::vector<double> psnr_gain_rate(const Tensor<S>& pred, const Tensor<S>& target,
                                   const Tensor<S>& input, double eps = 1e-12) {
    if (pred.shape() != target.shape() || pred.shape() != input.shape()) {
        throw std::invalid_argument("psnr_gain_rate: batch shapes differ");
    }
    const std::int64_t n = pred.dim(0);
    const std::int64_t inner = pred.numel() / n;
    std::vector<double> out(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double rec = 0.0, init = 0.0;
        for (std::int64_t j = 0; j < inner; ++j) {
            const double dr = static_cast<double>(pred.data()[i * inner + j]) -
                              static_cast<double>(target.data()[i * inner + j]);
            const double di = static_cast<double>(input.data()[i * inner + j]) -
                              static_cast<double>(target.data()[i * inner + j]);
            rec += dr * dr;
            init += di * di;
        }
        rec /= static_cast<double>(inner);
        init /= static_cast<double>(inner);
        out[static_cast<std::size_t>(i)] = 1.0 - rec / std::max(init, eps);
    }
    return out;
}

/// Eq-(9) focal loss, per-sample form for QP-mixed batches:
/// L_i = alpha_{q_i} L_rec,i^(1+gamma) / max(L_init,i, eps)^gamma, averaged
/// over the batch. L_init is a constant: no gradient flows into the input.
template <typename S>
Tensor<S> focal_mse(const Tensor<S>& pred, const Tensor<S>& target, const Tensor<S>& input,
                    const std::vector<int>& qps, const LossConfig& config) {
    config.validate();
    if (pred.shape() != target.shape() || pred.shape() != input.shape()) {
        throw std::invalid_argument("focal_mse: batch shapes differ");
    }
    const std::int64_t n = pred.dim(0);
    if (static_cast<std::int64_t>(qps.size()) != n) {
        throw std::invalid_argument("focal_mse: one QP per sample required");
    }
    const std::int64_t inner = pred.numel() / n;
    std::vector<S> w(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) {
        double init = 0.0;
        for (std::int64_t j = 0; j < inner; ++j) {
            const double di = static_cast<double>(input.data()[i * inner + j]) -
                              static_cast<double>(target.data()[i * inner + j]);
            init += di * di;
        }
        init /= static_cast<double>(inner);
        const double a = config.alpha_for(qps[static_cast<std::size_t>(i)]);
        w[static_cast<std::size_t>(i)] =
            static_cast<S>(a / std::pow(std::max(init, config.epsilon), config.gamma));
    }
    Tensor<S> weights = Tensor<S>::from_data({n}, std::move(w));
    Tensor<S> d = pred - target;
    Tensor<S> rec = mean_per_sample(d * d);
    return mean_all(weights * pow_scalar(rec, static_cast<S>(1.0 + config.gamma)));
}

// ---------------------------------------------------------------------------
// Training protocols.
// ---------------------------------------------------------------------------

struct TrainOutput {
    std::string tag;  // "combined", "qp37", "finetune", ...
    QpalfWeights<float> weights;
    TrainHistory history;
};

struct TrainOptions {
    int checkpoint_every = 0;       // epochs; 0 disables checkpoints
    std::string checkpoint_dir;     // where <tag>_epoch<N>.qpw files go
};

/// Trains per the protocol. COMBINED yields one output over the mixed
/// dataset; SEPARATE yields one per QP present, anchor first, the others
/// warm-started from the anchor weights. Deterministic given the seed.
std::vector<TrainOutput> train(const Dataset& train_set, const Dataset& valid_set,
                               const NetworkConfig& net_config, const Schedule& schedule,
                               const TrainProtocol& protocol, const LossConfig& loss_config,
                               const TrainOptions& options = {});

/// Continues training existing weights at the constant finetune rate for
/// schedule.finetune_epochs (Table 1's fine-tuned variants; pass a FOCAL loss
/// config for the focal row, MSE for the plain one).
TrainOutput finetune(const QpalfWeights<float>& weights, const Dataset& train_set,
                     const Dataset& valid_set, const Schedule& schedule,
                     const LossConfig& loss_config, const TrainOptions& options = {});

}  // namespace qpalf
