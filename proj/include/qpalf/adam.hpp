#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "qpalf/tensor.hpp"

namespace qpalf {

/// Adam with bias correction (Kingma & Ba). One optimizer owns the moment
/// state for a fixed parameter list; step() consumes the accumulated grads
/// and the caller zeroes them afterwards.
template <typename S>
class Adam {
public:
    struct Options {
        double lr = 1e-4;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
    };

    Adam(std::vector<Tensor<S>> params, Options opt) : params_(std::move(params)), opt_(opt) {
        m_.resize(params_.size());
        v_.resize(params_.size());
        for (std::size_t i = 0; i < params_.size(); ++i) {
            m_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
            v_[i].assign(static_cast<std::size_t>(params_[i].numel()), 0.0);
        }
    }

    void set_lr(double lr) { opt_.lr = lr; }
    double lr() const { return opt_.lr; }
    std::int64_t step_count() const { return t_; }

    void step() {
        ++t_;
        const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
        for (std::size_t i = 0; i < params_.size(); ++i) {
            auto& p = params_[i];
            if (!p.has_grad()) continue;
            auto data = p.data_mut();
            auto grad = p.grad();
            auto& m = m_[i];
            auto& v = v_[i];
            for (std::size_t j = 0; j < data.size(); ++j) {
                const double g = static_cast<double>(grad[j]);
                m[j] = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * g;
                v[j] = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * g * g;
                const double mhat = m[j] / bc1;
                const double vhat = v[j] / bc2;
                data[j] -= static_cast<S>(opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps));
            }
        }
    }

    void zero_grad() {
        for (auto& p : params_) p.zero_grad();
    }

private:
    std::vector<Tensor<S>> params_;
    Options opt_;
    std::int64_t t_ = 0;
    // Moments kept in double so float training still matches the update rule.
    std::vector<std::vector<double>> m_;
    std::vector<std::vector<double>> v_;
};

}  // namespace qpalf
