#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qpalf/tensor.hpp"

namespace qpalf {

struct GradCheckResult {
    bool ok = true;
    double max_abs_err = 0.0;
    double max_rel_err = 0.0;
    std::string worst;  // "param <i> elem <j>: analytic=.. numeric=.."
};

/// Central-difference check of reverse-mode gradients. fn must rebuild the
/// graph from the leaves on every call and return a scalar loss. Run with
/// S = double: float round-off drowns the O(h^2) truncation term.
template <typename S>
GradCheckResult finite_diff_check(const std::function<Tensor<S>()>& fn,
                                  std::vector<Tensor<S>> leaves, S h = S(1e-5),
                                  S tol = S(1e-6)) {
    GradCheckResult res;

    for (auto& leaf : leaves) leaf.zero_grad();
    Tensor<S> loss = fn();
    backward(loss);

    std::vector<std::vector<S>> analytic;
    analytic.reserve(leaves.size());
    for (auto& leaf : leaves) {
        auto g = leaf.grad_mut();
        analytic.emplace_back(g.begin(), g.end());
    }

    for (std::size_t i = 0; i < leaves.size(); ++i) {
        auto data = leaves[i].data_mut();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const S saved = data[j];
            data[j] = saved + h;
            const S up = fn().item();
            data[j] = saved - h;
            const S down = fn().item();
            data[j] = saved;

            const double numeric = (static_cast<double>(up) - static_cast<double>(down)) /
                                   (2.0 * static_cast<double>(h));
            const double exact = static_cast<double>(analytic[i][j]);
            const double abs_err = std::abs(exact - numeric);
            const double rel_err = abs_err / std::max(std::abs(exact), 1e-8);
            if (rel_err > res.max_rel_err) {
                res.max_rel_err = rel_err;
                res.max_abs_err = abs_err;
                res.worst = "param " + std::to_string(i) + " elem " + std::to_string(j) +
                            ": analytic=" + std::to_string(exact) +
                            " numeric=" + std::to_string(numeric);
            }
            if (rel_err > static_cast<double>(tol)) res.ok = false;
        }
    }
    return res;
}

}  // namespace qpalf
