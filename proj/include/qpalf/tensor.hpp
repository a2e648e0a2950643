#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

namespace qpalf {

namespace detail {

inline std::int64_t shape_numel(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (std::int64_t d : shape) n *= d;
    return n;
}

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

// Thread-local switch: when false, ops do not record the graph.
inline bool& grad_mode() {
    thread_local bool enabled = true;
    return enabled;
}

}  // namespace detail

// Disables graph recording for its scope (inference, metric computation).
class NoGradGuard {
public:
    NoGradGuard() : prev_(detail::grad_mode()) { detail::grad_mode() = false; }
    ~NoGradGuard() { detail::grad_mode() = prev_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool prev_;
};

/// Dense row-major tensor with reverse-mode autodiff.
///
/// A Tensor is a cheap handle onto a shared node. Ops build fresh nodes that
/// point at their parents; backward() walks that graph once in reverse
/// topological order. Leaf gradients accumulate until zero_grad(). S is float
/// for training/inference and double for gradient checking.
template <typename S>
class Tensor {
public:
    struct Node {
        std::vector<std::int64_t> shape;
        std::vector<S> data;
        std::vector<S> grad;  // sized lazily, same length as data
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        // Reads this node's grad, accumulates into parents' grads.
        std::function<void(Node&)> backward_fn;

        void ensure_grad() {
            if (grad.size() != data.size()) grad.assign(data.size(), S(0));
        }
    };
    using NodePtr = std::shared_ptr<Node>;

    Tensor() : node_(std::make_shared<Node>()) {}

    static Tensor zeros(std::vector<std::int64_t> shape, bool requires_grad = false) {
        return full(std::move(shape), S(0), requires_grad);
    }

    static Tensor full(std::vector<std::int64_t> shape, S value, bool requires_grad = false) {
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data.assign(static_cast<std::size_t>(detail::shape_numel(t.node_->shape)), value);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor from_data(std::vector<std::int64_t> shape, std::vector<S> data,
                            bool requires_grad = false) {
        if (detail::shape_numel(shape) != static_cast<std::int64_t>(data.size())) {
            throw std::invalid_argument("tensor: data length does not match shape " +
                                        detail::shape_str(shape));
        }
        Tensor t;
        t.node_->shape = std::move(shape);
        t.node_->data = std::move(data);
        t.node_->requires_grad = requires_grad;
        return t;
    }

    static Tensor scalar(S value, bool requires_grad = false) {
        return full({1}, value, requires_grad);
    }

    const std::vector<std::int64_t>& shape() const { return node_->shape; }
    std::int64_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t ndim() const { return node_->shape.size(); }
    std::int64_t numel() const { return static_cast<std::int64_t>(node_->data.size()); }
    bool requires_grad() const { return node_->requires_grad; }

    std::span<const S> data() const { return node_->data; }
    std::span<S> data_mut() { return node_->data; }

    bool has_grad() const { return node_->grad.size() == node_->data.size(); }
    std::span<const S> grad() const { return node_->grad; }
    std::span<S> grad_mut() {
        node_->ensure_grad();
        return node_->grad;
    }

    void zero_grad() {
        node_->grad.assign(node_->data.size(), S(0));
    }

    S item() const {
        if (numel() != 1) {
            throw std::invalid_argument("tensor: item() requires a single-element tensor, shape is " +
                                        detail::shape_str(node_->shape));
        }
        return node_->data[0];
    }

    NodePtr node() const { return node_; }

private:
    NodePtr node_;
};

namespace detail {

template <typename S>
Tensor<S> make_result(std::vector<std::int64_t> shape, std::vector<S> data,
                      std::vector<typename Tensor<S>::NodePtr> parents,
                      std::function<void(typename Tensor<S>::Node&)> backward_fn) {
    Tensor<S> out = Tensor<S>::from_data(std::move(shape), std::move(data));
    bool needs = false;
    if (grad_mode()) {
        for (const auto& p : parents) needs = needs || p->requires_grad;
    }
    if (needs) {
        auto n = out.node();
        n->requires_grad = true;
        n->parents = std::move(parents);
        n->backward_fn = std::move(backward_fn);
    }
    return out;
}

template <typename S>
void check_same_shape(const Tensor<S>& a, const Tensor<S>& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " +
                                    shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Convolution kernels. Plain strided loops with a contiguous innermost x run;
// the row updates are saxpy-shaped and the weight-gradient reduction keeps
// eight independent lanes so both vectorize without reassociation flags.
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
void conv2d_forward_kernel(const S* x, const S* w, const S* b, S* y,
                           std::int64_t n_batch, std::int64_t cin, std::int64_t h,
                           std::int64_t wd, std::int64_t cout, std::int64_t k,
                           std::int64_t pad) {
    const std::int64_t plane = h * wd;
    for (std::int64_t n = 0; n < n_batch; ++n) {
        for (std::int64_t co = 0; co < cout; ++co) {
            S* yp = y + (n * cout + co) * plane;
            std::fill(yp, yp + plane, b[co]);
            for (std::int64_t ci = 0; ci < cin; ++ci) {
                const S* xp = x + (n * cin + ci) * plane;
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const S wv = w[((co * cin + ci) * k + ky) * k + kx];
                        const std::int64_t dy = ky - pad;
                        const std::int64_t dx = kx - pad;
                        const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
                        const std::int64_t y1 = std::min(h, h - dy);
                        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t x1 = std::min(wd, wd - dx);
                        for (std::int64_t yy = y0; yy < y1; ++yy) {
                            S* dst = yp + yy * wd;
                            const S* src = xp + (yy + dy) * wd + dx;
                            for (std::int64_t xx = x0; xx < x1; ++xx) {
                                dst[xx] += wv * src[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename S>
void conv2d_backward_input_kernel(const S* gy, const S* w, S* gx,
                                  std::int64_t n_batch, std::int64_t cin, std::int64_t h,
                                  std::int64_t wd, std::int64_t cout, std::int64_t k,
                                  std::int64_t pad) {
    const std::int64_t plane = h * wd;
    for (std::int64_t n = 0; n < n_batch; ++n) {
        for (std::int64_t ci = 0; ci < cin; ++ci) {
            S* gxp = gx + (n * cin + ci) * plane;
            for (std::int64_t co = 0; co < cout; ++co) {
                const S* gyp = gy + (n * cout + co) * plane;
                for (std::int64_t ky = 0; ky < k; ++ky) {
                    for (std::int64_t kx = 0; kx < k; ++kx) {
                        const S wv = w[((co * cin + ci) * k + ky) * k + kx];
                        const std::int64_t dy = ky - pad;
                        const std::int64_t dx = kx - pad;
                        const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
                        const std::int64_t y1 = std::min(h, h - dy);
                        const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                        const std::int64_t x1 = std::min(wd, wd - dx);
                        for (std::int64_t yy = y0; yy < y1; ++yy) {
                            const S* src = gyp + yy * wd;
                            S* dst = gxp + (yy + dy) * wd + dx;
                            for (std::int64_t xx = x0; xx < x1; ++xx) {
                                dst[xx] += wv * src[xx];
                            }
                        }
                    }
                }
            }
        }
    }
}

template <typename S>
void conv2d_backward_weight_kernel(const S* gy, const S* x, S* gw, S* gb,
                                   std::int64_t n_batch, std::int64_t cin, std::int64_t h,
                                   std::int64_t wd, std::int64_t cout, std::int64_t k,
                                   std::int64_t pad) {
    const std::int64_t plane = h * wd;
    for (std::int64_t co = 0; co < cout; ++co) {
        for (std::int64_t ci = 0; ci < cin; ++ci) {
            for (std::int64_t ky = 0; ky < k; ++ky) {
                for (std::int64_t kx = 0; kx < k; ++kx) {
                    const std::int64_t dy = ky - pad;
                    const std::int64_t dx = kx - pad;
                    const std::int64_t y0 = std::max<std::int64_t>(0, -dy);
                    const std::int64_t y1 = std::min(h, h - dy);
                    const std::int64_t x0 = std::max<std::int64_t>(0, -dx);
                    const std::int64_t x1 = std::min(wd, wd - dx);
                    S lanes[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
                    S tail = S(0);
                    for (std::int64_t n = 0; n < n_batch; ++n) {
                        const S* gyp = gy + (n * cout + co) * plane;
                        const S* xp = x + (n * cin + ci) * plane;
                        for (std::int64_t yy = y0; yy < y1; ++yy) {
                            const S* a = gyp + yy * wd + x0;
                            const S* bb = xp + (yy + dy) * wd + dx + x0;
                            const std::int64_t len = x1 - x0;
                            std::int64_t i = 0;
                            for (; i + 8 <= len; i += 8) {
                                for (int j = 0; j < 8; ++j) lanes[j] += a[i + j] * bb[i + j];
                            }
                            for (; i < len; ++i) tail += a[i] * bb[i];
                        }
                    }
                    S sum = tail;
                    for (int j = 0; j < 8; ++j) sum += lanes[j];
                    gw[((co * cin + ci) * k + ky) * k + kx] += sum;
                }
            }
        }
        if (gb != nullptr) {
            S lanes[8] = {S(0), S(0), S(0), S(0), S(0), S(0), S(0), S(0)};
            S tail = S(0);
            for (std::int64_t n = 0; n < n_batch; ++n) {
                const S* gyp = gy + (n * cout + co) * plane;
                std::int64_t i = 0;
                for (; i + 8 <= plane; i += 8) {
                    for (int j = 0; j < 8; ++j) lanes[j] += gyp[i + j];
                }
                for (; i < plane; ++i) tail += gyp[i];
            }
            S sum = tail;
            for (int j = 0; j < 8; ++j) sum += lanes[j];
            gb[co] += sum;
        }
    }
}

}  // namespace detail

/// Same-size 2D convolution with zero padding. x:[N,Cin,H,W], w:[Cout,Cin,k,k],
/// b:[Cout], k in {1,3}, pad = k/2. Differentiable in x, w, and b.
template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int pad) {
    if (x.ndim() != 4) throw std::invalid_argument("conv2d: input must be [N,C,H,W]");
    if (w.ndim() != 4) throw std::invalid_argument("conv2d: weight must be [Cout,Cin,k,k]");
    const std::int64_t n_batch = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3);
    const std::int64_t cout = w.dim(0), k = w.dim(2);
    if (w.dim(2) != w.dim(3)) throw std::invalid_argument("conv2d: kernel must be square");
    if (k != 1 && k != 3) throw std::invalid_argument("conv2d: kernel size must be 1 or 3");
    if (pad != k / 2) throw std::invalid_argument("conv2d: pad must be k/2 for same-size output");
    if (w.dim(1) != cin) {
        throw std::invalid_argument("conv2d: input has " + std::to_string(cin) +
                                    " channels but weight expects " + std::to_string(w.dim(1)));
    }
    if (b.numel() != cout) throw std::invalid_argument("conv2d: bias length must equal Cout");

    std::vector<S> out(static_cast<std::size_t>(n_batch * cout * h * wd));
    detail::conv2d_forward_kernel(x.data().data(), w.data().data(), b.data().data(), out.data(),
                                  n_batch, cin, h, wd, cout, k, pad);

    auto xn = x.node();
    auto wn = w.node();
    auto bn = b.node();
    return detail::make_result<S>(
        {n_batch, cout, h, wd}, std::move(out), {xn, wn, bn},
        [xn, wn, bn, n_batch, cin, h, wd, cout, k, pad](typename Tensor<S>::Node& self) {
            const S* gy = self.grad.data();
            if (xn->requires_grad) {
                xn->ensure_grad();
                detail::conv2d_backward_input_kernel(gy, wn->data.data(), xn->grad.data(),
                                                     n_batch, cin, h, wd, cout, k, pad);
            }
            if (wn->requires_grad || bn->requires_grad) {
                wn->ensure_grad();
                bn->ensure_grad();
                detail::conv2d_backward_weight_kernel(gy, xn->data.data(), wn->grad.data(),
                                                      bn->grad.data(), n_batch, cin, h, wd,
                                                      cout, k, pad);
            }
        });
}

/// PReLU with one learned slope per channel. x:[N,C,H,W], slope:[C].
template <typename S>
Tensor<S> prelu(const Tensor<S>& x, const Tensor<S>& slope) {
    if (x.ndim() != 4) throw std::invalid_argument("prelu: input must be [N,C,H,W]");
    const std::int64_t n_batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (slope.numel() != c) {
        throw std::invalid_argument("prelu: slope length " + std::to_string(slope.numel()) +
                                    " does not match channel count " + std::to_string(c));
    }
    std::vector<S> out(x.data().begin(), x.data().end());
    const S* sl = slope.data().data();
    for (std::int64_t n = 0; n < n_batch; ++n) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            S* p = out.data() + (n * c + ch) * plane;
            const S s = sl[ch];
            for (std::int64_t i = 0; i < plane; ++i) {
                if (p[i] < S(0)) p[i] *= s;
            }
        }
    }
    auto xn = x.node();
    auto sn = slope.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn, sn},
        [xn, sn, n_batch, c, plane](typename Tensor<S>::Node& self) {
            const S* gy = self.grad.data();
            const S* xd = xn->data.data();
            if (xn->requires_grad) xn->ensure_grad();
            if (sn->requires_grad) sn->ensure_grad();
            for (std::int64_t n = 0; n < n_batch; ++n) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::int64_t base = (n * c + ch) * plane;
                    const S s = sn->data[static_cast<std::size_t>(ch)];
                    S acc = S(0);
                    for (std::int64_t i = 0; i < plane; ++i) {
                        const S xv = xd[base + i];
                        const S g = gy[base + i];
                        if (xn->requires_grad) {
                            xn->grad[static_cast<std::size_t>(base + i)] += (xv >= S(0)) ? g : s * g;
                        }
                        if (xv < S(0)) acc += xv * g;
                    }
                    if (sn->requires_grad) sn->grad[static_cast<std::size_t>(ch)] += acc;
                }
            }
        });
}

namespace detail {

template <typename S>
S softplus_value(S x) {
    // x + log1p(e^-x) for positive x avoids overflow; log1p(e^x) otherwise.
    // The floor keeps the output strictly positive even where e^x underflows.
    if (x > S(0)) return x + std::log1p(std::exp(-x));
    return std::max(std::log1p(std::exp(x)), std::numeric_limits<S>::denorm_min());
}

template <typename S>
S sigmoid_value(S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
}

}  // namespace detail

/// log(1 + e^x), elementwise. Output is strictly positive.
template <typename S>
Tensor<S> softplus(const Tensor<S>& x) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::softplus_value(x.data()[i]);
    auto xn = x.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn},
        [xn](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                xn->grad[i] += self.grad[i] * detail::sigmoid_value(xn->data[i]);
            }
        });
}

template <typename S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "add");
    std::vector<S> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<S>(
        a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] += self.grad[i];
            }
        });
}

template <typename S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "sub");
    std::vector<S> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<S>(
        a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i) bn->grad[i] -= self.grad[i];
            }
        });
}

/// Elementwise product of same-shape tensors.
template <typename S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
    detail::check_same_shape(a, b, "mul");
    std::vector<S> out(a.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    auto an = a.node();
    auto bn = b.node();
    return detail::make_result<S>(
        a.shape(), std::move(out), {an, bn},
        [an, bn](typename Tensor<S>::Node& self) {
            if (an->requires_grad) {
                an->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    an->grad[i] += self.grad[i] * bn->data[i];
            }
            if (bn->requires_grad) {
                bn->ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    bn->grad[i] += self.grad[i] * an->data[i];
            }
        });
}

template <typename S>
Tensor<S> mul_scalar(const Tensor<S>& x, S s) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * s;
    auto xn = x.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn},
        [xn, s](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i] * s;
        });
}

template <typename S>
Tensor<S> add_scalar(const Tensor<S>& x, S s) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] + s;
    auto xn = x.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn},
        [xn](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) xn->grad[i] += self.grad[i];
        });
}

/// Per-channel scaling of x:[N,C,H,W]. m holds C values (shared by every
/// sample) or N*C values (one row of channel scales per sample).
template <typename S>
Tensor<S> scale_channels(const Tensor<S>& x, const Tensor<S>& m) {
    if (x.ndim() != 4) throw std::invalid_argument("scale_channels: input must be [N,C,H,W]");
    const std::int64_t n_batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    const bool per_sample = m.numel() == n_batch * c;
    if (!per_sample && m.numel() != c) {
        throw std::invalid_argument("scale_channels: factor must hold C or N*C values, got " +
                                    std::to_string(m.numel()) + " for C=" + std::to_string(c));
    }
    std::vector<S> out(x.data().size());
    const S* xd = x.data().data();
    const S* md = m.data().data();
    for (std::int64_t n = 0; n < n_batch; ++n) {
        for (std::int64_t ch = 0; ch < c; ++ch) {
            const S s = per_sample ? md[n * c + ch] : md[ch];
            const std::int64_t base = (n * c + ch) * plane;
            for (std::int64_t i = 0; i < plane; ++i) out[base + i] = xd[base + i] * s;
        }
    }
    auto xn = x.node();
    auto mn = m.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn, mn},
        [xn, mn, n_batch, c, plane, per_sample](typename Tensor<S>::Node& self) {
            const S* gy = self.grad.data();
            if (xn->requires_grad) xn->ensure_grad();
            if (mn->requires_grad) mn->ensure_grad();
            for (std::int64_t n = 0; n < n_batch; ++n) {
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    const std::size_t mi = static_cast<std::size_t>(per_sample ? n * c + ch : ch);
                    const S s = mn->data[mi];
                    const std::int64_t base = (n * c + ch) * plane;
                    S acc = S(0);
                    for (std::int64_t i = 0; i < plane; ++i) {
                        if (xn->requires_grad)
                            xn->grad[static_cast<std::size_t>(base + i)] += gy[base + i] * s;
                        acc += gy[base + i] * xn->data[static_cast<std::size_t>(base + i)];
                    }
                    if (mn->requires_grad) mn->grad[mi] += acc;
                }
            }
        });
}

/// Concatenation along the channel axis of [N,Ci,H,W] tensors.
template <typename S>
Tensor<S> concat_channels(const std::vector<Tensor<S>>& xs) {
    if (xs.empty()) throw std::invalid_argument("concat_channels: empty input list");
    const std::int64_t n_batch = xs[0].dim(0), h = xs[0].dim(2), wd = xs[0].dim(3);
    std::int64_t c_total = 0;
    for (const auto& x : xs) {
        if (x.ndim() != 4 || x.dim(0) != n_batch || x.dim(2) != h || x.dim(3) != wd) {
            throw std::invalid_argument("concat_channels: inputs must agree in N, H, W");
        }
        c_total += x.dim(1);
    }
    const std::int64_t plane = h * wd;
    std::vector<S> out(static_cast<std::size_t>(n_batch * c_total * plane));
    std::vector<typename Tensor<S>::NodePtr> parents;
    std::vector<std::int64_t> channels;
    parents.reserve(xs.size());
    for (const auto& x : xs) {
        parents.push_back(x.node());
        channels.push_back(x.dim(1));
    }
    std::int64_t c_off = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const S* src = xs[i].data().data();
        const std::int64_t ci = channels[i];
        for (std::int64_t n = 0; n < n_batch; ++n) {
            std::copy(src + n * ci * plane, src + (n + 1) * ci * plane,
                      out.data() + (n * c_total + c_off) * plane);
        }
        c_off += ci;
    }
    return detail::make_result<S>(
        {n_batch, c_total, h, wd}, std::move(out), parents,
        [parents, channels, n_batch, c_total, plane](typename Tensor<S>::Node& self) {
            std::int64_t c_off = 0;
            for (std::size_t i = 0; i < parents.size(); ++i) {
                const std::int64_t ci = channels[i];
                if (parents[i]->requires_grad) {
                    parents[i]->ensure_grad();
                    for (std::int64_t n = 0; n < n_batch; ++n) {
                        const S* src = self.grad.data() + (n * c_total + c_off) * plane;
                        S* dst = parents[i]->grad.data() + n * ci * plane;
                        for (std::int64_t j = 0; j < ci * plane; ++j) dst[j] += src[j];
                    }
                }
                c_off += ci;
            }
        });
}

/// Channels [begin, begin+count) of x:[N,C,H,W].
template <typename S>
Tensor<S> slice_channels(const Tensor<S>& x, std::int64_t begin, std::int64_t count) {
    if (x.ndim() != 4) throw std::invalid_argument("slice_channels: input must be [N,C,H,W]");
    const std::int64_t n_batch = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
    if (begin < 0 || count < 1 || begin + count > c) {
        throw std::invalid_argument("slice_channels: range out of bounds");
    }
    std::vector<S> out(static_cast<std::size_t>(n_batch * count * plane));
    const S* xd = x.data().data();
    for (std::int64_t n = 0; n < n_batch; ++n) {
        std::copy(xd + (n * c + begin) * plane, xd + (n * c + begin + count) * plane,
                  out.data() + n * count * plane);
    }
    auto xn = x.node();
    return detail::make_result<S>(
        {n_batch, count, x.dim(2), x.dim(3)}, std::move(out), {xn},
        [xn, n_batch, c, begin, count, plane](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t n = 0; n < n_batch; ++n) {
                const S* src = self.grad.data() + n * count * plane;
                S* dst = xn->grad.data() + (n * c + begin) * plane;
                for (std::int64_t j = 0; j < count * plane; ++j) dst[j] += src[j];
            }
        });
}

template <typename S>
Tensor<S> sum_all(const Tensor<S>& x) {
    S acc = S(0);
    for (S v : x.data()) acc += v;
    auto xn = x.node();
    return detail::make_result<S>(
        {1}, {acc}, {xn},
        [xn](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S g = self.grad[0];
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
}

template <typename S>
Tensor<S> mean_all(const Tensor<S>& x) {
    if (x.numel() == 0) throw std::invalid_argument("mean_all: empty tensor");
    S acc = S(0);
    for (S v : x.data()) acc += v;
    const S inv = S(1) / static_cast<S>(x.numel());
    auto xn = x.node();
    return detail::make_result<S>(
        {1}, {acc * inv}, {xn},
        [xn, inv](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            const S g = self.grad[0] * inv;
            for (std::size_t i = 0; i < xn->grad.size(); ++i) xn->grad[i] += g;
        });
}

/// Mean over all axes but the first: [N,...] -> [N].
template <typename S>
Tensor<S> mean_per_sample(const Tensor<S>& x) {
    if (x.ndim() < 2) throw std::invalid_argument("mean_per_sample: need at least two axes");
    const std::int64_t n_batch = x.dim(0);
    const std::int64_t inner = x.numel() / n_batch;
    std::vector<S> out(static_cast<std::size_t>(n_batch));
    const S* xd = x.data().data();
    const S inv = S(1) / static_cast<S>(inner);
    for (std::int64_t n = 0; n < n_batch; ++n) {
        S acc = S(0);
        for (std::int64_t i = 0; i < inner; ++i) acc += xd[n * inner + i];
        out[static_cast<std::size_t>(n)] = acc * inv;
    }
    auto xn = x.node();
    return detail::make_result<S>(
        {n_batch}, std::move(out), {xn},
        [xn, n_batch, inner, inv](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::int64_t n = 0; n < n_batch; ++n) {
                const S g = self.grad[static_cast<std::size_t>(n)] * inv;
                for (std::int64_t i = 0; i < inner; ++i)
                    xn->grad[static_cast<std::size_t>(n * inner + i)] += g;
            }
        });
}

/// One column of u:[C,m] per index: out[n,c] = u[c, idx[n]]. Gradient reaches
/// only the selected columns.
template <typename S>
Tensor<S> gather_columns(const Tensor<S>& u, const std::vector<int>& indices) {
    if (u.ndim() != 2) throw std::invalid_argument("gather_columns: matrix must be [C,m]");
    const std::int64_t c = u.dim(0), m = u.dim(1);
    const std::int64_t n_batch = static_cast<std::int64_t>(indices.size());
    if (n_batch == 0) throw std::invalid_argument("gather_columns: empty index list");
    for (int idx : indices) {
        if (idx < 0 || idx >= m) throw std::invalid_argument("gather_columns: index out of range");
    }
    std::vector<S> out(static_cast<std::size_t>(n_batch * c));
    const S* ud = u.data().data();
    for (std::int64_t n = 0; n < n_batch; ++n) {
        const std::int64_t idx = indices[static_cast<std::size_t>(n)];
        for (std::int64_t ch = 0; ch < c; ++ch) out[n * c + ch] = ud[ch * m + idx];
    }
    auto un = u.node();
    return detail::make_result<S>(
        {n_batch, c}, std::move(out), {un},
        [un, indices, c, m](typename Tensor<S>::Node& self) {
            if (!un->requires_grad) return;
            un->ensure_grad();
            for (std::size_t n = 0; n < indices.size(); ++n) {
                const std::int64_t idx = indices[n];
                for (std::int64_t ch = 0; ch < c; ++ch) {
                    un->grad[static_cast<std::size_t>(ch * m + idx)] +=
                        self.grad[n * static_cast<std::size_t>(c) + static_cast<std::size_t>(ch)];
                }
            }
        });
}

/// Elementwise x^p for x >= 0. p == 1 is the identity; at x == 0 the gradient
/// follows the one-sided limit (0 for p > 1).
template <typename S>
Tensor<S> pow_scalar(const Tensor<S>& x, S p) {
    std::vector<S> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (p == S(1)) ? x.data()[i] : std::pow(x.data()[i], p);
    }
    auto xn = x.node();
    return detail::make_result<S>(
        x.shape(), std::move(out), {xn},
        [xn, p](typename Tensor<S>::Node& self) {
            if (!xn->requires_grad) return;
            xn->ensure_grad();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                S d;
                if (p == S(1)) {
                    d = S(1);
                } else if (xn->data[i] == S(0)) {
                    d = S(0);
                } else {
                    d = p * std::pow(xn->data[i], p - S(1));
                }
                xn->grad[i] += self.grad[i] * d;
            }
        });
}

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& x) {
    std::vector<To> out(x.data().size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<To>(x.data()[i]);
    return Tensor<To>::from_data(x.shape(), std::move(out), x.requires_grad());
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate; callers zero
/// parameter grads between steps.
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.numel() != 1) {
        throw std::invalid_argument("backward: loss must be scalar, shape is " +
                                    detail::shape_str(loss.shape()));
    }
    using Node = typename Tensor<S>::Node;
    auto root = loss.node();
    if (!root->requires_grad) return;

    // Iterative post-order DFS; recursion would overflow on deep graphs.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.get(), 0);
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next].get();
            ++next;
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root->ensure_grad();
    root->grad[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_fn) {
            node->ensure_grad();
            node->backward_fn(*node);
        }
    }
}

}  // namespace qpalf
