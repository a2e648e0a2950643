#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "qpalf/errors.hpp"
#include "qpalf/rng.hpp"
#include "qpalf/tensor.hpp"

namespace qpalf {

enum class QpEncoding { ONE_HOT_LIST, ONE_HOT_RANGE };

/// The set of QPs the network is conditioned on. LIST encoding one-hots the
/// position in the list; RANGE encoding one-hots q-a over Omega=[a,b] so
/// m = b-a+1 (the list still names which QPs are trained/supported).
struct QpDomain {
    std::vector<int> qps = {22, 27, 32, 37};
    QpEncoding encoding = QpEncoding::ONE_HOT_LIST;

    void validate() const {
        if (qps.empty()) throw ConfigError("qp domain: empty QP list");
        for (std::size_t i = 1; i < qps.size(); ++i) {
            if (qps[i] <= qps[i - 1]) throw ConfigError("qp domain: QP list must be strictly increasing");
        }
    }

    int m() const {
        if (encoding == QpEncoding::ONE_HOT_RANGE) return qps.back() - qps.front() + 1;
        return static_cast<int>(qps.size());
    }
};

/// Nearest supported QP; exact ties resolve to the larger QP; out-of-range
/// values clamp to the ends.
inline int map_qp(int q, const QpDomain& domain) {
    domain.validate();
    const auto& qs = domain.qps;
    if (q <= qs.front()) return qs.front();
    if (q >= qs.back()) return qs.back();
    int best = qs.front();
    int best_dist = std::abs(q - best);
    for (std::size_t i = 1; i < qs.size(); ++i) {
        const int dist = std::abs(q - qs[i]);
        if (dist < best_dist || (dist == best_dist && qs[i] > best)) {
            best = qs[i];
            best_dist = dist;
        }
    }
    return best;
}

/// One-hot index of a supported QP (callers map_qp first).
inline int one_hot_index(int q, const QpDomain& domain) {
    domain.validate();
    if (domain.encoding == QpEncoding::ONE_HOT_RANGE) {
        if (q < domain.qps.front() || q > domain.qps.back()) {
            throw std::invalid_argument("one_hot: QP " + std::to_string(q) + " outside range domain");
        }
        return q - domain.qps.front();
    }
    for (std::size_t i = 0; i < domain.qps.size(); ++i) {
        if (domain.qps[i] == q) return static_cast<int>(i);
    }
    throw std::invalid_argument("one_hot: QP " + std::to_string(q) + " not in domain list");
}

inline std::vector<float> one_hot(int q, const QpDomain& domain) {
    std::vector<float> v(static_cast<std::size_t>(domain.m()), 0.0f);
    v[static_cast<std::size_t>(one_hot_index(q, domain))] = 1.0f;
    return v;
}

enum class Variant { QPAM, QP_MAP, PLAIN };

inline std::string variant_name(Variant v) {
    switch (v) {
        case Variant::QPAM: return "qpam";
        case Variant::QP_MAP: return "qp_map";
        case Variant::PLAIN: return "plain";
    }
    throw ConfigError("unknown variant");
}

inline Variant parse_variant(const std::string& s) {
    if (s == "qpam") return Variant::QPAM;
    if (s == "qp_map") return Variant::QP_MAP;
    if (s == "plain") return Variant::PLAIN;
    throw ConfigError("unknown variant '" + s + "' (expected qpam, qp_map, or plain)");
}

struct NetworkConfig {
    int channels = 64;
    int rfa_count = 6;
    static constexpr int blocks_per_rfa = 3;
    Variant variant = Variant::QPAM;
    QpDomain qp_domain;

    int head_in_channels() const { return variant == Variant::QP_MAP ? 2 : 1; }

    void validate() const {
        if (channels < 1) throw ConfigError("network: channels must be >= 1");
        if (rfa_count < 1) throw ConfigError("network: rfa_count must be >= 1");
        qp_domain.validate();
    }

    bool operator==(const NetworkConfig& o) const {
        return channels == o.channels && rfa_count == o.rfa_count && variant == o.variant &&
               qp_domain.qps == o.qp_domain.qps && qp_domain.encoding == o.qp_domain.encoding;
    }
};

/// Ordered, name-addressed parameter set. Insertion order is the canonical
/// serialization order.
template <typename S>
class ParamStore {
public:
    void add(const std::string& name, Tensor<S> t) {
        if (index_.count(name)) throw ConfigError("param store: duplicate name '" + name + "'");
        index_[name] = items_.size();
        items_.emplace_back(name, std::move(t));
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    const Tensor<S>& at(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("param store: no parameter named '" + name + "'");
        return items_[it->second].second;
    }

    Tensor<S>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw ConfigError("param store: no parameter named '" + name + "'");
        return items_[it->second].second;
    }

    const std::vector<std::pair<std::string, Tensor<S>>>& items() const { return items_; }

    std::vector<Tensor<S>> tensors() const {
        std::vector<Tensor<S>> out;
        out.reserve(items_.size());
        for (const auto& [name, t] : items_) out.push_back(t);
        return out;
    }

    std::int64_t total_scalars() const {
        std::int64_t n = 0;
        for (const auto& [name, t] : items_) n += t.numel();
        return n;
    }

private:
    std::vector<std::pair<std::string, Tensor<S>>> items_;
    std::map<std::string, std::size_t> index_;
};

template <typename S>
struct QpalfWeights {
    NetworkConfig config;
    ParamStore<S> params;
};

namespace detail {

inline std::string rb_prefix(int d, int k) {
    return "rfa" + std::to_string(d) + ".rb" + std::to_string(k) + ".";
}

}  // namespace detail

/// Exact scalar count of the configured topology. For the 1-channel head:
/// head 11C; residual block 18C^2+3C (+Cm with QPAM); RFA 3 blocks + 3C^2+C;
/// global fuse DC^2+C; reconstruction 9C+1.
inline std::int64_t count_params(const NetworkConfig& config) {
    config.validate();
    const std::int64_t c = config.channels;
    const std::int64_t d = config.rfa_count;
    const std::int64_t m = config.qp_domain.m();
    const std::int64_t in_ch = config.head_in_channels();

    const std::int64_t head = c * in_ch * 9 + c + c;  // conv w+b, prelu
    std::int64_t rb = 18 * c * c + 3 * c;             // two 3x3 convs w+b, prelu
    if (config.variant == Variant::QPAM) rb += c * m;
    const std::int64_t rfa = 3 * rb + 3 * c * c + c;  // blocks + 1x1 fuse
    const std::int64_t global_fuse = d * c * c + c;
    const std::int64_t recon = 9 * c + 1;
    return head + d * rfa + global_fuse + recon;
}

/// He-normal conv weights, zero biases, PReLU slopes 0.25, and QPAM columns
/// at softplus^-1(1) = ln(e-1) so fresh attention is the identity map.
template <typename S = float>
QpalfWeights<S> init_weights(const NetworkConfig& config, std::uint64_t seed) {
    config.validate();
    const int c = config.channels;
    const int m = config.qp_domain.m();
    const S u_init = static_cast<S>(std::log(std::exp(1.0) - 1.0));
    Rng rng(seed);

    auto conv = [&](int cout, int cin, int k, double gain = 1.0) {
        std::vector<S> w(static_cast<std::size_t>(cout) * cin * k * k);
        const double stddev = gain * std::sqrt(2.0 / (static_cast<double>(cin) * k * k));
        for (auto& v : w) v = static_cast<S>(rng.normal() * stddev);
        return Tensor<S>::from_data({cout, cin, k, k}, std::move(w), true);
    };

    QpalfWeights<S> out;
    out.config = config;
    auto& p = out.params;

    p.add("head.conv.w", conv(c, config.head_in_channels(), 3));
    p.add("head.conv.b", Tensor<S>::zeros({c}, true));
    p.add("head.prelu", Tensor<S>::full({c}, S(0.25), true));
    for (int d = 1; d <= config.rfa_count; ++d) {
        for (int k = 1; k <= NetworkConfig::blocks_per_rfa; ++k) {
            const std::string rb = detail::rb_prefix(d, k);
            p.add(rb + "conv1.w", conv(c, c, 3));
            p.add(rb + "conv1.b", Tensor<S>::zeros({c}, true));
            if (config.variant == Variant::QPAM) {
                p.add(rb + "qpam.U", Tensor<S>::full({c, m}, u_init, true));
            }
            p.add(rb + "prelu", Tensor<S>::full({c}, S(0.25), true));
            p.add(rb + "conv2.w", conv(c, c, 3));
            p.add(rb + "conv2.b", Tensor<S>::zeros({c}, true));
        }
        const std::string rfa = "rfa" + std::to_string(d) + ".";
        p.add(rfa + "fuse.w", conv(c, 3 * c, 1));
        p.add(rfa + "fuse.b", Tensor<S>::zeros({c}, true));
    }
    p.add("global.fuse.w", conv(c, config.rfa_count * c, 1));
    p.add("global.fuse.b", Tensor<S>::zeros({c}, true));
    // Residual scaling: the skip connections let feature variance grow along
    // the block chain, so a full-strength reconstruction conv would start the
    // output far from the identity and stall early training. A small nonzero
    // gain keeps the initial output near the input without being exactly it.
    p.add("recon.conv.w", conv(1, c, 3, 1e-4));
    p.add("recon.conv.b", Tensor<S>::zeros({1}, true));
    return out;
}

/// Deep copy: fresh buffers so training one copy leaves the other intact.
template <typename S>
QpalfWeights<S> clone_weights(const QpalfWeights<S>& w) {
    QpalfWeights<S> out;
    out.config = w.config;
    for (const auto& [name, t] : w.params.items()) {
        out.params.add(name, Tensor<S>::from_data(
                                 t.shape(), std::vector<S>(t.data().begin(), t.data().end()),
                                 t.requires_grad()));
    }
    return out;
}

/// M = softplus(U . onehot(q_n)) per sample, broadcast over each channel's
/// plane. indices are one-hot column indices (already mapped).
template <typename S>
Tensor<S> qpam_forward_indices(const Tensor<S>& f, const std::vector<int>& indices,
                               const Tensor<S>& u) {
    if (f.ndim() != 4) throw std::invalid_argument("qpam: feature map must be [N,C,H,W]");
    if (u.ndim() != 2 || u.dim(0) != f.dim(1)) {
        throw std::invalid_argument("qpam: U must be [C,m] with C matching the feature map");
    }
    if (static_cast<std::int64_t>(indices.size()) != f.dim(0)) {
        throw std::invalid_argument("qpam: one index per sample required");
    }
    Tensor<S> m = softplus(gather_columns(u, indices));  // [N,C]
    return scale_channels(f, m);
}

template <typename S>
Tensor<S> qpam_forward(const Tensor<S>& f, int q, const Tensor<S>& u, const QpDomain& domain) {
    const int idx = one_hot_index(map_qp(q, domain), domain);
    return qpam_forward_indices(f, std::vector<int>(static_cast<std::size_t>(f.dim(0)), idx), u);
}

/// F_out = F_in + conv2(prelu(qpam(conv1(F_in)))); PLAIN/QP_MAP skip qpam.
template <typename S>
Tensor<S> residual_block_forward_indices(const Tensor<S>& f, const std::vector<int>& indices,
                                         const QpalfWeights<S>& w, int d, int k) {
    const std::string rb = detail::rb_prefix(d, k);
    Tensor<S> h = conv2d(f, w.params.at(rb + "conv1.w"), w.params.at(rb + "conv1.b"), 1);
    if (w.config.variant == Variant::QPAM) {
        h = qpam_forward_indices(h, indices, w.params.at(rb + "qpam.U"));
    }
    h = prelu(h, w.params.at(rb + "prelu"));
    h = conv2d(h, w.params.at(rb + "conv2.w"), w.params.at(rb + "conv2.b"), 1);
    return f + h;
}

template <typename S>
Tensor<S> residual_block_forward(const Tensor<S>& f, int q, const QpalfWeights<S>& w, int d, int k) {
    std::vector<int> idx;
    if (w.config.variant == Variant::QPAM) {
        const auto& dom = w.config.qp_domain;
        idx.assign(static_cast<std::size_t>(f.dim(0)), one_hot_index(map_qp(q, dom), dom));
    }
    return residual_block_forward_indices(f, idx, w, d, k);
}

/// Three chained residual blocks; their outputs are concatenated and reduced
/// back to C channels by an unactivated 1x1 convolution.
template <typename S>
Tensor<S> rfa_forward_indices(const Tensor<S>& f, const std::vector<int>& indices,
                              const QpalfWeights<S>& w, int d) {
    Tensor<S> h1 = residual_block_forward_indices(f, indices, w, d, 1);
    Tensor<S> h2 = residual_block_forward_indices(h1, indices, w, d, 2);
    Tensor<S> h3 = residual_block_forward_indices(h2, indices, w, d, 3);
    const std::string rfa = "rfa" + std::to_string(d) + ".";
    return conv2d(concat_channels<S>({h1, h2, h3}), w.params.at(rfa + "fuse.w"),
                  w.params.at(rfa + "fuse.b"), 0);
}

template <typename S>
Tensor<S> rfa_forward(const Tensor<S>& f, int q, const QpalfWeights<S>& w, int d) {
    std::vector<int> idx;
    if (w.config.variant == Variant::QPAM) {
        const auto& dom = w.config.qp_domain;
        idx.assign(static_cast<std::size_t>(f.dim(0)), one_hot_index(map_qp(q, dom), dom));
    }
    return rfa_forward_indices(f, idx, w, d);
}

/// Constant plane of q/63 (VVC QP range) for the QP_MAP variant input.
template <typename S = float>
Tensor<S> qp_map_plane(int q, std::int64_t h, std::int64_t w) {
    return Tensor<S>::full({1, 1, h, w}, static_cast<S>(q / 63.0));
}

/// Full network: head -> D RFAs -> long-skip 1x1 fusion -> residual
/// reconstruction. X is [N,1,H,W] in [0,1] ([N,2,H,W] with the QP plane for
/// QP_MAP). Output is NOT clipped. qs holds one raw QP per sample.
template <typename S>
Tensor<S> qpalf_forward(const Tensor<S>& x, const std::vector<int>& qs, const QpalfWeights<S>& w) {
    const auto& cfg = w.config;
    cfg.validate();
    if (x.ndim() != 4) throw std::invalid_argument("qpalf: input must be [N,C,H,W]");
    if (x.dim(1) != cfg.head_in_channels()) {
        throw std::invalid_argument("qpalf: variant " + variant_name(cfg.variant) + " expects " +
                                    std::to_string(cfg.head_in_channels()) +
                                    " input channels, got " + std::to_string(x.dim(1)));
    }
    if (x.dim(2) < 3 || x.dim(3) < 3) throw std::invalid_argument("qpalf: input must be at least 3x3");
    if (static_cast<std::int64_t>(qs.size()) != x.dim(0)) {
        throw std::invalid_argument("qpalf: one QP per sample required");
    }

    std::vector<int> indices;
    if (cfg.variant == Variant::QPAM) {
        indices.reserve(qs.size());
        for (int q : qs) indices.push_back(one_hot_index(map_qp(q, cfg.qp_domain), cfg.qp_domain));
    }

    Tensor<S> f0 = prelu(conv2d(x, w.params.at("head.conv.w"), w.params.at("head.conv.b"), 1),
                         w.params.at("head.prelu"));
    std::vector<Tensor<S>> features;
    features.reserve(static_cast<std::size_t>(cfg.rfa_count));
    Tensor<S> f = f0;
    for (int d = 1; d <= cfg.rfa_count; ++d) {
        f = rfa_forward_indices(f, indices, w, d);
        features.push_back(f);
    }
    Tensor<S> fused = f0 + conv2d(concat_channels(features), w.params.at("global.fuse.w"),
                                  w.params.at("global.fuse.b"), 0);
    Tensor<S> residual = conv2d(fused, w.params.at("recon.conv.w"), w.params.at("recon.conv.b"), 1);
    Tensor<S> base = (cfg.variant == Variant::QP_MAP) ? slice_channels(x, 0, 1) : x;
    return base + residual;
}

template <typename S>
Tensor<S> qpalf_forward(const Tensor<S>& x, int q, const QpalfWeights<S>& w) {
    return qpalf_forward(x, std::vector<int>(static_cast<std::size_t>(x.dim(0)), q), w);
}

}  // namespace qpalf
