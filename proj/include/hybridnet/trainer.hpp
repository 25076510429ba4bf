// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_TRAINER_HPP
#define HYBRIDNET_TRAINER_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridnet/arch_config.hpp"
#include "hybridnet/datasets.hpp"
#include "hybridnet/kernels.hpp"
#include "hybridnet/quantize.hpp"

namespace hybridnet {

enum class Mode { train, eval }; // batch statistics vs running statistics in batch norm
enum class KernelPath {
    packed,    // XNOR-popcount on packed words for binary x binary slices
    reference, // fp32 convolution of the unpacked sign operands, then alpha
};

enum class Optimizer { sgd, sgd_momentum };

struct TrainConfig {
    std::size_t epochs = 10;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    std::uint64_t seed = 1;
    double clip = 1.0; // latent weights of quantized layers live in [-clip, clip]
    Optimizer optimizer = Optimizer::sgd_momentum;
    double momentum = 0.9;

    void check() const {
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
        if (batch_size < 1) throw ConfigError("batch size must be at least 1");
        if (!(clip > 0.0)) throw ConfigError("clip must be positive");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    }
};

/// Parameters of one weight unit (a layer or a conv1x1 residual edge). Batch-norm
/// vectors are present only when the unit binarizes its input.
template <class T>
struct UnitParams {
    Tensor<T> weight; // (O, I, k, k); linear layers use k = 1
    std::vector<T> bias;
    std::vector<T> gamma, beta;
    std::vector<T> running_mean, running_var;

    bool empty() const { return weight.empty(); }
};

template <class T>
struct Params {
    std::vector<UnitParams<T>> layers;
    std::vector<UnitParams<T>> edges; // parallel to spec.residuals; identity edges are empty
};

/// Static description of one weight unit.
struct Unit {
    ConvGeometry geom;
    Precision weights = Precision::fp32();
    Precision activations = Precision::fp32();
    std::size_t fp_filters = 0; // leading filters computed at fp32 (all of them for fp32 weights)

    bool binarizes() const { return activations.is_binary(); }
    bool mixed() const { return weights.is_quantized() && fp_filters > 0; }
    std::size_t quantized_filters() const { return geom.out_channels - fp_filters; }
};

inline Unit unit_of(const LayerSpec& l) {
    Unit u;
    if (l.kind == LayerKind::conv2d)
        u.geom = ConvGeometry::from_layer(l);
    else
        u.geom = {l.in_channels, l.out_channels, 1, 1, 1, 1, 0};
    u.weights = l.weight_precision;
    u.activations = l.activation_precision;
    u.fp_filters = l.weight_precision.is_quantized() ? l.fp_filter_count() : l.out_channels;
    return u;
}

template <class T>
UnitParams<T> init_unit(const Unit& u, std::mt19937_64& rng) {
    const auto& g = u.geom;
    UnitParams<T> p;
    p.weight = Tensor<T>({g.out_channels, g.in_channels, g.kernel, g.kernel});
    std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(g.taps())));
    for (auto& w : p.weight.values()) w = static_cast<T>(nd(rng));
    if (u.weights.is_quantized()) {
        const std::size_t from = u.fp_filters * g.taps();
        for (std::size_t i = from; i < p.weight.size(); ++i) p.weight[i] = std::clamp(p.weight[i], T(-1), T(1));
    }
    p.bias.assign(g.out_channels, T(0));
    if (u.binarizes()) {
        p.gamma.assign(g.in_channels, T(1));
        p.beta.assign(g.in_channels, T(0));
        p.running_mean.assign(g.in_channels, T(0));
        p.running_var.assign(g.in_channels, T(1));
    }
    return p;
}

template <class T>
Params<T> init_params(const ArchitectureSpec& spec, std::uint64_t seed) {
    require_valid(spec);
    std::mt19937_64 rng(seed);
    Params<T> p;
    for (const auto& l : spec.layers) p.layers.push_back(init_unit<T>(unit_of(l), rng));
    for (const auto& e : spec.residuals) {
        if (e.kind == ResidualKind::conv1x1)
            p.edges.push_back(init_unit<T>(unit_of(edge_layer(spec, e)), rng));
        else
            p.edges.emplace_back();
    }
    return p;
}

/// Same structure as `p`, all zeros (running statistics included).
template <class T>
Params<T> zeros_like(const Params<T>& p) {
    auto z = [](const UnitParams<T>& u) {
        UnitParams<T> o;
        o.weight = Tensor<T>(u.weight.shape());
        o.bias.assign(u.bias.size(), T(0));
        o.gamma.assign(u.gamma.size(), T(0));
        o.beta.assign(u.beta.size(), T(0));
        o.running_mean.assign(u.running_mean.size(), T(0));
        o.running_var.assign(u.running_var.size(), T(0));
        return o;
    };
    Params<T> out;
    for (const auto& u : p.layers) out.layers.push_back(z(u));
    for (const auto& u : p.edges) out.edges.push_back(z(u));
    return out;
}

using Batch = std::vector<Tensor<float>>;

namespace detail {

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

template <class T>
Tensor<T> slice_rows(const Tensor<T>& w, std::size_t first, std::size_t count) {
    Shape s = w.shape();
    s[0] = count;
    const std::size_t row = shape_size(w.shape()) / w.dim(0);
    return Tensor<T>(s, std::vector<T>(w.values().begin() + static_cast<std::ptrdiff_t>(first * row),
                                       w.values().begin() + static_cast<std::ptrdiff_t>((first + count) * row)));
}

template <class T>
Tensor<T> slice_channels(const Tensor<T>& x, std::size_t first, std::size_t count) {
    return slice_rows(x, first, count);
}

template <class T>
void write_channels(Tensor<T>& dst, const Tensor<T>& src, std::size_t first) {
    const std::size_t plane = dst.size() / dst.dim(0);
    std::copy(src.values().begin(), src.values().end(),
              dst.values().begin() + static_cast<std::ptrdiff_t>(first * plane));
}

template <class T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class T>
struct UnitCache {
    std::vector<Tensor<T>> x;         // raw input
    std::vector<Tensor<T>> xhat, y;   // normalized and affine batch-norm output
    std::vector<Tensor<T>> s;         // sign(y)
    std::vector<T> invstd;
    Tensor<T> w_fp, w_q;              // fp rows and effective quantized rows (alpha * sign or q_k)
};

// Effective weights of the quantized rows: alpha * sign(W) or q_k(W).
template <class T>
Tensor<T> effective_weights(const Unit& u, const Tensor<T>& rows, QuantizedFilterBank<>* bank_out) {
    Tensor<T> eff(rows.shape());
    if (rows.empty()) return eff;
    if (u.weights.is_binary()) {
        auto bank = sign_binarize(rows);
        const auto deq = bank.dequantize();
        for (std::size_t i = 0; i < eff.size(); ++i) eff[i] = static_cast<T>(deq[i]);
        if (bank_out) *bank_out = std::move(bank);
    } else {
        for (std::size_t i = 0; i < eff.size(); ++i)
            eff[i] = static_cast<T>(qk_quantize(static_cast<double>(rows[i]), u.weights.bits()));
    }
    return eff;
}

template <class T>
std::vector<Tensor<T>> unit_forward(const Unit& u, UnitParams<T>& p, const std::vector<Tensor<T>>& x, Mode mode,
                                    bool update_running, KernelPath path, UnitCache<T>* cache) {
    const auto& g = u.geom;
    const std::size_t B = x.size();
    std::vector<Tensor<T>> y, s;
    std::vector<T> invstd;
    std::vector<Tensor<T>> xhat;
    if (u.binarizes()) {
        const std::size_t C = g.in_channels;
        const std::size_t plane = x.front().size() / C;
        std::vector<T> mean(C), var(C);
        if (mode == Mode::train) {
            const double m = static_cast<double>(B * plane);
            for (std::size_t c = 0; c < C; ++c) {
                double sum = 0, sq = 0;
                for (const auto& t : x)
                    for (std::size_t i = 0; i < plane; ++i) sum += static_cast<double>(t[c * plane + i]);
                const double mu = sum / m;
                for (const auto& t : x)
                    for (std::size_t i = 0; i < plane; ++i) {
                        const double d = static_cast<double>(t[c * plane + i]) - mu;
                        sq += d * d;
                    }
                mean[c] = static_cast<T>(mu);
                var[c] = static_cast<T>(sq / m);
                if (update_running) {
                    p.running_mean[c] = static_cast<T>((1 - kBnMomentum) * p.running_mean[c] + kBnMomentum * mu);
                    p.running_var[c] = static_cast<T>((1 - kBnMomentum) * p.running_var[c] + kBnMomentum * sq / m);
                }
            }
        } else {
            mean = p.running_mean;
            var = p.running_var;
        }
        invstd.resize(C);
        for (std::size_t c = 0; c < C; ++c) invstd[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(var[c]) + kBnEps));
        for (const auto& t : x) {
            Tensor<T> xh(t.shape()), yy(t.shape()), ss(t.shape());
            for (std::size_t c = 0; c < C; ++c)
                for (std::size_t i = 0; i < plane; ++i) {
                    const std::size_t j = c * plane + i;
                    xh[j] = (t[j] - mean[c]) * invstd[c];
                    yy[j] = p.gamma[c] * xh[j] + p.beta[c];
                    ss[j] = sign_of(yy[j]);
                }
            xhat.push_back(std::move(xh));
            y.push_back(std::move(yy));
            s.push_back(std::move(ss));
        }
    }

    const std::size_t nf = u.fp_filters, nq = u.quantized_filters();
    Tensor<T> w_fp = slice_rows(p.weight, 0, nf);
    Tensor<T> w_q_latent = slice_rows(p.weight, nf, nq);
    QuantizedFilterBank<> bank;
    Tensor<T> w_q = effective_weights(u, w_q_latent, &bank);
    const bool packed = path == KernelPath::packed && u.weights.is_binary() && u.binarizes();

    auto gf = g;
    gf.out_channels = nf;
    auto gq = g;
    gq.out_channels = nq;
    std::vector<Tensor<T>> out;
    for (std::size_t b = 0; b < B; ++b) {
        const Tensor<T>& in_bin = u.binarizes() ? s[b] : x[b];
        const Tensor<T>& in_fp = u.mixed() ? (u.binarizes() ? y[b] : x[b]) : in_bin;
        Tensor<T> z({g.out_channels, g.out_side, g.out_side});
        if (nf > 0) write_channels(z, fp_conv2d(in_fp, w_fp, gf), 0);
        if (nq > 0) {
            if (packed) {
                write_channels(z, binary_conv2d<T>(binarize(y[b]), bank, gq), nf);
            } else if (u.weights.is_binary()) {
                // Same integer correlation as the packed kernel, then one alpha multiply.
                Tensor<T> signs(w_q_latent.shape());
                for (std::size_t i = 0; i < signs.size(); ++i) signs[i] = sign_of(w_q_latent[i]);
                auto acc = fp_conv2d(in_bin, signs, gq);
                const std::size_t plane = g.out_side * g.out_side;
                for (std::size_t o = 0; o < nq; ++o)
                    for (std::size_t i = 0; i < plane; ++i) acc[o * plane + i] = static_cast<T>(bank.alpha[o]) * acc[o * plane + i];
                write_channels(z, acc, nf);
            } else {
                write_channels(z, fp_conv2d(in_bin, w_q, gq), nf);
            }
        }
        const std::size_t plane = g.out_side * g.out_side;
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < plane; ++i) z[o * plane + i] += p.bias[o];
        out.push_back(std::move(z));
    }
    if (cache) {
        cache->x = x;
        cache->xhat = std::move(xhat);
        cache->y = std::move(y);
        cache->s = std::move(s);
        cache->invstd = std::move(invstd);
        cache->w_fp = std::move(w_fp);
        cache->w_q = std::move(w_q);
    }
    return out;
}

template <class T>
std::vector<Tensor<T>> unit_backward(const Unit& u, const UnitParams<T>& p, const UnitCache<T>& c,
                                     const std::vector<Tensor<T>>& dz, UnitParams<T>& grad, T clip) {
    const auto& g = u.geom;
    const std::size_t nf = u.fp_filters, nq = u.quantized_filters();
    const std::size_t B = dz.size();
    const std::size_t plane_out = g.out_side * g.out_side;
    auto gf = g;
    gf.out_channels = nf;
    auto gq = g;
    gq.out_channels = nq;
    Tensor<T> dw_fp({nf, g.in_channels, g.kernel, g.kernel});
    Tensor<T> dw_q({nq, g.in_channels, g.kernel, g.kernel});

    std::vector<Tensor<T>> dx;
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t o = 0; o < g.out_channels; ++o)
            for (std::size_t i = 0; i < plane_out; ++i) grad.bias[o] += dz[b][o * plane_out + i];
        const Tensor<T>& in_bin = u.binarizes() ? c.s[b] : c.x[b];
        const Tensor<T>& in_fp = u.mixed() ? (u.binarizes() ? c.y[b] : c.x[b]) : in_bin;
        Tensor<T> d_bin(c.x[b].shape()), d_fp(c.x[b].shape());
        if (nf > 0) {
            auto dzf = slice_channels(dz[b], 0, nf);
            fp_conv2d_accumulate_weight_grad(in_fp, dzf, gf, dw_fp);
            auto di = fp_conv2d_backward_input(dzf, c.w_fp, gf);
            add_into(u.mixed() ? d_fp : d_bin, di);
        }
        if (nq > 0) {
            auto dzq = slice_channels(dz[b], nf, nq);
            fp_conv2d_accumulate_weight_grad(in_bin, dzq, gq, dw_q);
            add_into(d_bin, fp_conv2d_backward_input(dzq, c.w_q, gq));
        }
        if (!u.binarizes()) {
            add_into(d_bin, d_fp);
            dx.push_back(std::move(d_bin));
            continue;
        }
        // Straight-through sign: pass where |y| <= 1.
        auto dy = ste_grad<T>(d_bin.span(), c.y[b].span(), T(1));
        for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += d_fp[i];
        dx.emplace_back(c.x[b].shape(), std::move(dy));
    }

    // Weight gradients: exact for fp rows, straight-through and masked to |W| <= clip for quantized rows.
    const std::size_t row = g.taps();
    for (std::size_t i = 0; i < dw_fp.size(); ++i) grad.weight[i] += dw_fp[i];
    for (std::size_t i = 0; i < dw_q.size(); ++i) {
        const T w = p.weight[nf * row + i];
        if (std::abs(w) <= clip) grad.weight[nf * row + i] += dw_q[i];
    }

    if (!u.binarizes()) return dx;

    // Batch-norm backward with batch statistics; dx currently holds dL/dy.
    const std::size_t C = g.in_channels;
    const std::size_t plane = c.x.front().size() / C;
    const double m = static_cast<double>(B * plane);
    for (std::size_t ch = 0; ch < C; ++ch) {
        double sdy = 0, sdyx = 0;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t j = ch * plane + i;
                sdy += static_cast<double>(dx[b][j]);
                sdyx += static_cast<double>(dx[b][j] * c.xhat[b][j]);
            }
        grad.beta[ch] += static_cast<T>(sdy);
        grad.gamma[ch] += static_cast<T>(sdyx);
        const double k = static_cast<double>(p.gamma[ch] * c.invstd[ch]) / m;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t i = 0; i < plane; ++i) {
                const std::size_t j = ch * plane + i;
                dx[b][j] = static_cast<T>(k * (m * static_cast<double>(dx[b][j]) - sdy -
                                               static_cast<double>(c.xhat[b][j]) * sdyx));
            }
    }
    return dx;
}

} // namespace detail

/// A spec bound to its parameters. T = float for training, double for gradient checks.
template <class T = float>
class Network {
public:
    Network(ArchitectureSpec spec, Params<T> params) : spec_(std::move(spec)), params_(std::move(params)) {
        require_valid(spec_);
        for (const auto& l : spec_.layers) units_.push_back(unit_of(l));
        for (const auto& e : spec_.residuals)
            edge_units_.push_back(e.kind == ResidualKind::conv1x1 ? unit_of(edge_layer(spec_, e)) : Unit{});
        detail::require(params_.layers.size() == units_.size() && params_.edges.size() == edge_units_.size(),
                        "parameters do not match the architecture");
        for (std::size_t i = 0; i < units_.size(); ++i) check_unit(units_[i], params_.layers[i]);
        for (std::size_t e = 0; e < edge_units_.size(); ++e)
            if (spec_.residuals[e].kind == ResidualKind::conv1x1) check_unit(edge_units_[e], params_.edges[e]);
    }
    Network(ArchitectureSpec spec, std::uint64_t seed) : Network(spec, init_params<T>(spec, seed)) {}

    const ArchitectureSpec& spec() const { return spec_; }
    Params<T>& params() { return params_; }
    const Params<T>& params() const { return params_; }
    const std::vector<Unit>& units() const { return units_; }

    /// Logits for every sample. Does not touch running statistics.
    std::vector<std::vector<T>> forward(const std::vector<Tensor<T>>& batch, Mode mode = Mode::eval,
                                        KernelPath path = KernelPath::packed) {
        Trace tr;
        return run(batch, mode, false, path, tr, false);
    }

    /// Mean cross-entropy over the batch; fills `grad` (same structure as params).
    /// Train-mode batch norm, running statistics updated.
    T loss_and_gradients(const std::vector<Tensor<T>>& batch, const std::vector<std::size_t>& labels, Params<T>& grad,
                         T clip = T(1), bool update_running = true) {
        detail::require(batch.size() == labels.size() && !batch.empty(), "batch and label counts differ");
        Trace tr;
        auto logits = run(batch, Mode::train, update_running, KernelPath::packed, tr, true);
        grad = zeros_like(params_);
        const std::size_t B = batch.size();
        T loss = T(0);
        std::vector<Tensor<T>> dh(B);
        for (std::size_t b = 0; b < B; ++b) {
            const auto& z = logits[b];
            detail::require(labels[b] < z.size(), "label out of range");
            const T mx = *std::max_element(z.begin(), z.end());
            T sum = T(0);
            for (auto v : z) sum += std::exp(v - mx);
            loss += std::log(sum) + mx - z[labels[b]];
            Tensor<T> d({z.size(), 1, 1});
            for (std::size_t k = 0; k < z.size(); ++k)
                d[k] = (std::exp(z[k] - mx) / sum - (k == labels[b] ? T(1) : T(0))) / static_cast<T>(B);
            dh[b] = std::move(d);
        }
        loss /= static_cast<T>(B);
        if (!std::isfinite(static_cast<double>(loss))) return loss;
        backward(tr, std::move(dh), grad, clip);
        return loss;
    }

    /// Evaluates only the loss (train-mode batch norm, no state change). Used by finite differences.
    T loss(const std::vector<Tensor<T>>& batch, const std::vector<std::size_t>& labels) {
        Trace tr;
        auto logits = run(batch, Mode::train, false, KernelPath::packed, tr, false);
        T l = T(0);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            const auto& z = logits[b];
            const T mx = *std::max_element(z.begin(), z.end());
            T sum = T(0);
            for (auto v : z) sum += std::exp(v - mx);
            l += std::log(sum) + mx - z[labels[b]];
        }
        return l / static_cast<T>(batch.size());
    }

private:
    struct Trace {
        std::vector<detail::UnitCache<T>> layers, edges;
        std::vector<std::vector<Tensor<T>>> z;                       // pre-activation
        std::vector<std::vector<std::vector<std::size_t>>> argmax;   // pooling winners
        std::vector<Shape> act_shape;                                // post-activation shape before pooling
        std::vector<int> head;                                       // 0 none, 1 flatten, 2 global average
        std::vector<Shape> head_shape;
    };

    static void check_unit(const Unit& u, const UnitParams<T>& p) {
        const auto& g = u.geom;
        detail::require(p.weight.shape() == Shape({g.out_channels, g.in_channels, g.kernel, g.kernel}),
                        "weight shape does not match the architecture");
        detail::require(p.bias.size() == g.out_channels, "bias size does not match the architecture");
        if (u.binarizes())
            detail::require(p.gamma.size() == g.in_channels && p.beta.size() == g.in_channels &&
                                p.running_mean.size() == g.in_channels && p.running_var.size() == g.in_channels,
                            "batch-norm parameters do not match the architecture");
    }

    std::vector<std::vector<T>> run(const std::vector<Tensor<T>>& batch, Mode mode, bool update_running,
                                    KernelPath path, Trace& tr, bool keep) {
        detail::require(!batch.empty(), "empty batch");
        const Shape in_shape = spec_.layers.front().kind == LayerKind::conv2d
                                   ? Shape{spec_.input_channels, spec_.input_side, spec_.input_side}
                                   : Shape{};
        const std::size_t L = units_.size();
        tr.layers.resize(L);
        tr.edges.resize(edge_units_.size());
        tr.z.resize(L);
        tr.argmax.resize(L);
        tr.act_shape.resize(L);
        tr.head.assign(L, 0);
        tr.head_shape.resize(L);
        std::vector<std::vector<Tensor<T>>> inputs(L);
        std::vector<Tensor<T>> h = batch;
        for (auto& t : h) {
            if (!in_shape.empty())
                detail::require(t.shape() == in_shape, "input shape " + shape_string(t.shape()) + " does not match " +
                                                           shape_string(in_shape));
            for (auto v : t.values()) detail::require(std::isfinite(static_cast<double>(v)), "non-finite input");
        }

        for (std::size_t i = 0; i < L; ++i) {
            const auto& u = units_[i];
            const Shape want = {u.geom.in_channels, u.geom.in_side, u.geom.in_side};
            if (spec_.layers[i].kind == LayerKind::linear && h.front().shape() != want) {
                tr.head_shape[i] = h.front().shape();
                const bool gap = spec_.head == HeadPool::global_average && i > 0;
                tr.head[i] = gap ? 2 : 1;
                for (auto& t : h) {
                    if (gap) {
                        const std::size_t C = t.dim(0), plane = t.size() / C;
                        Tensor<T> o({C, 1, 1});
                        for (std::size_t c = 0; c < C; ++c) {
                            T s = T(0);
                            for (std::size_t j = 0; j < plane; ++j) s += t[c * plane + j];
                            o[c] = s / static_cast<T>(plane);
                        }
                        t = std::move(o);
                    } else {
                        t.reshape({t.size(), 1, 1});
                    }
                }
            }
            for (const auto& t : h)
                detail::require(t.shape() == want, "activation shape mismatch at layer " + std::to_string(i));
            inputs[i] = h;
            auto z = detail::unit_forward(u, params_.layers[i], h, mode, update_running, path,
                                          keep ? &tr.layers[i] : nullptr);
            for (std::size_t e = 0; e < spec_.residuals.size(); ++e) {
                const auto& edge = spec_.residuals[e];
                if (edge.to_layer != i) continue;
                if (edge.kind == ResidualKind::identity) {
                    for (std::size_t b = 0; b < z.size(); ++b) detail::add_into(z[b], inputs[edge.from_layer][b]);
                } else {
                    auto r = detail::unit_forward(edge_units_[e], params_.edges[e], inputs[edge.from_layer], mode,
                                                  update_running, path, keep ? &tr.edges[e] : nullptr);
                    for (std::size_t b = 0; b < z.size(); ++b) detail::add_into(z[b], r[b]);
                }
            }
            if (i + 1 == L) {
                std::vector<std::vector<T>> logits;
                for (auto& t : z) logits.push_back(t.values());
                if (keep) tr.z[i] = std::move(z);
                return logits;
            }
            std::vector<Tensor<T>> a = z;
            for (auto& t : a)
                for (auto& v : t.values()) v = std::max(v, T(0));
            tr.act_shape[i] = a.front().shape();
            const std::size_t pool = spec_.layers[i].pool_after;
            if (pool > 1) {
                tr.argmax[i].resize(a.size());
                for (std::size_t b = 0; b < a.size(); ++b) a[b] = max_pool(a[b], pool, tr.argmax[i][b]);
            }
            if (keep) tr.z[i] = std::move(z);
            h = std::move(a);
        }
        return {};
    }

    static Tensor<T> max_pool(const Tensor<T>& x, std::size_t k, std::vector<std::size_t>& arg) {
        const std::size_t C = x.dim(0), S = x.dim(1), P = S / k;
        Tensor<T> o({C, P, P});
        arg.assign(C * P * P, 0);
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t py = 0; py < P; ++py)
                for (std::size_t px = 0; px < P; ++px) {
                    std::size_t best = (c * S + py * k) * S + px * k;
                    for (std::size_t dy = 0; dy < k; ++dy)
                        for (std::size_t dx = 0; dx < k; ++dx) {
                            const std::size_t j = (c * S + py * k + dy) * S + px * k + dx;
                            if (x[j] > x[best]) best = j;
                        }
                    o[(c * P + py) * P + px] = x[best];
                    arg[(c * P + py) * P + px] = best;
                }
        return o;
    }

    void backward(Trace& tr, std::vector<Tensor<T>> dh, Params<T>& grad, T clip) {
        const std::size_t L = units_.size();
        const std::size_t B = dh.size();
        std::vector<std::vector<Tensor<T>>> d_in(L);
        for (std::size_t ii = L; ii-- > 0;) {
            // dh: gradient w.r.t. this layer's output after activation and pooling.
            std::vector<Tensor<T>> dz(B);
            if (ii + 1 == L) {
                for (std::size_t b = 0; b < B; ++b) dz[b] = Tensor<T>(tr.z[ii][b].shape(), dh[b].values());
            } else {
                for (std::size_t b = 0; b < B; ++b) {
                    Tensor<T> da(tr.act_shape[ii]);
                    if (spec_.layers[ii].pool_after > 1) {
                        const auto& arg = tr.argmax[ii][b];
                        for (std::size_t j = 0; j < arg.size(); ++j) da[arg[j]] += dh[b][j];
                    } else {
                        da = Tensor<T>(tr.act_shape[ii], dh[b].values());
                    }
                    const auto& z = tr.z[ii][b];
                    for (std::size_t j = 0; j < da.size(); ++j)
                        if (!(z[j] > T(0))) da[j] = T(0);
                    dz[b] = std::move(da);
                }
            }
            auto dx = detail::unit_backward(units_[ii], params_.layers[ii], tr.layers[ii], dz, grad.layers[ii], clip);
            if (d_in[ii].empty())
                d_in[ii] = std::move(dx);
            else
                for (std::size_t b = 0; b < B; ++b) detail::add_into(d_in[ii][b], dx[b]);
            for (std::size_t e = 0; e < spec_.residuals.size(); ++e) {
                const auto& edge = spec_.residuals[e];
                if (edge.to_layer != ii) continue;
                std::vector<Tensor<T>> de;
                if (edge.kind == ResidualKind::identity)
                    de = dz;
                else
                    de = detail::unit_backward(edge_units_[e], params_.edges[e], tr.edges[e], dz, grad.edges[e], clip);
                auto& target = d_in[edge.from_layer];
                if (target.empty())
                    target = std::move(de);
                else
                    for (std::size_t b = 0; b < B; ++b) detail::add_into(target[b], de[b]);
            }
            if (ii == 0) break;
            // Undo the head reshaping between the conv stack and the classifier.
            dh = std::move(d_in[ii]);
            if (tr.head[ii] != 0) {
                const Shape s = tr.head_shape[ii];
                for (auto& t : dh) {
                    if (tr.head[ii] == 1) {
                        t.reshape(s);
                    } else {
                        const std::size_t C = s[0], plane = shape_size(s) / C;
                        Tensor<T> o(s);
                        for (std::size_t c = 0; c < C; ++c)
                            for (std::size_t j = 0; j < plane; ++j) o[c * plane + j] = t[c] / static_cast<T>(plane);
                        t = std::move(o);
                    }
                }
            }
        }
    }

    ArchitectureSpec spec_;
    Params<T> params_;
    std::vector<Unit> units_;
    std::vector<Unit> edge_units_;
};

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// SGD with optional momentum; quantized rows are clamped to [-clip, clip] after every step.
template <class T>
class SgdOptimizer {
public:
    explicit SgdOptimizer(const TrainConfig& cfg) : cfg_(cfg) { cfg_.check(); }

    void step(Network<T>& net, const Params<T>& grad) {
        auto& p = net.params();
        if (velocity_.layers.empty() && velocity_.edges.empty()) velocity_ = zeros_like(p);
        const T lr = static_cast<T>(cfg_.learning_rate);
        const T mu = cfg_.optimizer == Optimizer::sgd_momentum ? static_cast<T>(cfg_.momentum) : T(0);
        auto upd = [&](std::vector<T>& w, const std::vector<T>& g, std::vector<T>& v) {
            for (std::size_t i = 0; i < w.size(); ++i) {
                v[i] = mu * v[i] + g[i];
                w[i] -= lr * v[i];
            }
        };
        auto unit = [&](UnitParams<T>& w, const UnitParams<T>& g, UnitParams<T>& v, const Unit& u) {
            if (w.empty()) return;
            upd(w.weight.values(), g.weight.values(), v.weight.values());
            upd(w.bias, g.bias, v.bias);
            upd(w.gamma, g.gamma, v.gamma);
            upd(w.beta, g.beta, v.beta);
            if (u.weights.is_quantized()) {
                const T c = static_cast<T>(cfg_.clip);
                for (std::size_t i = u.fp_filters * u.geom.taps(); i < w.weight.size(); ++i)
                    w.weight[i] = std::clamp(w.weight[i], -c, c);
            }
        };
        const auto& spec = net.spec();
        for (std::size_t i = 0; i < p.layers.size(); ++i)
            unit(p.layers[i], grad.layers[i], velocity_.layers[i], net.units()[i]);
        for (std::size_t e = 0; e < p.edges.size(); ++e)
            if (spec.residuals[e].kind == ResidualKind::conv1x1)
                unit(p.edges[e], grad.edges[e], velocity_.edges[e], unit_of(edge_layer(spec, spec.residuals[e])));
    }

private:
    TrainConfig cfg_;
    Params<T> velocity_;
};

/// One optimizer step on one batch; returns the batch loss.
template <class T>
T backward_step(Network<T>& net, SgdOptimizer<T>& opt, const std::vector<Tensor<T>>& batch,
                const std::vector<std::size_t>& labels, const TrainConfig& cfg) {
    Params<T> grad;
    const T loss = net.loss_and_gradients(batch, labels, grad, static_cast<T>(cfg.clip));
    if (!std::isfinite(static_cast<double>(loss)))
        throw TrainingError("non-finite loss (" + std::to_string(static_cast<double>(loss)) + ") on a batch of " +
                            std::to_string(batch.size()));
    opt.step(net, grad);
    return loss;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct EpochMetrics {
    std::size_t epoch = 0;
    double train_loss = 0;
    double test_acc = 0;
};

inline nlohmann::json to_json(const EpochMetrics& m) {
    return {{"epoch", m.epoch}, {"train_loss", m.train_loss}, {"test_acc", m.test_acc}};
}

struct TrainResult {
    std::vector<EpochMetrics> epochs;
    double test_acc = 0;
    Params<float> params;
};

template <class T>
double accuracy(Network<T>& net, const Dataset& d, std::size_t batch_size = 64) {
    if (d.size() == 0) return 0.0;
    std::size_t correct = 0;
    for (std::size_t s = 0; s < d.size(); s += batch_size) {
        const std::size_t e = std::min(d.size(), s + batch_size);
        std::vector<Tensor<T>> batch;
        for (std::size_t i = s; i < e; ++i) batch.push_back(d.inputs[i].template cast<T>());
        auto logits = net.forward(batch, Mode::eval);
        for (std::size_t i = s; i < e; ++i) {
            const auto& z = logits[i - s];
            const auto pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
            if (pred == d.labels[i]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

/// Trains from a seeded initialization; per-epoch metrics go to `on_epoch` when given.
inline TrainResult train_toy(const ArchitectureSpec& spec, const DataSplit& data, const TrainConfig& cfg,
                             const std::function<void(const EpochMetrics&)>& on_epoch = {}) {
    cfg.check();
    require_valid(spec);
    detail::require(data.train.size() > 0, "empty training set");
    detail::require(data.train.classes <= spec.num_classes, "dataset has more classes than the network");
    for (const auto& d : {&data.train, &data.test}) {
        detail::require(d->inputs.size() == d->labels.size(), "input and label counts differ");
        for (auto l : d->labels) detail::require(l < d->classes, "label out of range");
        for (const auto& x : d->inputs)
            for (auto v : x.values()) detail::require(std::isfinite(v), "non-finite value in dataset");
    }

    Network<float> net(spec, cfg.seed);
    SgdOptimizer<float> opt(cfg);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(data.train.size());
    TrainResult res;
    for (std::size_t ep = 1; ep <= cfg.epochs; ++ep) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double total = 0;
        std::size_t batches = 0;
        for (std::size_t s = 0; s < order.size(); s += cfg.batch_size) {
            const std::size_t e = std::min(order.size(), s + cfg.batch_size);
            Batch batch;
            std::vector<std::size_t> labels;
            for (std::size_t i = s; i < e; ++i) {
                batch.push_back(data.train.inputs[order[i]]);
                labels.push_back(data.train.labels[order[i]]);
            }
            float loss;
            try {
                loss = backward_step(net, opt, batch, labels, cfg);
            } catch (const TrainingError& err) {
                throw TrainingError(std::string(err.what()) + " at epoch " + std::to_string(ep) + ", batch " +
                                    std::to_string(batches));
            }
            total += loss;
            ++batches;
        }
        EpochMetrics m{ep, total / static_cast<double>(batches), accuracy(net, data.test)};
        res.epochs.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    res.test_acc = res.epochs.empty() ? accuracy(net, data.test) : res.epochs.back().test_acc;
    res.params = net.params();
    return res;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

// Layout: "HNCK", u32 version, u64 spec_hash, u32 tensor count, then per tensor
// u32 rank, u64 dims, f32 values. Little-endian throughout.
namespace detail {

template <class T>
void for_each_tensor(Params<T>& p, auto&& fn) {
    for (auto* group : {&p.layers, &p.edges})
        for (auto& u : *group) {
            fn(u.weight.values(), u.weight.shape());
            fn(u.bias, Shape{u.bias.size()});
            fn(u.gamma, Shape{u.gamma.size()});
            fn(u.beta, Shape{u.beta.size()});
            fn(u.running_mean, Shape{u.running_mean.size()});
            fn(u.running_var, Shape{u.running_var.size()});
        }
}

inline void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, std::size_t bytes) {
    for (std::size_t b = 0; b < bytes; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

} // namespace detail

inline std::vector<std::uint8_t> serialize_checkpoint(const ArchitectureSpec& spec, Params<float> p) {
    std::vector<std::uint8_t> out = {'H', 'N', 'C', 'K'};
    detail::put_le(out, 1, 4);
    detail::put_le(out, spec_hash(spec), 8);
    std::uint32_t count = 0;
    detail::for_each_tensor(p, [&](auto&, const Shape&) { ++count; });
    detail::put_le(out, count, 4);
    detail::for_each_tensor(p, [&](std::vector<float>& v, const Shape& s) {
        detail::put_le(out, s.size(), 4);
        for (auto d : s) detail::put_le(out, d, 8);
        for (float f : v) detail::put_le(out, std::bit_cast<std::uint32_t>(f), 4);
    });
    return out;
}

/// Restores parameters for `spec`; the stored spec hash must match.
inline Params<float> deserialize_checkpoint(const ArchitectureSpec& spec, std::span<const std::uint8_t> in) {
    std::size_t pos = 0;
    auto get = [&](std::size_t bytes) {
        if (pos + bytes > in.size()) throw ConfigError("truncated checkpoint");
        std::uint64_t v = 0;
        for (std::size_t b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
        pos += bytes;
        return v;
    };
    if (in.size() < 4 || std::memcmp(in.data(), "HNCK", 4) != 0) throw ConfigError("not a checkpoint");
    pos = 4;
    if (get(4) != 1) throw ConfigError("unsupported checkpoint version");
    if (get(8) != spec_hash(spec)) throw ConfigError("checkpoint was written for a different architecture");
    auto p = init_params<float>(spec, 0);
    std::uint32_t expected = 0;
    detail::for_each_tensor(p, [&](auto&, const Shape&) { ++expected; });
    if (get(4) != expected) throw ConfigError("checkpoint tensor count mismatch");
    detail::for_each_tensor(p, [&](std::vector<float>& v, const Shape& s) {
        const auto rank = get(4);
        Shape got(rank);
        for (auto& d : got) d = get(8);
        if (got != s) throw ConfigError("checkpoint tensor shape mismatch");
        for (auto& f : v) f = std::bit_cast<float>(static_cast<std::uint32_t>(get(4)));
    });
    if (pos != in.size()) throw ConfigError("trailing bytes in checkpoint");
    return p;
}

inline void save_checkpoint(const std::string& path, const ArchitectureSpec& spec, const Params<float>& p) {
    const auto bytes = serialize_checkpoint(spec, p);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline Params<float> load_checkpoint(const std::string& path, const ArchitectureSpec& spec) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return deserialize_checkpoint(spec, bytes);
}

} // namespace hybridnet

#endif
