// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_KERNELS_HPP
#define HYBRIDNET_KERNELS_HPP

#include <bit>
#include <cstdint>
#include <variant>
#include <vector>

#include "hybridnet/arch_model.hpp"
#include "hybridnet/quantize.hpp"
#include "hybridnet/tensor.hpp"

namespace hybridnet {

struct ConvGeometry {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel = 1;
    std::size_t in_side = 1;
    std::size_t out_side = 1;
    std::size_t stride = 1;
    std::size_t pad = 0;

    static ConvGeometry make(std::size_t I, std::size_t O, std::size_t k, std::size_t N, std::size_t stride,
                             std::size_t pad) {
        auto m = conv_output_side(N, k, stride, pad);
        detail::require(m.has_value() && *m > 0, "kernel does not fit the input");
        return {I, O, k, N, *m, stride, pad};
    }

    static ConvGeometry from_layer(const LayerSpec& l) {
        return {l.in_channels, l.out_channels, l.kernel_size, l.input_spatial, l.output_spatial, l.stride, l.padding};
    }

    void check() const {
        detail::require(in_channels && out_channels && kernel && stride, "geometry dimensions must be positive");
        detail::require(conv_output_side(in_side, kernel, stride, pad) == out_side, "geometry violates the shape law");
    }

    std::size_t taps() const { return in_channels * kernel * kernel; }
    std::size_t macs() const { return out_side * out_side * taps() * out_channels; }

    friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

/// How zero padding is treated on the binary path.
enum class PadMode {
    exclude,  // padded taps contribute nothing (matches a zero-padded conv over {-1,+1} maps)
    plus_one, // padded taps read as sign(0) = +1
};

/// An activation map is either a real (C, H, W) tensor or its packed signs.
template <PackWord Word = std::uint64_t>
using ActivationMap = std::variant<Tensor<float>, PackedBitTensor<Word>>;

template <PackWord Word>
bool is_binary(const ActivationMap<Word>& a) {
    return std::holds_alternative<PackedBitTensor<Word>>(a);
}

/// Number of fp32 filters an intra-layer split with fraction p keeps.
inline std::size_t fp_filters_for(double p, std::size_t filters) {
    LayerSpec l;
    l.out_channels = filters;
    l.fp_filter_fraction = p;
    return l.fp_filter_count();
}

// ---------------------------------------------------------------------------
// XNOR-popcount
// ---------------------------------------------------------------------------

/// sum_i sign(a_i) * sign(b_i) = 2 * popcount(XNOR) - n over the valid bits.
template <PackWord Word>
std::int64_t xnor_popcount_dot(const PackedBitTensor<Word>& a, const PackedBitTensor<Word>& b) {
    detail::require(a.logical_len() == b.logical_len(), "xnor_popcount_dot length mismatch");
    std::int64_t agree = 0;
    const auto wa = a.words();
    const auto wb = b.words();
    for (std::size_t j = 0; j < wa.size(); ++j)
        agree += std::popcount(static_cast<Word>(static_cast<Word>(~(wa[j] ^ wb[j])) & a.valid_mask(j)));
    return 2 * agree - static_cast<std::int64_t>(a.logical_len());
}

namespace detail {

inline constexpr std::size_t kMaxBinaryTaps = std::size_t{1} << 15;

// Packed signs regrouped so the channels of one pixel (or one kernel tap) sit
// in `words` consecutive words. Padding bits stay zero on both operands, so
// popcount(a ^ b) counts disagreements over valid channels only.
template <PackWord Word>
struct ChannelPacked {
    std::size_t words = 0;
    std::vector<Word> data;
};

template <PackWord Word>
ChannelPacked<Word> pack_pixels(const PackedBitTensor<Word>& x, std::size_t C, std::size_t H, std::size_t W) {
    constexpr std::size_t B = PackedBitTensor<Word>::bits_per_word;
    ChannelPacked<Word> out;
    out.words = (C + B - 1) / B;
    out.data.assign(H * W * out.words, Word{0});
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t p = 0; p < H * W; ++p)
            if (x.bit(c * H * W + p)) out.data[p * out.words + c / B] |= static_cast<Word>(Word{1} << (c % B));
    return out;
}

template <PackWord Word>
ChannelPacked<Word> pack_filter(const PackedBitTensor<Word>& f, std::size_t C, std::size_t k) {
    return pack_pixels(f, C, k, k);
}

} // namespace detail

/// Integer accumulators sum(sign(x) * sign(w)) of a binary convolution, (O, M, M).
template <PackWord Word>
std::vector<std::int32_t> binary_conv2d_accumulators(const PackedBitTensor<Word>& x,
                                                     const QuantizedFilterBank<Word>& w, const ConvGeometry& g,
                                                     PadMode mode = PadMode::exclude) {
    g.check();
    detail::require(g.taps() <= detail::kMaxBinaryTaps, "binary conv supports at most 2^15 taps per output");
    detail::require(x.shape() == Shape({g.in_channels, g.in_side, g.in_side}), "binary conv input shape mismatch");
    detail::require(w.filters() == g.out_channels, "binary conv filter count mismatch");
    detail::require(w.filter_shape == Shape({g.in_channels, g.kernel, g.kernel}), "binary conv filter shape mismatch");

    const std::size_t N = g.in_side, M = g.out_side, k = g.kernel, I = g.in_channels;
    const auto xp = detail::pack_pixels(x, I, N, N);
    const std::size_t nw = xp.words;
    std::vector<std::int32_t> out(g.out_channels * M * M);

    for (std::size_t o = 0; o < g.out_channels; ++o) {
        const auto fp = detail::pack_filter(w.packed_weights[o], I, k);
        // Disagreements with an all-ones (+1) padded tap = zero bits of the filter tap.
        std::vector<std::int32_t> pad_mismatch(k * k, 0);
        if (mode == PadMode::plus_one) {
            for (std::size_t t = 0; t < k * k; ++t) {
                std::int32_t ones = 0;
                for (std::size_t j = 0; j < nw; ++j) ones += std::popcount(fp.data[t * nw + j]);
                pad_mismatch[t] = static_cast<std::int32_t>(I) - ones;
            }
        }
        for (std::size_t oy = 0; oy < M; ++oy) {
            for (std::size_t ox = 0; ox < M; ++ox) {
                std::int32_t n = 0, mismatch = 0;
                for (std::size_t ky = 0; ky < k; ++ky) {
                    const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                    for (std::size_t kx = 0; kx < k; ++kx) {
                        const auto ix =
                            static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                        const std::size_t t = ky * k + kx;
                        if (iy < 0 || ix < 0 || iy >= static_cast<std::ptrdiff_t>(N) ||
                            ix >= static_cast<std::ptrdiff_t>(N)) {
                            if (mode == PadMode::plus_one) {
                                mismatch += pad_mismatch[t];
                                n += static_cast<std::int32_t>(I);
                            }
                            continue;
                        }
                        const Word* a = &xp.data[(static_cast<std::size_t>(iy) * N + static_cast<std::size_t>(ix)) * nw];
                        const Word* b = &fp.data[t * nw];
                        for (std::size_t j = 0; j < nw; ++j) mismatch += std::popcount(static_cast<Word>(a[j] ^ b[j]));
                        n += static_cast<std::int32_t>(I);
                    }
                }
                out[(o * M + oy) * M + ox] = n - 2 * mismatch;
            }
        }
    }
    return out;
}

/// alpha[o] * (XNOR-popcount correlation of sign(x) with sign(W[o])), (O, M, M).
template <class T = float, PackWord Word>
Tensor<T> binary_conv2d(const PackedBitTensor<Word>& x, const QuantizedFilterBank<Word>& w, const ConvGeometry& g,
                        PadMode mode = PadMode::exclude) {
    const auto acc = binary_conv2d_accumulators(x, w, g, mode);
    Tensor<T> out({g.out_channels, g.out_side, g.out_side});
    const std::size_t plane = g.out_side * g.out_side;
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t i = 0; i < plane; ++i)
            out[o * plane + i] = static_cast<T>(w.alpha[o]) * static_cast<T>(acc[o * plane + i]);
    return out;
}

// ---------------------------------------------------------------------------
// Full-precision reference path. Fixed loop order: results are reproducible
// bit for bit run to run.
// ---------------------------------------------------------------------------

/// Cross-correlation of x (I, N, N) with w (O, I, k, k), zero padding.
template <class T>
Tensor<T> fp_conv2d(const Tensor<T>& x, const Tensor<T>& w, const ConvGeometry& g) {
    g.check();
    detail::require(x.shape() == Shape({g.in_channels, g.in_side, g.in_side}), "fp conv input shape mismatch");
    detail::require(w.shape() == Shape({g.out_channels, g.in_channels, g.kernel, g.kernel}),
                    "fp conv weight shape mismatch");
    const std::size_t N = g.in_side, M = g.out_side, k = g.kernel;
    Tensor<T> out({g.out_channels, M, M});
    for (std::size_t o = 0; o < g.out_channels; ++o) {
        for (std::size_t oy = 0; oy < M; ++oy) {
            for (std::size_t ox = 0; ox < M; ++ox) {
                T acc = T(0);
                for (std::size_t c = 0; c < g.in_channels; ++c) {
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(N)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(N)) continue;
                            acc += x[(c * N + static_cast<std::size_t>(iy)) * N + static_cast<std::size_t>(ix)] *
                                   w[((o * g.in_channels + c) * k + ky) * k + kx];
                        }
                    }
                }
                out[(o * M + oy) * M + ox] = acc;
            }
        }
    }
    return out;
}

/// dL/dx of fp_conv2d given dL/dy (O, M, M).
template <class T>
Tensor<T> fp_conv2d_backward_input(const Tensor<T>& dy, const Tensor<T>& w, const ConvGeometry& g) {
    const std::size_t N = g.in_side, M = g.out_side, k = g.kernel;
    Tensor<T> dx({g.in_channels, N, N});
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t oy = 0; oy < M; ++oy)
            for (std::size_t ox = 0; ox < M; ++ox) {
                const T d = dy[(o * M + oy) * M + ox];
                if (d == T(0)) continue;
                for (std::size_t c = 0; c < g.in_channels; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(N)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(N)) continue;
                            dx[(c * N + static_cast<std::size_t>(iy)) * N + static_cast<std::size_t>(ix)] +=
                                d * w[((o * g.in_channels + c) * k + ky) * k + kx];
                        }
                    }
            }
    return dx;
}

/// Accumulates dL/dw of fp_conv2d into dw (O, I, k, k).
template <class T>
void fp_conv2d_accumulate_weight_grad(const Tensor<T>& x, const Tensor<T>& dy, const ConvGeometry& g, Tensor<T>& dw) {
    const std::size_t N = g.in_side, M = g.out_side, k = g.kernel;
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t oy = 0; oy < M; ++oy)
            for (std::size_t ox = 0; ox < M; ++ox) {
                const T d = dy[(o * M + oy) * M + ox];
                if (d == T(0)) continue;
                for (std::size_t c = 0; c < g.in_channels; ++c)
                    for (std::size_t ky = 0; ky < k; ++ky) {
                        const auto iy = static_cast<std::ptrdiff_t>(oy * g.stride + ky) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(N)) continue;
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const auto ix =
                                static_cast<std::ptrdiff_t>(ox * g.stride + kx) - static_cast<std::ptrdiff_t>(g.pad);
                            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(N)) continue;
                            dw[((o * g.in_channels + c) * k + ky) * k + kx] +=
                                d * x[(c * N + static_cast<std::size_t>(iy)) * N + static_cast<std::size_t>(ix)];
                        }
                    }
            }
}

/// y = W x + b with W (O, I).
template <class T>
std::vector<T> fp_linear(std::span<const T> x, const Tensor<T>& w, std::span<const T> b) {
    detail::require(w.rank() == 2 && w.dim(1) == x.size(), "fp linear shape mismatch");
    detail::require(b.empty() || b.size() == w.dim(0), "fp linear bias size mismatch");
    const std::size_t O = w.dim(0), I = w.dim(1);
    std::vector<T> y(O);
    for (std::size_t o = 0; o < O; ++o) {
        T acc = b.empty() ? T(0) : b[o];
        for (std::size_t i = 0; i < I; ++i) acc += w[o * I + i] * x[i];
        y[o] = acc;
    }
    return y;
}

// ---------------------------------------------------------------------------
// Intra-layer split
// ---------------------------------------------------------------------------

/// Channel concatenation of an fp32 slice (first) and a binary slice (rest).
/// The binary slice sees sign(x); the fp slice sees x.
template <PackWord Word>
Tensor<float> mixed_conv2d(const Tensor<float>& x, const Tensor<float>& fp_bank, const QuantizedFilterBank<Word>& bin_bank,
                           const ConvGeometry& g, double p, PadMode mode = PadMode::exclude) {
    g.check();
    const std::size_t n_fp = fp_filters_for(p, g.out_channels);
    const std::size_t n_fp_given = fp_bank.empty() ? 0 : fp_bank.dim(0);
    detail::require(n_fp_given == n_fp && bin_bank.filters() == g.out_channels - n_fp,
                    "filter counts do not match the fp fraction");
    const std::size_t plane = g.out_side * g.out_side;
    Tensor<float> out({g.out_channels, g.out_side, g.out_side});
    if (n_fp > 0) {
        auto gf = g;
        gf.out_channels = n_fp;
        auto y = fp_conv2d(x, fp_bank, gf);
        std::copy(y.values().begin(), y.values().end(), out.values().begin());
    }
    if (n_fp < g.out_channels) {
        auto gb = g;
        gb.out_channels = g.out_channels - n_fp;
        auto xb = binarize<Word>(x.span(), x.shape());
        auto y = binary_conv2d<float>(xb, bin_bank, gb, mode);
        std::copy(y.values().begin(), y.values().end(), out.values().begin() + static_cast<std::ptrdiff_t>(n_fp * plane));
    }
    return out;
}

} // namespace hybridnet

#endif
