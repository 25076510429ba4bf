// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_QUANTIZE_HPP
#define HYBRIDNET_QUANTIZE_HPP

#include <algorithm>
#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#include "hybridnet/error.hpp"
#include "hybridnet/tensor.hpp"

namespace hybridnet {

template <class W>
concept PackWord = std::unsigned_integral<W> && !std::same_as<W, bool>;

/// Sign bits packed LSB-first: bit i of word j holds element j*bits_per_word + i,
/// 1 for +1 and 0 for -1. Bits past logical_len in the last word are always zero.
template <PackWord Word = std::uint64_t>
class PackedBitTensor {
public:
    static constexpr std::size_t bits_per_word = std::numeric_limits<Word>::digits;

    PackedBitTensor() = default;
    explicit PackedBitTensor(Shape shape)
        : shape_(std::move(shape)), logical_len_(shape_size(shape_)), words_(word_count(logical_len_), Word{0}) {}

    /// Adopts raw words; rejects non-canonical padding.
    static PackedBitTensor from_words(Shape shape, std::vector<Word> words) {
        PackedBitTensor t(std::move(shape));
        detail::require(words.size() == t.words_.size(), "word count does not match shape");
        t.words_ = std::move(words);
        detail::require(t.padding_is_canonical(), "padding bits beyond logical length must be zero");
        return t;
    }

    static constexpr std::size_t word_count(std::size_t n) { return (n + bits_per_word - 1) / bits_per_word; }

    const Shape& shape() const { return shape_; }
    std::size_t logical_len() const { return logical_len_; }
    std::span<const Word> words() const { return words_; }

    bool bit(std::size_t i) const { return (words_[i / bits_per_word] >> (i % bits_per_word)) & Word{1}; }
    int sign(std::size_t i) const { return bit(i) ? 1 : -1; }
    void set(std::size_t i, bool positive) {
        const Word m = Word{1} << (i % bits_per_word);
        if (positive)
            words_[i / bits_per_word] |= m;
        else
            words_[i / bits_per_word] &= static_cast<Word>(~m);
    }

    /// Mask of the valid bits in word j.
    Word valid_mask(std::size_t j) const {
        const std::size_t rem = logical_len_ - j * bits_per_word;
        if (rem >= bits_per_word) return static_cast<Word>(~Word{0});
        return static_cast<Word>((Word{1} << rem) - 1);
    }

    bool padding_is_canonical() const {
        if (words_.empty()) return true;
        return (words_.back() & static_cast<Word>(~valid_mask(words_.size() - 1))) == 0;
    }

    friend bool operator==(const PackedBitTensor&, const PackedBitTensor&) = default;

    // Byte layout: "HNPB", u8 word bytes, 3 zero bytes, u32 rank, u64 dims[rank],
    // u64 logical_len, then the words. All integers little-endian.
    std::vector<std::uint8_t> serialize() const {
        std::vector<std::uint8_t> out = {'H', 'N', 'P', 'B', static_cast<std::uint8_t>(sizeof(Word)), 0, 0, 0};
        auto put = [&](std::uint64_t v, std::size_t bytes) {
            for (std::size_t b = 0; b < bytes; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
        };
        put(shape_.size(), 4);
        for (auto d : shape_) put(d, 8);
        put(logical_len_, 8);
        for (auto w : words_) put(w, sizeof(Word));
        return out;
    }

    static PackedBitTensor deserialize(std::span<const std::uint8_t> in) {
        std::size_t pos = 0;
        auto get = [&](std::size_t bytes) {
            detail::require(pos + bytes <= in.size(), "truncated packed tensor");
            std::uint64_t v = 0;
            for (std::size_t b = 0; b < bytes; ++b) v |= static_cast<std::uint64_t>(in[pos + b]) << (8 * b);
            pos += bytes;
            return v;
        };
        detail::require(in.size() >= 8 && std::memcmp(in.data(), "HNPB", 4) == 0, "bad packed tensor magic");
        detail::require(in[4] == sizeof(Word), "packed tensor word size differs");
        pos = 8;
        const auto rank = get(4);
        Shape shape(rank);
        for (auto& d : shape) d = get(8);
        const auto len = get(8);
        detail::require(len == shape_size(shape), "logical length does not match shape");
        std::vector<Word> words(word_count(len));
        for (auto& w : words) w = static_cast<Word>(get(sizeof(Word)));
        detail::require(pos == in.size(), "trailing bytes after packed tensor");
        return from_words(std::move(shape), std::move(words));
    }

private:
    Shape shape_;
    std::size_t logical_len_ = 0;
    std::vector<Word> words_;
};

/// Packs a tensor whose entries are exactly -1 or +1.
template <PackWord Word = std::uint64_t, class T>
PackedBitTensor<Word> pack_bits(std::span<const T> signs, Shape shape) {
    detail::require(shape_size(shape) == signs.size(), "sign count does not match shape");
    PackedBitTensor<Word> t(std::move(shape));
    for (std::size_t i = 0; i < signs.size(); ++i) {
        if (signs[i] == T(1))
            t.set(i, true);
        else if (signs[i] != T(-1))
            throw ContractError("pack_bits expects values in {-1, +1}");
    }
    return t;
}

template <PackWord Word = std::uint64_t, class T>
PackedBitTensor<Word> pack_bits(const std::vector<T>& signs, Shape shape) {
    return pack_bits<Word>(std::span<const T>(signs), std::move(shape));
}

template <class T = float, PackWord Word>
std::vector<T> unpack_bits(const PackedBitTensor<Word>& t) {
    std::vector<T> out(t.logical_len());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t.bit(i) ? T(1) : T(-1);
    return out;
}

/// sign() with sign(0) = +1.
template <class T>
constexpr T sign_of(T v) {
    return v >= T(0) ? T(1) : T(-1);
}

/// Packs sign(x) of an arbitrary finite real tensor.
template <PackWord Word = std::uint64_t, class T>
PackedBitTensor<Word> binarize(std::span<const T> x, Shape shape) {
    detail::require(shape_size(shape) == x.size(), "value count does not match shape");
    PackedBitTensor<Word> t(std::move(shape));
    for (std::size_t i = 0; i < x.size(); ++i) {
        detail::require(std::isfinite(static_cast<double>(x[i])), "binarize expects finite values");
        if (x[i] >= T(0)) t.set(i, true);
    }
    return t;
}

template <PackWord Word = std::uint64_t, class T>
PackedBitTensor<Word> binarize(const Tensor<T>& x) {
    return binarize<Word>(x.span(), x.shape());
}

// ---------------------------------------------------------------------------
// Filter-bank binarization
// ---------------------------------------------------------------------------

/// How alpha is derived from a filter's absolute values.
enum class ScaleMode {
    mean_abs, // ||W||_1 / n, the least-squares optimum
    l1_norm,  // ||W||_1
};

template <PackWord Word = std::uint64_t>
struct QuantizedFilterBank {
    std::vector<PackedBitTensor<Word>> packed_weights; // one per output filter
    std::vector<float> alpha;
    std::vector<bool> degenerate; // filter was identically zero, alpha = 0
    Shape filter_shape;

    std::size_t filters() const { return packed_weights.size(); }
    std::size_t filter_len() const { return shape_size(filter_shape); }

    /// alpha[o] * sign(W[o]) laid out filter-major.
    std::vector<float> dequantize() const {
        std::vector<float> out;
        out.reserve(filters() * filter_len());
        for (std::size_t o = 0; o < filters(); ++o)
            for (std::size_t i = 0; i < filter_len(); ++i)
                out.push_back(alpha[o] * static_cast<float>(packed_weights[o].sign(i)));
        return out;
    }
};

/// Binarizes a filter-major weight tensor (O, ...) into signs plus one scale per filter.
/// With per_filter = false every filter shares the scale of the whole tensor.
template <PackWord Word = std::uint64_t, class T>
QuantizedFilterBank<Word> sign_binarize(std::span<const T> weights, Shape weight_shape, bool per_filter = true,
                                        ScaleMode mode = ScaleMode::mean_abs) {
    detail::require(!weight_shape.empty(), "weight shape needs an output-filter dimension");
    detail::require(shape_size(weight_shape) == weights.size(), "weight count does not match shape");
    for (auto v : weights) detail::require(std::isfinite(static_cast<double>(v)), "sign_binarize expects finite weights");

    const std::size_t filters = weight_shape[0];
    Shape fshape(weight_shape.begin() + 1, weight_shape.end());
    const std::size_t n = shape_size(fshape);

    auto scale = [&](std::span<const T> w) {
        double s = 0;
        for (auto v : w) s += std::abs(static_cast<double>(v));
        if (mode == ScaleMode::mean_abs && !w.empty()) s /= static_cast<double>(w.size());
        return static_cast<float>(s);
    };

    QuantizedFilterBank<Word> bank;
    bank.filter_shape = fshape;
    const float shared = per_filter ? 0.0f : scale(weights);
    for (std::size_t o = 0; o < filters; ++o) {
        auto w = weights.subspan(o * n, n);
        PackedBitTensor<Word> p(fshape);
        bool all_zero = true;
        for (std::size_t i = 0; i < n; ++i) {
            if (w[i] >= T(0)) p.set(i, true);
            if (w[i] != T(0)) all_zero = false;
        }
        bank.packed_weights.push_back(std::move(p));
        bank.alpha.push_back(per_filter ? scale(w) : shared);
        bank.degenerate.push_back(all_zero);
    }
    return bank;
}

template <PackWord Word = std::uint64_t, class T>
QuantizedFilterBank<Word> sign_binarize(const Tensor<T>& w, bool per_filter = true,
                                        ScaleMode mode = ScaleMode::mean_abs) {
    return sign_binarize<Word>(w.span(), w.shape(), per_filter, mode);
}

// ---------------------------------------------------------------------------
// k-bit uniform quantizer
// ---------------------------------------------------------------------------

/// q_k(x) = 2 * (floor((2^k - 1)(x + 1) / 2) / (2^k - 1) - 1/2), with x clamped to [-1, 1].
inline double qk_quantize(double x, int k) {
    detail::require(k >= 1 && k <= 52, "q_k needs 1 <= k <= 52");
    detail::require(!std::isnan(x), "q_k input is NaN");
    x = std::clamp(x, -1.0, 1.0);
    const double levels = std::ldexp(1.0, k) - 1.0;
    const double t = levels * (x + 1.0) / 2.0;
    // Snap values within rounding noise of a grid index so grid points map to themselves.
    const double r = std::round(t);
    const double idx = std::abs(t - r) <= 1e-9 * levels ? r : std::floor(t);
    return 2.0 * (idx / levels - 0.5);
}

/// The 2^k output levels of q_k, ascending.
inline std::vector<double> qk_levels(int k) {
    detail::require(k >= 1 && k <= 24, "level table needs 1 <= k <= 24");
    const std::size_t n = std::size_t{1} << k;
    std::vector<double> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = 2.0 * (static_cast<double>(i) / static_cast<double>(n - 1) - 0.5);
    return out;
}

// ---------------------------------------------------------------------------
// Straight-through estimator
// ---------------------------------------------------------------------------

/// Passes upstream gradient where |input| <= clip, zero elsewhere.
template <class T>
std::vector<T> ste_grad(std::span<const T> upstream, std::span<const T> pre_quant_input, T clip = T(1)) {
    detail::require(upstream.size() == pre_quant_input.size(), "ste_grad shape mismatch");
    detail::require(clip > T(0), "ste_grad clip must be positive");
    std::vector<T> g(upstream.size());
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = std::abs(pre_quant_input[i]) <= clip ? upstream[i] : T(0);
    return g;
}

template <class T>
std::vector<T> ste_grad(const std::vector<T>& upstream, const std::vector<T>& input, T clip = T(1)) {
    return ste_grad<T>(std::span<const T>(upstream), std::span<const T>(input), clip);
}

} // namespace hybridnet

#endif
