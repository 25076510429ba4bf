// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_VERIFY_HPP
#define HYBRIDNET_VERIFY_HPP

#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hybridnet/kernels.hpp"

namespace hybridnet {

/// Randomized self-check of the packed kernels against unpacked integer arithmetic.
struct KernelCheckOptions {
    std::size_t cases = 10000;      // total, split evenly between dot and conv cases
    std::vector<std::size_t> sizes; // dot lengths and conv input sides; empty = random
    std::uint64_t seed = 1;
    bool inject_fault = false;      // flip one packed input bit before running the kernel
};

struct KernelCheckResult {
    std::size_t dot_cases = 0;
    std::size_t conv_cases = 0;
    std::size_t failures = 0;
    std::string counterexample; // smallest failing case, empty when all pass

    bool ok() const { return failures == 0; }
};

namespace detail {

inline std::vector<int> random_signs(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> v(n);
    for (auto& x : v) x = (rng() & 1) ? 1 : -1;
    return v;
}

inline std::string signs_string(const std::vector<int>& v) {
    std::string s;
    for (int x : v) s += x > 0 ? '+' : '-';
    return s;
}

inline PackedBitTensor<> pack_maybe_faulty(const std::vector<int>& v, Shape shape, bool fault) {
    auto p = pack_bits(v, std::move(shape));
    if (fault && p.logical_len() > 0) p.set(0, !p.bit(0));
    return p;
}

inline bool dot_matches(const std::vector<int>& a, const std::vector<int>& b, bool fault) {
    long long want = 0;
    for (std::size_t i = 0; i < a.size(); ++i) want += a[i] * b[i];
    const auto got = xnor_popcount_dot(pack_maybe_faulty(a, {a.size()}, fault), pack_bits(b, {b.size()}));
    return got == want;
}

struct ConvCase {
    ConvGeometry g;
    std::vector<int> x, w;
};

inline bool conv_matches(const ConvCase& c, bool fault) {
    const auto& g = c.g;
    const std::size_t N = g.in_side, M = g.out_side, k = g.kernel, I = g.in_channels;
    const auto xp = pack_maybe_faulty(c.x, {I, N, N}, fault);
    std::vector<float> wf(c.w.begin(), c.w.end());
    const auto bank = sign_binarize<std::uint64_t, float>(wf, {g.out_channels, I, k, k});
    const auto acc = binary_conv2d_accumulators(xp, bank, g);
    for (std::size_t o = 0; o < g.out_channels; ++o)
        for (std::size_t oy = 0; oy < M; ++oy)
            for (std::size_t ox = 0; ox < M; ++ox) {
                long long want = 0;
                for (std::size_t ci = 0; ci < I; ++ci)
                    for (std::size_t ky = 0; ky < k; ++ky)
                        for (std::size_t kx = 0; kx < k; ++kx) {
                            const long long iy = static_cast<long long>(oy * g.stride + ky) - static_cast<long long>(g.pad);
                            const long long ix = static_cast<long long>(ox * g.stride + kx) - static_cast<long long>(g.pad);
                            if (iy < 0 || ix < 0 || iy >= static_cast<long long>(N) || ix >= static_cast<long long>(N))
                                continue;
                            want += c.x[(ci * N + static_cast<std::size_t>(iy)) * N + static_cast<std::size_t>(ix)] *
                                    c.w[((o * I + ci) * k + ky) * k + kx];
                        }
                if (acc[(o * M + oy) * M + ox] != want) return false;
            }
    return true;
}

inline ConvCase random_conv(std::size_t side, std::mt19937_64& rng) {
    auto pick = [&](std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng); };
    ConvCase c;
    const std::size_t N = side ? side : pick(1, 9);
    const std::size_t I = N == 1 && side == 1 ? 1 : pick(1, 70);
    std::size_t k = std::vector<std::size_t>{1, 3, 5}[pick(0, 2)];
    if (side == 1) k = 1;
    const std::size_t pad = pick(0, k / 2);
    if (N + 2 * pad < k) k = 1;
    const std::size_t stride = pick(1, 2);
    c.g = ConvGeometry::make(I, pick(1, 4), k, N, stride, pad);
    c.x = random_signs(I * N * N, rng);
    c.w = random_signs(c.g.out_channels * I * k * k, rng);
    return c;
}

} // namespace detail

inline KernelCheckResult verify_kernels(const KernelCheckOptions& o) {
    std::mt19937_64 rng(o.seed);
    KernelCheckResult r;
    std::optional<std::pair<std::vector<int>, std::vector<int>>> worst_dot;
    std::optional<detail::ConvCase> worst_conv;
    auto size_at = [&](std::size_t i) -> std::size_t { return o.sizes.empty() ? 0 : o.sizes[i % o.sizes.size()]; };

    const std::size_t n_dot = (o.cases + 1) / 2;
    for (std::size_t i = 0; i < n_dot; ++i) {
        std::size_t n = size_at(i);
        if (n == 0) n = std::uniform_int_distribution<std::size_t>(1, 256)(rng);
        auto a = detail::random_signs(n, rng);
        auto b = detail::random_signs(n, rng);
        ++r.dot_cases;
        if (detail::dot_matches(a, b, o.inject_fault)) continue;
        ++r.failures;
        if (!worst_dot || a.size() < worst_dot->first.size()) worst_dot.emplace(a, b);
    }
    for (std::size_t i = 0; i < o.cases - n_dot; ++i) {
        auto c = detail::random_conv(size_at(i), rng);
        ++r.conv_cases;
        if (detail::conv_matches(c, o.inject_fault)) continue;
        ++r.failures;
        if (!worst_conv || c.x.size() < worst_conv->x.size()) worst_conv = c;
    }

    std::ostringstream ce;
    if (worst_dot) {
        // Shrink by dropping trailing elements while the mismatch persists.
        auto [a, b] = *worst_dot;
        while (a.size() > 1) {
            std::vector<int> a2(a.begin(), a.end() - 1), b2(b.begin(), b.end() - 1);
            if (detail::dot_matches(a2, b2, o.inject_fault)) break;
            a = std::move(a2);
            b = std::move(b2);
        }
        ce << "dot n=" << a.size() << " a=" << detail::signs_string(a) << " b=" << detail::signs_string(b) << '\n';
    }
    if (worst_conv) {
        const auto& g = worst_conv->g;
        ce << "conv I=" << g.in_channels << " O=" << g.out_channels << " k=" << g.kernel << " N=" << g.in_side
           << " stride=" << g.stride << " pad=" << g.pad << " x=" << detail::signs_string(worst_conv->x)
           << " w=" << detail::signs_string(worst_conv->w) << '\n';
    }
    r.counterexample = ce.str();
    return r;
}

} // namespace hybridnet

#endif
