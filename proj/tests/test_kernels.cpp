// SPDX-License-Identifier: Apache-2.0

#include <random>

#include <gtest/gtest.h>

#include "hybridnet/kernels.hpp"
#include "hybridnet/verify.hpp"

using namespace hybridnet;

namespace {

std::vector<int> signs(std::size_t n, std::mt19937_64& rng) {
    std::vector<int> v(n);
    for (auto& x : v) x = rng() & 1 ? 1 : -1;
    return v;
}

Tensor<float> randn(Shape s, std::mt19937_64& rng, float sd = 1.0f) {
    std::normal_distribution<float> nd(0, sd);
    Tensor<float> t(std::move(s));
    for (auto& v : t.values()) v = nd(rng);
    return t;
}

// Straightforward 7-loop convolution over doubles with explicit bounds checks.
std::vector<double> naive_conv(const std::vector<double>& x, const std::vector<double>& w, const ConvGeometry& g,
                               double pad_value = 0.0) {
    const long N = static_cast<long>(g.in_side), M = static_cast<long>(g.out_side), k = static_cast<long>(g.kernel);
    const long I = static_cast<long>(g.in_channels), O = static_cast<long>(g.out_channels);
    std::vector<double> y(static_cast<std::size_t>(O * M * M));
    for (long o = 0; o < O; ++o)
        for (long oy = 0; oy < M; ++oy)
            for (long ox = 0; ox < M; ++ox) {
                double acc = 0;
                for (long c = 0; c < I; ++c)
                    for (long ky = 0; ky < k; ++ky)
                        for (long kx = 0; kx < k; ++kx) {
                            const long iy = oy * static_cast<long>(g.stride) + ky - static_cast<long>(g.pad);
                            const long ix = ox * static_cast<long>(g.stride) + kx - static_cast<long>(g.pad);
                            const bool inside = iy >= 0 && ix >= 0 && iy < N && ix < N;
                            const double xv = inside ? x[static_cast<std::size_t>((c * N + iy) * N + ix)] : pad_value;
                            acc += xv * w[static_cast<std::size_t>(((o * I + c) * k + ky) * k + kx)];
                        }
                y[static_cast<std::size_t>((o * M + oy) * M + ox)] = acc;
            }
    return y;
}

template <class W>
std::vector<std::int32_t> accumulators(const std::vector<int>& x, const std::vector<int>& w, const ConvGeometry& g,
                                       PadMode mode = PadMode::exclude) {
    std::vector<float> wf(w.begin(), w.end());
    const auto bank = sign_binarize<W, float>(wf, {g.out_channels, g.in_channels, g.kernel, g.kernel});
    return binary_conv2d_accumulators(pack_bits<W>(x, {g.in_channels, g.in_side, g.in_side}), bank, g, mode);
}

} // namespace

TEST(XnorDot, Examples) {
    EXPECT_EQ(xnor_popcount_dot(pack_bits(std::vector<int>{1, -1, 1}, {3}), pack_bits(std::vector<int>{1, -1, 1}, {3})),
              3);
    EXPECT_EQ(xnor_popcount_dot(pack_bits(std::vector<int>{1, 1}, {2}), pack_bits(std::vector<int>{-1, -1}, {2})), -2);
    EXPECT_EQ(xnor_popcount_dot(pack_bits(std::vector<int>{}, {0}), pack_bits(std::vector<int>{}, {0})), 0);
    EXPECT_THROW(xnor_popcount_dot(pack_bits(std::vector<int>{1}, {1}), pack_bits(std::vector<int>{1, 1}, {2})),
                 ContractError);
}

TEST(XnorDot, MatchesIntegerOracle) {
    std::mt19937_64 rng(5);
    for (int t = 0; t < 500; ++t) {
        const std::size_t n = 1 + rng() % 300;
        const auto a = signs(n, rng), b = signs(n, rng);
        long long want = 0;
        for (std::size_t i = 0; i < n; ++i) want += a[i] * b[i];
        EXPECT_EQ(xnor_popcount_dot(pack_bits(a, {n}), pack_bits(b, {n})), want);
        EXPECT_EQ(xnor_popcount_dot(pack_bits<std::uint8_t>(a, {n}), pack_bits<std::uint8_t>(b, {n})), want);
    }
}

TEST(BinaryConv, IdentityKernel) {
    // 1x1 conv with a single all-plus filter sums the channels.
    std::mt19937_64 rng(2);
    const auto g = ConvGeometry::make(5, 1, 1, 4, 1, 0);
    const auto x = signs(5 * 16, rng);
    const auto acc = accumulators<std::uint64_t>(x, std::vector<int>(5, 1), g);
    for (std::size_t p = 0; p < 16; ++p) {
        int s = 0;
        for (std::size_t c = 0; c < 5; ++c) s += x[c * 16 + p];
        EXPECT_EQ(acc[p], s);
    }
}

TEST(BinaryConv, ExactAgainstNaiveOracle) {
    std::mt19937_64 rng(9);
    for (int t = 0; t < 300; ++t) {
        const std::size_t I = 1 + rng() % 130, k = std::vector<std::size_t>{1, 3, 5}[rng() % 3];
        const std::size_t N = k + rng() % 6, pad = rng() % (k / 2 + 1), stride = 1 + rng() % 2;
        const auto g = ConvGeometry::make(I, 1 + rng() % 3, k, N, stride, pad);
        const auto x = signs(I * N * N, rng), w = signs(g.out_channels * I * k * k, rng);
        const auto want = naive_conv(std::vector<double>(x.begin(), x.end()), std::vector<double>(w.begin(), w.end()), g);
        const auto want_plus = naive_conv(std::vector<double>(x.begin(), x.end()),
                                          std::vector<double>(w.begin(), w.end()), g, 1.0);
        const auto got = accumulators<std::uint64_t>(x, w, g);
        const auto got_plus = accumulators<std::uint64_t>(x, w, g, PadMode::plus_one);
        ASSERT_EQ(got.size(), want.size());
        for (std::size_t i = 0; i < got.size(); ++i) {
            ASSERT_EQ(got[i], want[i]) << "case " << t << " i " << i;
            ASSERT_EQ(got_plus[i], want_plus[i]) << "case " << t << " i " << i;
        }
    }
}

TEST(BinaryConv, WordSizeDoesNotMatter) {
    std::mt19937_64 rng(4);
    const auto g = ConvGeometry::make(37, 3, 3, 6, 2, 1);
    const auto x = signs(37 * 36, rng), w = signs(3 * 37 * 9, rng);
    const auto a = accumulators<std::uint64_t>(x, w, g);
    EXPECT_EQ(a, accumulators<std::uint32_t>(x, w, g));
    EXPECT_EQ(a, accumulators<std::uint8_t>(x, w, g));
}

TEST(BinaryConv, AlphaScalesEachFilter) {
    std::mt19937_64 rng(8);
    const auto g = ConvGeometry::make(4, 2, 3, 5, 1, 1);
    auto w = randn({2, 4, 3, 3}, rng);
    const auto x = binarize(randn({4, 5, 5}, rng));
    const auto bank = sign_binarize(w);
    const auto y = binary_conv2d(x, bank, g);
    const auto acc = binary_conv2d_accumulators(x, bank, g);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y[i], bank.alpha[i / 25] * static_cast<float>(acc[i]));
    // Doubling the latent weights doubles alpha and the output.
    for (auto& v : w.values()) v *= 2;
    const auto y2 = binary_conv2d(x, sign_binarize(w), g);
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_FLOAT_EQ(y2[i], 2 * y[i]);
}

TEST(BinaryConv, MatchesFpConvOnBinarizedOperands) {
    std::mt19937_64 rng(12);
    const auto g = ConvGeometry::make(16, 8, 3, 7, 1, 1);
    const auto xr = randn({16, 7, 7}, rng);
    const auto w = randn({8, 16, 3, 3}, rng);
    const auto bank = sign_binarize(w);
    const Tensor<float> xs({16, 7, 7}, unpack_bits(binarize(xr)));
    const Tensor<float> ws({8, 16, 3, 3}, bank.dequantize());
    const auto want = fp_conv2d(xs, ws, g);
    const auto got = binary_conv2d(binarize(xr), bank, g);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-5f * (1 + std::abs(want[i])));
}

TEST(BinaryConv, Preconditions) {
    const auto g = ConvGeometry::make(2, 1, 3, 4, 1, 1);
    const std::vector<float> w(18, 1.0f);
    const auto bank = sign_binarize<std::uint64_t, float>(w, {1, 2, 3, 3});
    EXPECT_THROW(binary_conv2d_accumulators(pack_bits(std::vector<int>(3 * 16, 1), {3, 4, 4}), bank, g), ContractError);
    const auto wrong = sign_binarize<std::uint64_t, float>(w, {2, 1, 3, 3});
    EXPECT_THROW(binary_conv2d_accumulators(pack_bits(std::vector<int>(2 * 16, 1), {2, 4, 4}), wrong, g), ContractError);
    auto bad = g;
    bad.out_side = 3;
    EXPECT_THROW(binary_conv2d_accumulators(pack_bits(std::vector<int>(2 * 16, 1), {2, 4, 4}), bank, bad),
                 ContractError);
    EXPECT_THROW(ConvGeometry::make(1, 1, 5, 2, 1, 0), ContractError);

    // 4096 channels with a 3x3 kernel exceeds the 2^15 tap bound of the int32 path.
    const auto big = ConvGeometry::make(4096, 1, 3, 1, 1, 1);
    const std::vector<float> wb(4096 * 9, 1.0f);
    const auto bank_big = sign_binarize<std::uint64_t, float>(wb, {1, 4096, 3, 3});
    EXPECT_THROW(binary_conv2d_accumulators(pack_bits(std::vector<int>(4096, 1), {4096, 1, 1}), bank_big, big),
                 ContractError);
    const auto edge = ConvGeometry::make(4096, 1, 1, 1, 1, 0);
    const auto bank_edge = sign_binarize<std::uint64_t, float>(std::vector<float>(4096, 1.0f), {1, 4096, 1, 1});
    EXPECT_EQ(binary_conv2d_accumulators(pack_bits(std::vector<int>(4096, 1), {4096, 1, 1}), bank_edge, edge)[0], 4096);
}

TEST(FpConv, ZeroAndIdentity) {
    std::mt19937_64 rng(1);
    const auto x = randn({3, 5, 5}, rng);
    const auto g = ConvGeometry::make(3, 3, 1, 5, 1, 0);
    Tensor<float> eye({3, 3, 1, 1});
    for (std::size_t c = 0; c < 3; ++c) eye[c * 3 + c] = 1;
    EXPECT_EQ(fp_conv2d(x, eye, g), x);
    const auto z = fp_conv2d(x, Tensor<float>({3, 3, 1, 1}), g);
    for (auto v : z.values()) EXPECT_EQ(v, 0.0f);
}

TEST(FpConv, MatchesNaiveOracle) {
    std::mt19937_64 rng(6);
    for (int t = 0; t < 50; ++t) {
        const std::size_t I = 1 + rng() % 8, k = std::vector<std::size_t>{1, 3, 5}[rng() % 3];
        const auto g = ConvGeometry::make(I, 1 + rng() % 4, k, k + rng() % 5, 1 + rng() % 2, rng() % (k / 2 + 1));
        const auto x = randn({I, g.in_side, g.in_side}, rng).cast<double>();
        const auto w = randn({g.out_channels, I, k, k}, rng).cast<double>();
        const auto want = naive_conv(x.values(), w.values(), g);
        const auto got = fp_conv2d(x, w, g);
        for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12 * (1 + std::abs(want[i])));
    }
}

TEST(FpConv, Deterministic) {
    std::mt19937_64 rng(6);
    const auto g = ConvGeometry::make(16, 16, 3, 8, 1, 1);
    const auto x = randn({16, 8, 8}, rng);
    const auto w = randn({16, 16, 3, 3}, rng);
    EXPECT_EQ(fp_conv2d(x, w, g), fp_conv2d(x, w, g));
}

TEST(FpConv, BackwardIsTheAdjoint) {
    // <conv(x), dy> = <x, conv_backward_input(dy)> and = <w, weight_grad(x, dy)>.
    std::mt19937_64 rng(14);
    const auto g = ConvGeometry::make(3, 4, 3, 6, 2, 1);
    const auto x = randn({3, 6, 6}, rng).cast<double>();
    const auto w = randn({4, 3, 3, 3}, rng).cast<double>();
    const auto dy = randn({4, g.out_side, g.out_side}, rng).cast<double>();
    const auto y = fp_conv2d(x, w, g);
    const auto dx = fp_conv2d_backward_input(dy, w, g);
    Tensor<double> dw(w.shape());
    fp_conv2d_accumulate_weight_grad(x, dy, g, dw);
    double lhs = 0, rx = 0, rw = 0;
    for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
    for (std::size_t i = 0; i < x.size(); ++i) rx += x[i] * dx[i];
    for (std::size_t i = 0; i < w.size(); ++i) rw += w[i] * dw[i];
    EXPECT_NEAR(lhs, rx, 1e-9 * (1 + std::abs(lhs)));
    EXPECT_NEAR(lhs, rw, 1e-9 * (1 + std::abs(lhs)));
}

TEST(FpLinear, Examples) {
    const Tensor<float> w({2, 3}, {1, 2, 3, -1, 0, 1});
    const std::vector<float> x = {1, 1, 2}, b = {0.5f, -0.5f};
    EXPECT_EQ(fp_linear<float>(x, w, b), (std::vector<float>{9.5f, 0.5f}));
    EXPECT_EQ(fp_linear<float>(x, w, {}), (std::vector<float>{9, 1}));
    EXPECT_THROW(fp_linear<float>(std::vector<float>{1, 2}, w, {}), ContractError);
    EXPECT_THROW(fp_linear<float>(x, w, std::vector<float>{1}), ContractError);
}

TEST(MixedConv, FractionEndpointsAndSplit) {
    std::mt19937_64 rng(21);
    const auto g = ConvGeometry::make(6, 10, 3, 5, 1, 1);
    const auto x = randn({6, 5, 5}, rng);
    const auto w = randn({10, 6, 3, 3}, rng);
    const std::size_t fl = 6 * 9, plane = 25;
    auto rows = [&](std::size_t from, std::size_t to) {
        return Tensor<float>({to - from, 6, 3, 3},
                             std::vector<float>(w.values().begin() + static_cast<std::ptrdiff_t>(from * fl),
                                                w.values().begin() + static_cast<std::ptrdiff_t>(to * fl)));
    };
    const auto all_bin = mixed_conv2d(x, Tensor<float>{}, sign_binarize(w), g, 0.0);
    EXPECT_EQ(all_bin, binary_conv2d(binarize(x), sign_binarize(w), g));
    const auto all_fp = mixed_conv2d(x, w, sign_binarize(rows(10, 10)), g, 1.0);
    EXPECT_EQ(all_fp, fp_conv2d(x, w, g));

    const auto half = mixed_conv2d(x, rows(0, 5), sign_binarize(rows(5, 10)), g, 0.5);
    auto gf = g, gb = g;
    gf.out_channels = 5;
    gb.out_channels = 5;
    const auto yf = fp_conv2d(x, rows(0, 5), gf);
    const auto yb = binary_conv2d(binarize(x), sign_binarize(rows(5, 10)), gb);
    for (std::size_t i = 0; i < 5 * plane; ++i) {
        EXPECT_EQ(half[i], yf[i]);
        EXPECT_EQ(half[5 * plane + i], yb[i]);
    }
    EXPECT_THROW(mixed_conv2d(x, rows(0, 4), sign_binarize(rows(4, 10)), g, 0.5), ContractError);
}

TEST(VerifyKernels, CleanRunAndInjectedFault) {
    KernelCheckOptions o;
    o.cases = 400;
    const auto ok = verify_kernels(o);
    EXPECT_TRUE(ok.ok());
    EXPECT_EQ(ok.dot_cases + ok.conv_cases, 400u);
    EXPECT_TRUE(ok.counterexample.empty());
    o.inject_fault = true;
    const auto bad = verify_kernels(o);
    EXPECT_FALSE(bad.ok());
    EXPECT_NE(bad.counterexample.find("dot n=1 "), std::string::npos) << bad.counterexample;
}

TEST(VerifyKernels, SizeOneOnly) {
    KernelCheckOptions o;
    o.cases = 100;
    o.sizes = {1};
    EXPECT_TRUE(verify_kernels(o).ok());
}
