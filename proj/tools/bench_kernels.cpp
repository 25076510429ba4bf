// SPDX-License-Identifier: Apache-2.0
//
// Throughput of the packed binary conv against the fp32 reference conv.
// CSV on stdout: geometry,mode,ns_per_op,gmac_per_s

#include <chrono>
#include <cstdio>
#include <random>
#include <vector>

#include "hybridnet/kernels.hpp"

using namespace hybridnet;

namespace {

template <class F>
double time_ns(F&& f) {
    using clock = std::chrono::steady_clock;
    f(); // warm-up
    std::size_t reps = 0;
    const auto t0 = clock::now();
    double elapsed = 0;
    do {
        f();
        ++reps;
        elapsed = std::chrono::duration<double, std::nano>(clock::now() - t0).count();
    } while (elapsed < 2e8 && reps < 1000);
    return elapsed / static_cast<double>(reps);
}

} // namespace

int main() {
    struct G {
        std::size_t I, O, k, N;
    };
    const std::vector<G> geoms = {{16, 16, 3, 32}, {64, 64, 3, 16}, {128, 128, 3, 16}, {256, 256, 3, 8}, {512, 512, 3, 4}};
    std::mt19937_64 rng(7);
    std::normal_distribution<float> nd(0.0f, 1.0f);
    std::printf("geometry,mode,ns_per_op,gmac_per_s\n");
    volatile float sink = 0;
    for (const auto& gg : geoms) {
        const auto g = ConvGeometry::make(gg.I, gg.O, gg.k, gg.N, 1, gg.k / 2);
        Tensor<float> x({g.in_channels, g.in_side, g.in_side});
        Tensor<float> w({g.out_channels, g.in_channels, g.kernel, g.kernel});
        for (auto& v : x.values()) v = nd(rng);
        for (auto& v : w.values()) v = nd(rng);
        const auto xb = binarize(x);
        const auto bank = sign_binarize(w);
        char name[64];
        std::snprintf(name, sizeof name, "I%zu_O%zu_k%zu_N%zu", gg.I, gg.O, gg.k, gg.N);
        const double macs = static_cast<double>(g.macs());
        const double t_fp = time_ns([&] { sink = sink + fp_conv2d(x, w, g)[0]; });
        const double t_bin = time_ns([&] { sink = sink + binary_conv2d<float>(xb, bank, g)[0]; });
        std::printf("%s,fp32,%.0f,%.3f\n", name, t_fp, macs / t_fp);
        std::printf("%s,binary,%.0f,%.3f\n", name, t_bin, macs / t_bin);
    }
    return 0;
}
