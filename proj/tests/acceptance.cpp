// SPDX-License-Identifier: Apache-2.0

// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "hybridnet/hybridnet.hpp"

using namespace hybridnet;

namespace {

using Clock = std::chrono::steady_clock;

struct Check {
    std::vector<std::string> failures;
    std::vector<std::string> notes;

    void expect(bool ok, const std::string& what) { (ok ? notes : failures).push_back(what); }
};

ArchConfig preset(const std::string& name) {
    return load_config(std::string(HYBRIDNET_PRESET_DIR) + "/" + name + ".json");
}

std::string num(double v, int digits = 3) { return fixed(v, digits); }

std::string sci(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

bool within_rel(double got, double want, double tol) { return std::abs(got - want) <= tol * std::abs(want); }

// Compares the four ratio columns of a preset against published values.
void expect_row(Check& c, const std::string& name, double ee, double mc, double tol) {
    const auto row = table_row(preset(name));
    const double got_ee = row.vs_fp.energy_efficiency, got_mc = row.vs_fp.memory_compression;
    const bool ok = within_rel(got_ee, ee, tol) && within_rel(got_mc, mc, tol);
    c.expect(ok, name + " E.E " + num(got_ee) + " vs " + num(ee) + ", M.C " + num(got_mc) + " vs " + num(mc) +
                     " (" + num(100 * (got_ee / ee - 1), 1) + "%, " + num(100 * (got_mc / mc - 1), 1) + "%)");
}

void expect_runtime(Check& c, Clock::time_point start, double limit_s) {
    const double s = std::chrono::duration<double>(Clock::now() - start).count();
    c.expect(s < limit_s, "runtime " + num(s, 2) + " s (limit " + num(limit_s, 0) + " s)");
}

// ---------------------------------------------------------------------------

Check xnor_baselines() {
    Check c;
    const auto t0 = Clock::now();
    expect_row(c, "vgg19-cifar-xnor", 24.13, 24.08, 0.05);
    expect_row(c, "resnet20-cifar-xnor", 18.67, 17.26, 0.05);
    expect_runtime(c, t0, 1.0);
    return c;
}

Check width_sweep() {
    Check c;
    const std::vector<std::string> names = {"resnet20-cifar-xnor", "resnet20-cifar-1.5x", "resnet20-cifar-2x",
                                            "resnet20-cifar-3x"};
    const double ee[] = {18.67, 10.09, 6.45, 3.196}, mc[] = {17.26, 9.1, 5.65, 2.8}, ee_x[] = {1, 0.54, 0.35, 0.17};
    const double base_ee = table_row(preset(names[0])).vs_fp.energy_efficiency;
    for (std::size_t i = 0; i < names.size(); ++i) {
        expect_row(c, names[i], ee[i], mc[i], 0.05);
        const auto row = table_row(preset(names[i]));
        const double x = row.vs_xnor.energy_efficiency;
        c.expect(std::abs(x - ee_x[i]) <= 0.02 && std::abs(x - row.vs_fp.energy_efficiency / base_ee) < 1e-9,
                 names[i] + " E.E(XNOR) " + num(x) + " vs " + num(ee_x[i]));
    }
    return c;
}

Check hybrid_resnet() {
    Check c;
    expect_row(c, "resnet20-cifar-hybrid-a", 17.3, 15.023, 0.05);
    expect_row(c, "resnet20-cifar-hybrid-a-1.5x", 9.19, 7.72, 0.05);
    expect_row(c, "resnet20-cifar-hybrid-a-2x", 5.72, 4.72, 0.05);
    expect_row(c, "resnet20-cifar-hybrid-b", 2.6, 1.3, 0.05);
    expect_row(c, "resnet20-cifar-hybrid-c", 7.96, 6.95, 0.05);
    return c;
}

Check hybrid_vgg() {
    Check c;
    expect_row(c, "vgg19-cifar-hybrid-a", 19.53, 21.78, 0.05);
    expect_row(c, "vgg19-cifar-hybrid-b", 9.28, 12.4, 0.05);
    expect_row(c, "vgg19-cifar-hybrid-c", 2.66, 1.92, 0.05);
    expect_row(c, "vgg19-cifar-2bit", 13.81, 13.8, 0.10);
    expect_row(c, "vgg19-cifar-inflate2x", 10.14, 10.97, 0.05);
    return c;
}

Check imagenet_vgg() {
    Check c;
    const auto t0 = Clock::now();
    expect_row(c, "vgg19-imagenet-xnor", 25.56, 29.75, 0.05);
    expect_row(c, "vgg19-imagenet-hybrid-a", 17.01, 28.27, 0.05);
    expect_row(c, "vgg19-imagenet-hybrid-a-prime", 13.1, 6.6, 0.05);
    expect_row(c, "vgg19-imagenet-hybrid-c", 6.085, 1.15, 0.05);
    expect_runtime(c, t0, 1.0);
    return c;
}

Check kernels() {
    Check c;
    const auto t0 = Clock::now();
    const auto r = verify_kernels({});
    c.expect(r.ok() && r.dot_cases + r.conv_cases == 10000,
             std::to_string(r.dot_cases + r.conv_cases) + " randomized cases, " + std::to_string(r.failures) +
                 " mismatches");

    const auto spec = build(preset("vgg19-cifar-xnor"));
    Network<float> net(spec, 1);
    const auto batch = gradcheck::random_batch<float>({3, 32, 32}, 2, 2);
    const auto packed = net.forward(batch, Mode::eval, KernelPath::packed);
    const auto reference = net.forward(batch, Mode::eval, KernelPath::reference);
    double worst = 0;
    for (std::size_t b = 0; b < packed.size(); ++b)
        for (std::size_t k = 0; k < packed[b].size(); ++k)
            worst = std::max(worst, std::abs(static_cast<double>(packed[b][k]) - reference[b][k]) /
                                        std::max(1e-12, std::abs(static_cast<double>(reference[b][k]))));
    c.expect(worst <= 1e-5, "xnor VGG-19 packed vs reference forward, worst relative difference " + sci(worst));
    expect_runtime(c, t0, 120.0);
    return c;
}

Check quantizer() {
    Check c;
    constexpr int kPoints = 1000000;
    for (int k : {1, 2, 4, 8}) {
        const double step = 2.0 / (std::ldexp(1.0, k) - 1);
        bool monotone = true, idempotent = true;
        double max_err = 0, prev = -INFINITY;
        std::set<double> levels;
        for (int i = 0; i <= kPoints; ++i) {
            const double x = -1.0 + 2.0 * i / kPoints;
            const double q = qk_quantize(x, k);
            monotone = monotone && q >= prev;
            prev = q;
            idempotent = idempotent && qk_quantize(q, k) == q;
            max_err = std::max(max_err, std::abs(q - x));
            levels.insert(q);
        }
        c.expect(monotone, "q_" + std::to_string(k) + " monotone");
        c.expect(idempotent, "q_" + std::to_string(k) + " idempotent");
        c.expect(levels.size() == (std::size_t{1} << k),
                 "q_" + std::to_string(k) + " level count " + std::to_string(levels.size()));
        c.expect(max_err <= step / 2 + 1e-12, "q_" + std::to_string(k) + " max error " + num(max_err, 4) +
                                                  " vs bound 1/(2^k-1) = " + num(step / 2, 4));
    }

    std::mt19937_64 rng(7);
    std::normal_distribution<double> nd;
    bool optimal = true;
    for (std::size_t n = 1; n <= 12; ++n) {
        for (int trial = 0; trial < 5; ++trial) {
            std::vector<double> w(n);
            for (auto& v : w) v = nd(rng);
            const auto deq = sign_binarize<std::uint64_t, double>(w, {1, n}).dequantize();
            double ours = 0;
            for (std::size_t i = 0; i < n; ++i) ours += (w[i] - deq[i]) * (w[i] - deq[i]);
            double best = INFINITY;
            for (std::uint32_t m = 0; m < (1u << n); ++m) {
                double dot = 0;
                for (std::size_t i = 0; i < n; ++i) dot += ((m >> i) & 1 ? 1.0 : -1.0) * w[i];
                const double a = std::max(0.0, dot / static_cast<double>(n));
                double err = 0;
                for (std::size_t i = 0; i < n; ++i) {
                    const double d = w[i] - a * ((m >> i) & 1 ? 1.0 : -1.0);
                    err += d * d;
                }
                best = std::min(best, err);
            }
            optimal = optimal && ours <= best + 1e-5 * (1 + best);
        }
    }
    c.expect(optimal, "mean-abs alpha matches the brute-force optimum for filter lengths 1..12");
    return c;
}

Check gradients() {
    Check c;
    using gradcheck::Group;
    auto run = [&](const ArchitectureSpec& spec, std::vector<Group> groups, const Shape& in, std::uint64_t seed) {
        Network<double> net(spec, seed);
        const auto batch = gradcheck::random_batch<double>(in, 4, seed + 1);
        std::vector<std::size_t> labels;
        for (std::size_t i = 0; i < batch.size(); ++i) labels.push_back(i % spec.num_classes);
        for (auto g : groups) {
            const double e = gradcheck::worst_relative_error(net, batch, labels, g, seed + 2);
            c.expect(e >= 0 && e <= 1e-4, spec.name + " " + gradcheck::name(g) + " worst relative error " + sci(e));
        }
    };
    run(build_resnet(8, 0.5, {1, 8}, 10),
        {Group::conv_weight, Group::linear_weight, Group::edge_weight, Group::bias}, {1, 8, 8}, 11);
    run(apply_hybridization(gradcheck::small_convnet(), transform::IntraLayer{1.0}),
        {Group::conv_weight, Group::linear_weight, Group::bias, Group::bn_gamma, Group::bn_beta}, {1, 8, 8}, 21);

    // STE support: with clip 1 the quantized-weight gradient is the unclipped one inside the box and zero outside.
    const auto spec = apply_hybridization(gradcheck::small_convnet(), transform::XnorBaseline{});
    Network<double> net(spec, 31);
    std::mt19937_64 rng(32);
    std::uniform_real_distribution<double> u(-2, 2);
    for (std::size_t i = 1; i + 1 < spec.layers.size(); ++i)
        for (auto& v : net.params().layers[i].weight.values()) v = u(rng);
    const auto batch = gradcheck::random_batch<double>({1, 8, 8}, 6, 33);
    const std::vector<std::size_t> labels = {0, 1, 2, 3, 4, 0};
    Params<double> clipped, open;
    net.loss_and_gradients(batch, labels, clipped, 1.0, false);
    net.loss_and_gradients(batch, labels, open, INFINITY, false);
    std::size_t mismatches = 0, checked = 0;
    for (std::size_t i = 1; i + 1 < spec.layers.size(); ++i) {
        const auto& w = net.params().layers[i].weight;
        for (std::size_t j = 0; j < w.size(); ++j, ++checked) {
            const double want = std::abs(w[j]) <= 1.0 ? open.layers[i].weight[j] : 0.0;
            mismatches += clipped.layers[i].weight[j] != want;
        }
    }
    const auto ste = ste_grad<double>(std::vector<double>(1000, 1.0), [] {
        std::vector<double> v(1000);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = -2.0 + 4.0 * static_cast<double>(i) / 999.0;
        return v;
    }());
    std::size_t support = 0;
    for (std::size_t i = 0; i < ste.size(); ++i) support += ste[i] != 0;
    std::size_t inside = 0;
    for (std::size_t i = 0; i < 1000; ++i) inside += std::abs(-2.0 + 4.0 * static_cast<double>(i) / 999.0) <= 1.0;
    c.expect(mismatches == 0 && support == inside,
             "STE weight support exact on " + std::to_string(checked) + " latent weights, activation support " +
                 std::to_string(support) + "/" + std::to_string(inside));
    return c;
}

Check toy_training() {
    Check c;
    const auto t0 = Clock::now();
    const std::vector<std::pair<std::string, Transform>> variants = {
        {"fp32", transform::None{}}, {"fp_residual", transform::FpResidual{}}, {"xnor", transform::XnorBaseline{}}};
    std::vector<std::vector<double>> acc(variants.size());
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        const auto data = make_shapes({}, seed);
        TrainConfig cfg;
        cfg.epochs = 15;
        cfg.seed = seed;
        for (std::size_t v = 0; v < variants.size(); ++v) {
            const auto spec = apply_hybridization(build_resnet(8, 0.5, {1, kShapeSide}, kShapeClasses), variants[v].second);
            acc[v].push_back(train_toy(spec, data, cfg).test_acc);
        }
    }
    std::vector<double> med;
    std::string line = "5-seed median accuracy:";
    for (std::size_t v = 0; v < variants.size(); ++v) {
        auto a = acc[v];
        std::sort(a.begin(), a.end());
        med.push_back(a[2]);
        line += " " + variants[v].first + " " + num(a[2]);
    }
    c.expect(med[0] >= med[1] && med[1] >= med[2], line);

    TrainConfig cfg;
    cfg.epochs = 20;
    const double blobs = train_toy(build_mlp(2, {16, 16}, 2), make_blobs({}, 1), cfg).test_acc;
    c.expect(blobs >= 0.99, "fp32 blob accuracy " + num(blobs));
    expect_runtime(c, t0, 600.0);
    return c;
}

// Runs the CLI and captures stdout.
std::pair<int, std::string> run_cli(const std::string& args) {
    const std::string cmd = std::string(HYBRIDNET_CLI) + " " + args + " 2>/dev/null";
    FILE* p = popen(cmd.c_str(), "r");
    if (!p) return {-1, ""};
    std::string out;
    char buf[4096];
    for (std::size_t n; (n = std::fread(buf, 1, sizeof buf, p)) > 0;) out.append(buf, n);
    return {pclose(p), out};
}

Check determinism() {
    Check c;
    const std::vector<std::string> commands = {
        "describe resnet20-cifar-hybrid-a",
        "describe vgg19-cifar-hybrid-b --format json",
        "cost vgg19-cifar-hybrid-a",
        "cost resnet20-cifar-fp resnet20-cifar-hybrid-c --format json",
        "cost vgg19-imagenet-hybrid-a-prime --format csv",
        "compare vgg19-cifar-xnor vgg19-cifar-2bit",
        "verify-kernels --cases 2000 --seed 5",
        "quantize-table --k 4",
        "train-toy --task blobs --epochs 3 --seed 4",
        "train-toy --task shapes --epochs 1 --transform fp_residual --seed 2",
    };
    for (const auto& cmd : commands) {
        const auto a = run_cli(cmd), b = run_cli(cmd);
        c.expect(a.first == 0 && b.first == 0 && !a.second.empty() && a.second == b.second,
                 "hybridnet " + cmd + " (" + std::to_string(a.second.size()) + " bytes)");
    }
    return c;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Check()>>> criteria = {
        {"XNOR baselines", xnor_baselines},
        {"ResNet-20 width sweep", width_sweep},
        {"hybrid ResNet-20", hybrid_resnet},
        {"hybrid VGG-19", hybrid_vgg},
        {"ImageNet VGG-19", imagenet_vgg},
        {"kernel exactness", kernels},
        {"quantizer properties", quantizer},
        {"gradient checks", gradients},
        {"toy training ordering", toy_training},
        {"CLI determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        Check c;
        try {
            c = criteria[i].second();
        } catch (const std::exception& e) {
            c.failures.push_back(std::string("exception: ") + e.what());
        }
        const bool ok = c.failures.empty();
        failed += !ok;
        std::cout << (ok ? "PASS" : "FAIL") << "  " << (i + 1) << ". " << criteria[i].first << '\n';
        for (const auto& f : c.failures) std::cout << "        x " << f << '\n';
        for (const auto& n : c.notes) std::cout << "          " << n << '\n';
        std::cout.flush();
    }
    std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size()
              << " criteria passed\n";
    return failed ? 1 : 0;
}
