// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_ARCH_MODEL_HPP
#define HYBRIDNET_ARCH_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "hybridnet/error.hpp"

namespace hybridnet {

/// Bit width of a weight or activation operand. 32 is full precision, 1 is
/// sign-binary, anything in between is a uniform k-bit grid.
class Precision {
public:
    constexpr Precision() = default;

    static constexpr Precision fp32() { return Precision(32); }
    static constexpr Precision binary() { return Precision(1); }
    static Precision int_bits(int k) {
        if (k < 1 || k > 32) throw ConfigError("bit width must be in [1, 32], got " + std::to_string(k));
        return Precision(k);
    }

    constexpr int bits() const { return bits_; }
    constexpr bool is_fp32() const { return bits_ == 32; }
    constexpr bool is_binary() const { return bits_ == 1; }
    constexpr bool is_quantized() const { return bits_ < 32; }

    std::string name() const {
        if (is_fp32()) return "fp32";
        if (is_binary()) return "binary";
        return "int" + std::to_string(bits_);
    }

    static Precision parse(const std::string& s) {
        if (s == "fp32") return fp32();
        if (s == "binary") return binary();
        if (s.size() > 3 && s.compare(0, 3, "int") == 0) {
            try {
                return int_bits(std::stoi(s.substr(3)));
            } catch (const std::logic_error&) {
            }
        }
        throw ConfigError("unknown precision '" + s + "'");
    }

    friend constexpr bool operator==(Precision, Precision) = default;

private:
    constexpr explicit Precision(int bits) : bits_(bits) {}
    int bits_ = 32;
};

enum class LayerKind { conv2d, linear };
enum class ResidualKind { identity, conv1x1 };
enum class HeadPool { flatten, global_average };
enum class Family { vgg, resnet, mlp, custom };

inline std::string to_string(LayerKind k) { return k == LayerKind::conv2d ? "conv2d" : "linear"; }
inline std::string to_string(ResidualKind k) { return k == ResidualKind::identity ? "identity" : "conv1x1"; }
inline std::string to_string(HeadPool h) { return h == HeadPool::flatten ? "flatten" : "global_average"; }
inline std::string to_string(Family f) {
    switch (f) {
    case Family::vgg: return "vgg";
    case Family::resnet: return "resnet";
    case Family::mlp: return "mlp";
    case Family::custom: return "custom";
    }
    return "custom";
}

/// One weight layer. Spatial sizes are side lengths of square maps; linear
/// layers use 1 for kernel and spatial sizes.
struct LayerSpec {
    LayerKind kind = LayerKind::conv2d;
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t kernel_size = 1;
    std::size_t input_spatial = 1;
    std::size_t output_spatial = 1;
    std::size_t stride = 1;
    std::size_t padding = 0;
    std::size_t pool_after = 1; // max-pool window/stride applied to the output, 1 = none
    Precision weight_precision = Precision::fp32();
    Precision activation_precision = Precision::fp32();
    double fp_filter_fraction = 0.0;

    std::size_t num_weights() const { return in_channels * out_channels * kernel_size * kernel_size; }
    std::size_t pooled_side() const { return output_spatial / pool_after; }

    /// Filters kept at fp32 in an intra-layer split: floor(p*O), at least one when p > 0.
    std::size_t fp_filter_count() const {
        if (fp_filter_fraction <= 0.0) return 0;
        auto n = static_cast<std::size_t>(std::floor(fp_filter_fraction * static_cast<double>(out_channels) + 1e-9));
        return std::clamp<std::size_t>(n, 1, out_channels);
    }

    friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// Skip connection carrying the input of `from_layer` to the output of
/// `to_layer` (added before that layer's activation and pooling).
struct ResidualEdge {
    std::size_t from_layer = 0;
    std::size_t to_layer = 0;
    ResidualKind kind = ResidualKind::identity;
    Precision weight_precision = Precision::fp32();
    Precision activation_precision = Precision::fp32();

    friend bool operator==(const ResidualEdge&, const ResidualEdge&) = default;
};

struct ArchitectureSpec {
    std::string name;
    Family family = Family::custom;
    std::vector<LayerSpec> layers;
    std::vector<ResidualEdge> residuals;
    std::size_t input_channels = 3;
    std::size_t input_side = 32;
    std::size_t num_classes = 10;
    double width_multiplier = 1.0;
    HeadPool head = HeadPool::flatten;

    friend bool operator==(const ArchitectureSpec&, const ArchitectureSpec&) = default;
};

/// Conv output side for the usual floor shape law; nullopt when the kernel does not fit.
inline std::optional<std::size_t> conv_output_side(std::size_t n, std::size_t k, std::size_t stride, std::size_t pad) {
    if (stride == 0 || n + 2 * pad < k) return std::nullopt;
    return (n + 2 * pad - k) / stride + 1;
}

inline std::size_t residual_stride(std::size_t in_side, std::size_t out_side) {
    return out_side == 0 ? 1 : (in_side + out_side - 1) / out_side;
}

/// The conv1x1 (or identity) geometry implied by a residual edge.
inline LayerSpec edge_layer(const ArchitectureSpec& spec, const ResidualEdge& e) {
    const auto& src = spec.layers.at(e.from_layer);
    const auto& dst = spec.layers.at(e.to_layer);
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = src.in_channels;
    l.out_channels = dst.out_channels;
    l.kernel_size = 1;
    l.input_spatial = src.input_spatial;
    l.output_spatial = dst.output_spatial;
    l.stride = residual_stride(l.input_spatial, l.output_spatial);
    l.weight_precision = e.weight_precision;
    l.activation_precision = e.activation_precision;
    return l;
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

/// Checks every structural invariant and returns all violations found.
inline std::vector<std::string> validate(const ArchitectureSpec& spec) {
    std::vector<std::string> v;
    const auto& L = spec.layers;
    const auto at = [](std::size_t i) { return " at layer " + std::to_string(i); };

    for (std::size_t i = 0; i < L.size(); ++i) {
        const auto& l = L[i];
        if (l.in_channels < 1 || l.out_channels < 1 || l.kernel_size < 1 || l.stride < 1 || l.pool_after < 1)
            v.push_back("non-positive dimension" + at(i));
        if (l.kind == LayerKind::conv2d) {
            auto m = conv_output_side(l.input_spatial, l.kernel_size, l.stride, l.padding);
            if (!m || *m != l.output_spatial)
                v.push_back("output size does not follow the conv shape law" + at(i));
            if (l.output_spatial < l.pool_after) v.push_back("pooling window larger than map" + at(i));
        } else if (l.kernel_size != 1 || l.input_spatial != 1 || l.output_spatial != 1 || l.stride != 1 ||
                   l.padding != 0 || l.pool_after != 1) {
            v.push_back("linear layer must have unit kernel/spatial sizes" + at(i));
        }
        if (!(l.fp_filter_fraction >= 0.0 && l.fp_filter_fraction <= 1.0))
            v.push_back("fp filter fraction outside [0,1]" + at(i));
        if (l.fp_filter_fraction > 0.0 && !l.weight_precision.is_quantized())
            v.push_back("fp filter fraction on a full-precision layer" + at(i));
        if (!l.activation_precision.is_fp32() && !l.activation_precision.is_binary())
            v.push_back("activation precision must be fp32 or binary" + at(i));
    }

    if (!L.empty()) {
        const auto& first = L.front();
        const std::size_t expect_in = first.kind == LayerKind::conv2d
                                          ? spec.input_channels
                                          : spec.input_channels * spec.input_side * spec.input_side;
        if (first.in_channels != expect_in) v.push_back("channel mismatch at layer 0");
        if (first.kind == LayerKind::conv2d && first.input_spatial != spec.input_side)
            v.push_back("spatial mismatch at layer 0");
        if (L.back().out_channels != spec.num_classes) v.push_back("final layer width differs from class count");
        if (L.front().weight_precision != Precision::fp32() || L.back().weight_precision != Precision::fp32() ||
            L.front().fp_filter_fraction != 0.0 || L.back().fp_filter_fraction != 0.0)
            v.push_back("first and last weight layers must be full precision");
    }

    for (std::size_t i = 1; i < L.size(); ++i) {
        const auto& prev = L[i - 1];
        const auto& cur = L[i];
        std::size_t expect_in = prev.out_channels;
        if (prev.kind == LayerKind::linear && cur.kind == LayerKind::conv2d) {
            v.push_back("conv layer after linear layer" + at(i));
            continue;
        }
        if (prev.kind == LayerKind::conv2d && cur.kind == LayerKind::linear && spec.head == HeadPool::flatten)
            expect_in = prev.out_channels * prev.pooled_side() * prev.pooled_side();
        if (cur.in_channels != expect_in)
            v.push_back("channel mismatch" + at(i) + ": expected " + std::to_string(expect_in) + ", got " +
                        std::to_string(cur.in_channels));
        if (prev.kind == LayerKind::conv2d && cur.kind == LayerKind::conv2d && cur.input_spatial != prev.pooled_side())
            v.push_back("spatial mismatch" + at(i));
    }

    for (std::size_t e = 0; e < spec.residuals.size(); ++e) {
        const auto& r = spec.residuals[e];
        const std::string where = " on residual edge " + std::to_string(e);
        if (r.from_layer >= r.to_layer || r.to_layer >= L.size()) {
            v.push_back("residual edge endpoints out of order" + where);
            continue;
        }
        const auto& src = L[r.from_layer];
        const auto& dst = L[r.to_layer];
        if (src.kind != LayerKind::conv2d || dst.kind != LayerKind::conv2d) {
            v.push_back("residual edge must connect conv layers" + where);
            continue;
        }
        for (std::size_t j = r.from_layer; j < r.to_layer; ++j) {
            if (L[j].kind != LayerKind::conv2d) v.push_back("residual edge spans a linear layer" + where);
        }
        const bool changes = src.in_channels != dst.out_channels || src.input_spatial != dst.output_spatial;
        if (r.kind == ResidualKind::identity && changes)
            v.push_back("identity residual edge across a shape change" + where);
        if (r.kind == ResidualKind::conv1x1 && !changes)
            v.push_back("conv1x1 residual edge without a shape change" + where);
        if (r.kind == ResidualKind::conv1x1) {
            auto s = residual_stride(src.input_spatial, dst.output_spatial);
            if (dst.output_spatial == 0 || conv_output_side(src.input_spatial, 1, s, 0) != dst.output_spatial)
                v.push_back("residual downsample stride does not reproduce the target size" + where);
        }
        if (!r.activation_precision.is_fp32() && !r.activation_precision.is_binary())
            v.push_back("activation precision must be fp32 or binary" + where);
    }
    return v;
}

inline void require_valid(const ArchitectureSpec& spec) {
    auto v = validate(spec);
    if (v.empty()) return;
    std::string msg = "invalid architecture '" + spec.name + "':";
    for (const auto& s : v) msg += "\n  " + s;
    throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

struct InputShape {
    std::size_t channels = 3;
    std::size_t side = 32;
};

struct VggOptions {
    std::size_t fc_width = 4096;
    bool scale_stem = true; // when false the first conv keeps its base width under inflation
};

namespace detail {

inline std::size_t scaled(std::size_t base, double mult) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(base) * mult)));
}

inline LayerSpec conv3x3(std::size_t in, std::size_t out, std::size_t side, std::size_t stride) {
    LayerSpec l;
    l.kind = LayerKind::conv2d;
    l.in_channels = in;
    l.out_channels = out;
    l.kernel_size = 3;
    l.padding = 1;
    l.stride = stride;
    l.input_spatial = side;
    l.output_spatial = *conv_output_side(side, 3, stride, 1);
    return l;
}

inline LayerSpec linear(std::size_t in, std::size_t out) {
    LayerSpec l;
    l.kind = LayerKind::linear;
    l.in_channels = in;
    l.out_channels = out;
    return l;
}

inline void check_common(double width_mult, InputShape input, std::size_t classes) {
    if (!(width_mult > 0.0) || !std::isfinite(width_mult)) throw ConfigError("width multiplier must be positive");
    if (input.channels == 0 || input.side == 0) throw ConfigError("input shape must be positive");
    if (classes == 0) throw ConfigError("class count must be positive");
}

} // namespace detail

/// VGG-N: N-3 3x3 convs in five pooled stages followed by three linear layers.
inline ArchitectureSpec build_vgg(int n, double width_mult, InputShape input, std::size_t classes,
                                  VggOptions opts = {}) {
    static constexpr int P = 0;
    std::vector<int> cfg;
    switch (n) {
    case 11: cfg = {64, P, 128, P, 256, 256, P, 512, 512, P, 512, 512, P}; break;
    case 16: cfg = {64, 64, P, 128, 128, P, 256, 256, 256, P, 512, 512, 512, P, 512, 512, 512, P}; break;
    case 19:
        cfg = {64, 64, P, 128, 128, P, 256, 256, 256, 256, P, 512, 512, 512, 512, P, 512, 512, 512, 512, P};
        break;
    default: throw ConfigError("unsupported VGG depth " + std::to_string(n) + " (expected 11, 16 or 19)");
    }
    detail::check_common(width_mult, input, classes);
    if (opts.fc_width == 0) throw ConfigError("fc width must be positive");

    ArchitectureSpec spec;
    spec.name = "vgg" + std::to_string(n);
    spec.family = Family::vgg;
    spec.input_channels = input.channels;
    spec.input_side = input.side;
    spec.num_classes = classes;
    spec.width_multiplier = width_mult;
    spec.head = HeadPool::flatten;

    std::size_t c = input.channels;
    std::size_t side = input.side;
    for (int v : cfg) {
        if (v == P) {
            if (side < 2) throw ConfigError("input side " + std::to_string(input.side) + " too small for VGG pooling");
            spec.layers.back().pool_after = 2;
            side /= 2;
            continue;
        }
        const bool stem = spec.layers.empty();
        const std::size_t out = (stem && !opts.scale_stem) ? static_cast<std::size_t>(v) : detail::scaled(v, width_mult);
        spec.layers.push_back(detail::conv3x3(c, out, side, 1));
        c = out;
    }
    spec.layers.push_back(detail::linear(c * side * side, opts.fc_width));
    spec.layers.push_back(detail::linear(opts.fc_width, opts.fc_width));
    spec.layers.push_back(detail::linear(opts.fc_width, classes));
    return spec;
}

/// CIFAR-style ResNet-N: stem conv, three stages of (N-2)/6 basic blocks, global pooling, one linear layer.
inline ArchitectureSpec build_resnet(int n, double width_mult, InputShape input, std::size_t classes) {
    if (n < 8 || (n - 2) % 6 != 0)
        throw ConfigError("ResNet depth must satisfy n = 6b + 2 with b >= 1, got " + std::to_string(n));
    detail::check_common(width_mult, input, classes);

    ArchitectureSpec spec;
    spec.name = "resnet" + std::to_string(n);
    spec.family = Family::resnet;
    spec.input_channels = input.channels;
    spec.input_side = input.side;
    spec.num_classes = classes;
    spec.width_multiplier = width_mult;
    spec.head = HeadPool::global_average;

    const std::size_t widths[3] = {detail::scaled(16, width_mult), detail::scaled(32, width_mult),
                                   detail::scaled(64, width_mult)};
    const int blocks = (n - 2) / 6;
    std::size_t side = input.side;
    spec.layers.push_back(detail::conv3x3(input.channels, widths[0], side, 1));
    std::size_t c = widths[0];
    for (int s = 0; s < 3; ++s) {
        for (int b = 0; b < blocks; ++b) {
            const std::size_t stride = (s > 0 && b == 0) ? 2 : 1;
            auto a = detail::conv3x3(c, widths[s], side, stride);
            side = a.output_spatial;
            auto bl = detail::conv3x3(widths[s], widths[s], side, 1);
            const std::size_t ia = spec.layers.size();
            spec.layers.push_back(a);
            spec.layers.push_back(bl);
            ResidualEdge e;
            e.from_layer = ia;
            e.to_layer = ia + 1;
            e.kind = (stride != 1 || c != widths[s]) ? ResidualKind::conv1x1 : ResidualKind::identity;
            spec.residuals.push_back(e);
            c = widths[s];
        }
    }
    if (side == 0) throw ConfigError("input side too small for ResNet downsampling");
    spec.layers.push_back(detail::linear(c, classes));
    return spec;
}

/// Fully connected network on a flattened (features x 1 x 1) input.
inline ArchitectureSpec build_mlp(std::size_t features, const std::vector<std::size_t>& hidden, std::size_t classes) {
    detail::check_common(1.0, {features, 1}, classes);
    ArchitectureSpec spec;
    spec.name = "mlp";
    spec.family = Family::mlp;
    spec.input_channels = features;
    spec.input_side = 1;
    spec.num_classes = classes;
    std::size_t c = features;
    for (auto h : hidden) {
        if (h == 0) throw ConfigError("hidden width must be positive");
        spec.layers.push_back(detail::linear(c, h));
        c = h;
    }
    spec.layers.push_back(detail::linear(c, classes));
    return spec;
}

// ---------------------------------------------------------------------------
// Hybridization transforms
// ---------------------------------------------------------------------------

namespace transform {
struct None {};
/// All interior weight layers binary (weights and activations).
struct XnorBaseline {};
/// Baseline plus full-precision conv1x1 residual edges (inserted every two convs when absent).
struct FpResidual {};
/// FpResidual plus the second linear layer at full precision.
struct FpResidualPlusFc2 {};
/// Baseline with the trailing `fp_layers` interior weight layers at full precision.
struct InterLayer {
    std::size_t fp_layers = 0;
};
/// Baseline with a full-precision filter fraction in every interior conv.
struct IntraLayer {
    double fraction = 0.1;
};
/// Interior weights quantized to `bits` bits, activations binary.
struct KBit {
    int bits = 2;
};
} // namespace transform

using Transform = std::variant<transform::None, transform::XnorBaseline, transform::FpResidual,
                               transform::FpResidualPlusFc2, transform::InterLayer, transform::IntraLayer,
                               transform::KBit>;

inline std::string transform_name(const Transform& t) {
    struct V {
        std::string operator()(transform::None) const { return "none"; }
        std::string operator()(transform::XnorBaseline) const { return "xnor_baseline"; }
        std::string operator()(transform::FpResidual) const { return "fp_residual"; }
        std::string operator()(transform::FpResidualPlusFc2) const { return "fp_residual_plus_fc2"; }
        std::string operator()(transform::InterLayer) const { return "inter_layer"; }
        std::string operator()(transform::IntraLayer) const { return "intra_layer"; }
        std::string operator()(transform::KBit) const { return "kbit"; }
    };
    return std::visit(V{}, t);
}

namespace detail {

inline void set_layer(LayerSpec& l, Precision w, Precision a) {
    l.weight_precision = w;
    l.activation_precision = a;
    l.fp_filter_fraction = 0.0;
}

inline ArchitectureSpec xnor_baseline(ArchitectureSpec spec) {
    const std::size_t n = spec.layers.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (i == 0 || i + 1 == n)
            set_layer(spec.layers[i], Precision::fp32(), Precision::fp32());
        else
            set_layer(spec.layers[i], Precision::binary(), Precision::binary());
    }
    for (auto& e : spec.residuals) {
        if (e.kind == ResidualKind::conv1x1) {
            e.weight_precision = Precision::binary();
            e.activation_precision = Precision::binary();
        } else {
            e.weight_precision = Precision::fp32();
            e.activation_precision = Precision::fp32();
        }
    }
    return spec;
}

// Pairs consecutive convs (0,1), (2,3), ... and bridges each pair with a skip edge.
inline void insert_pair_residuals(ArchitectureSpec& spec) {
    std::vector<std::size_t> convs;
    for (std::size_t i = 0; i < spec.layers.size(); ++i)
        if (spec.layers[i].kind == LayerKind::conv2d) convs.push_back(i);
    if (convs.size() < 2) throw ConfigError("fp_residual needs at least two conv layers");
    for (std::size_t j = 0; j + 1 < convs.size(); j += 2) {
        const auto& a = spec.layers[convs[j]];
        const auto& b = spec.layers[convs[j + 1]];
        ResidualEdge e;
        e.from_layer = convs[j];
        e.to_layer = convs[j + 1];
        const bool changes = a.in_channels != b.out_channels || a.input_spatial != b.output_spatial;
        e.kind = changes ? ResidualKind::conv1x1 : ResidualKind::identity;
        spec.residuals.push_back(e);
    }
}

inline ArchitectureSpec fp_residual(ArchitectureSpec spec) {
    if (spec.residuals.empty()) insert_pair_residuals(spec);
    spec = xnor_baseline(std::move(spec));
    for (auto& e : spec.residuals) {
        if (e.kind != ResidualKind::conv1x1) continue;
        e.weight_precision = Precision::fp32();
        e.activation_precision = spec.layers[e.from_layer].activation_precision;
    }
    return spec;
}

} // namespace detail

/// Returns a hybridized copy of `spec`; every transform is defined relative to
/// the XNOR baseline of the same layer graph.
inline ArchitectureSpec apply_hybridization(const ArchitectureSpec& spec, const Transform& t) {
    require_valid(spec);
    const std::size_t n = spec.layers.size();
    ArchitectureSpec out = std::visit(
        [&](const auto& tr) -> ArchitectureSpec {
            using T = std::decay_t<decltype(tr)>;
            if constexpr (std::is_same_v<T, transform::None>) {
                return spec;
            } else if constexpr (std::is_same_v<T, transform::XnorBaseline>) {
                return detail::xnor_baseline(spec);
            } else if constexpr (std::is_same_v<T, transform::FpResidual>) {
                return detail::fp_residual(spec);
            } else if constexpr (std::is_same_v<T, transform::FpResidualPlusFc2>) {
                auto s = detail::fp_residual(spec);
                std::vector<std::size_t> fcs;
                for (std::size_t i = 0; i < n; ++i)
                    if (s.layers[i].kind == LayerKind::linear) fcs.push_back(i);
                if (fcs.size() < 3) throw ConfigError("fp_residual_plus_fc2 needs at least three linear layers");
                detail::set_layer(s.layers[fcs[1]], Precision::fp32(), Precision::fp32());
                return s;
            } else if constexpr (std::is_same_v<T, transform::InterLayer>) {
                const std::size_t interior = n >= 2 ? n - 2 : 0;
                if (tr.fp_layers > interior)
                    throw ConfigError("inter_layer asks for " + std::to_string(tr.fp_layers) +
                                      " full-precision layers but only " + std::to_string(interior) +
                                      " interior layers exist");
                auto s = detail::xnor_baseline(spec);
                const std::size_t first_fp = n - 1 - tr.fp_layers;
                for (std::size_t i = first_fp; i + 1 < n; ++i)
                    detail::set_layer(s.layers[i], Precision::fp32(), Precision::fp32());
                for (auto& e : s.residuals) {
                    if (e.kind == ResidualKind::conv1x1 && e.from_layer >= first_fp) {
                        e.weight_precision = Precision::fp32();
                        e.activation_precision = Precision::fp32();
                    }
                }
                return s;
            } else if constexpr (std::is_same_v<T, transform::IntraLayer>) {
                if (!(tr.fraction >= 0.0 && tr.fraction <= 1.0))
                    throw ConfigError("intra_layer fraction must lie in [0,1]");
                auto s = detail::xnor_baseline(spec);
                for (std::size_t i = 1; i + 1 < n; ++i)
                    if (s.layers[i].kind == LayerKind::conv2d) s.layers[i].fp_filter_fraction = tr.fraction;
                return s;
            } else {
                static_assert(std::is_same_v<T, transform::KBit>);
                const auto p = Precision::int_bits(tr.bits);
                if (p.is_fp32()) throw ConfigError("kbit transform needs fewer than 32 bits");
                auto s = detail::xnor_baseline(spec);
                for (std::size_t i = 1; i + 1 < n; ++i) s.layers[i].weight_precision = p;
                for (auto& e : s.residuals)
                    if (e.kind == ResidualKind::conv1x1) e.weight_precision = p;
                return s;
            }
        },
        t);
    if (!std::holds_alternative<transform::None>(t)) {
        const std::string suffix = "/" + transform_name(t);
        if (!spec.name.ends_with(suffix)) out.name = spec.name + suffix;
    }
    require_valid(out);
    return out;
}

} // namespace hybridnet

#endif
