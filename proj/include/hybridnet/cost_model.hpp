// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_COST_MODEL_HPP
#define HYBRIDNET_COST_MODEL_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "hybridnet/arch_model.hpp"

namespace hybridnet {

/// Memory accesses and MACs of one layer, split by operand width.
///
/// k-bit operands (1 < k < 32) are folded into the fp32 columns as fractional
/// counts of k/32 each, so a 2-bit weight read costs 2/32 of a 32-bit read.
struct OpCounts {
    double mem_fp = 0;
    double mem_bin = 0;
    double mac_fp = 0;
    double mac_bin = 0;

    OpCounts& operator+=(const OpCounts& o) {
        mem_fp += o.mem_fp;
        mem_bin += o.mem_bin;
        mac_fp += o.mac_fp;
        mac_bin += o.mac_bin;
        return *this;
    }
    friend OpCounts operator+(OpCounts a, const OpCounts& b) { return a += b; }
    friend bool operator==(const OpCounts&, const OpCounts&) = default;
};

/// Energy per operation in picojoules (10 nm CMOS projections).
struct EnergyChart {
    double fp_access_pj = 80.0;
    double bin_access_pj = 2.5;
    double fp_mac_pj = 3.25;
    double bin_mac_pj = 0.1;

    bool valid() const { return fp_access_pj > 0 && bin_access_pj > 0 && fp_mac_pj > 0 && bin_mac_pj > 0; }
};

struct CostOptions {
    bool alpha_storage = true; // store one fp32 scale per quantized filter
};

struct LayerCost {
    std::string label;
    std::size_t index = 0;
    bool residual = false;
    OpCounts counts;
    double energy_pj = 0;
    std::uint64_t storage_bits = 0;
};

struct CostReport {
    std::string network;
    std::vector<LayerCost> per_layer;
    double total_energy_pj = 0;
    std::uint64_t total_storage_bits = 0;
};

struct EfficiencyRatio {
    double energy_efficiency = 0;
    double memory_compression = 0;
};

namespace detail {

inline void add_access(OpCounts& c, int bits, double n) {
    if (bits >= 32)
        c.mem_fp += n;
    else if (bits == 1)
        c.mem_bin += n;
    else
        c.mem_fp += n * bits / 32.0;
}

inline void add_mac(OpCounts& c, int bits, double n) {
    if (bits >= 32)
        c.mac_fp += n;
    else if (bits == 1)
        c.mac_bin += n;
    else
        c.mac_fp += n * bits / 32.0;
}

// One homogeneous slice of a layer with `filters` output maps.
inline OpCounts slice_counts(const LayerSpec& l, std::size_t filters, Precision w, Precision a) {
    OpCounts c;
    if (filters == 0) return c;
    const double I = static_cast<double>(l.in_channels);
    const double O = static_cast<double>(filters);
    const double k2 = static_cast<double>(l.kernel_size * l.kernel_size);
    const double N2 = static_cast<double>(l.input_spatial * l.input_spatial);
    const double M2 = static_cast<double>(l.output_spatial * l.output_spatial);
    add_access(c, a.bits(), N2 * I);
    add_access(c, w.bits(), k2 * I * O);
    add_access(c, a.bits(), M2 * O);
    // A MAC runs at the width of its wider operand.
    add_mac(c, std::max(w.bits(), a.bits()), M2 * I * k2 * O);
    if (w.is_quantized()) {
        c.mem_fp += O;      // one alpha read per filter bank
        c.mac_fp += M2 * O; // one alpha multiply per output
    }
    return c;
}

} // namespace detail

/// Operation counts for one weight layer (residual conv1x1 edges go through
/// `edge_layer` first and are costed the same way).
inline OpCounts layer_op_counts(const LayerSpec& l) {
    if (l.kind == LayerKind::conv2d) {
        auto m = conv_output_side(l.input_spatial, l.kernel_size, l.stride, l.padding);
        if (!m || *m != l.output_spatial) throw ContractError("layer shapes are not inferred");
    }
    const std::size_t fp = l.weight_precision.is_quantized() ? l.fp_filter_count() : 0;
    auto c = detail::slice_counts(l, fp, Precision::fp32(), l.activation_precision);
    c += detail::slice_counts(l, l.out_channels - fp, l.weight_precision, l.activation_precision);
    return c;
}

inline double layer_energy(const OpCounts& c, const EnergyChart& chart = {}) {
    return c.mem_fp * chart.fp_access_pj + c.mem_bin * chart.bin_access_pj + c.mac_fp * chart.fp_mac_pj +
           c.mac_bin * chart.bin_mac_pj;
}

/// Weight storage: bits per weight times I*O*k^2, plus a 32-bit alpha per quantized filter.
inline std::uint64_t layer_storage_bits(const LayerSpec& l, const CostOptions& opts = {}) {
    const std::uint64_t per_filter = static_cast<std::uint64_t>(l.in_channels) * l.kernel_size * l.kernel_size;
    if (!l.weight_precision.is_quantized()) return 32 * per_filter * l.out_channels;
    const std::uint64_t fp = l.fp_filter_count();
    const std::uint64_t q = l.out_channels - fp;
    std::uint64_t bits = 32 * per_filter * fp + static_cast<std::uint64_t>(l.weight_precision.bits()) * per_filter * q;
    if (opts.alpha_storage) bits += 32 * q;
    return bits;
}

/// Costs every weight layer and every conv1x1 residual edge; identity edges are free.
inline CostReport network_cost(const ArchitectureSpec& spec, const EnergyChart& chart = {},
                               const CostOptions& opts = {}) {
    require_valid(spec);
    if (!chart.valid()) throw ConfigError("energy chart entries must be positive");
    CostReport r;
    r.network = spec.name;
    auto add = [&](const LayerSpec& l, std::string label, std::size_t idx, bool residual) {
        LayerCost lc;
        lc.label = std::move(label);
        lc.index = idx;
        lc.residual = residual;
        lc.counts = layer_op_counts(l);
        lc.energy_pj = layer_energy(lc.counts, chart);
        lc.storage_bits = layer_storage_bits(l, opts);
        r.total_energy_pj += lc.energy_pj;
        r.total_storage_bits += lc.storage_bits;
        r.per_layer.push_back(std::move(lc));
    };
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        add(l, (l.kind == LayerKind::conv2d ? "conv" : "fc") + std::to_string(i), i, false);
        for (std::size_t e = 0; e < spec.residuals.size(); ++e) {
            const auto& edge = spec.residuals[e];
            if (edge.to_layer != i || edge.kind != ResidualKind::conv1x1) continue;
            add(edge_layer(spec, edge), "res" + std::to_string(edge.from_layer) + "-" + std::to_string(i), e, true);
        }
    }
    return r;
}

/// base / target; values above 1 mean the target network is cheaper.
inline EfficiencyRatio efficiency_ratio(const CostReport& base, const CostReport& target) {
    if (!(target.total_energy_pj > 0) || target.total_storage_bits == 0 || !(base.total_energy_pj > 0) ||
        base.total_storage_bits == 0)
        throw ContractError("efficiency ratio is undefined for a zero-cost network");
    return {base.total_energy_pj / target.total_energy_pj,
            static_cast<double>(base.total_storage_bits) / static_cast<double>(target.total_storage_bits)};
}

} // namespace hybridnet

#endif
