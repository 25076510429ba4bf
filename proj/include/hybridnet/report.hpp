// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_REPORT_HPP
#define HYBRIDNET_REPORT_HPP

#include <algorithm>
#include <cstdio>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "hybridnet/arch_config.hpp"
#include "hybridnet/cost_model.hpp"

namespace hybridnet {

inline constexpr int kReportSchemaVersion = 1;

/// The four ratio columns of a results table row.
struct TableRow {
    std::string network;
    EfficiencyRatio vs_fp;
    EfficiencyRatio vs_xnor;
};

inline TableRow table_row(const ArchConfig& cfg, const EnergyChart& chart = {}, const CostOptions& opts = {}) {
    const auto target = network_cost(build(cfg), chart, opts);
    const auto fp = network_cost(build(fp_reference(cfg)), chart, opts);
    const auto xnor = network_cost(build(xnor_reference(cfg)), chart, opts);
    return {target.network, efficiency_ratio(fp, target), efficiency_ratio(xnor, target)};
}

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const OpCounts& c) {
    return {{"mem_fp", c.mem_fp}, {"mem_bin", c.mem_bin}, {"mac_fp", c.mac_fp}, {"mac_bin", c.mac_bin}};
}

inline nlohmann::json to_json(const EfficiencyRatio& r) {
    return {{"energy_efficiency", r.energy_efficiency}, {"memory_compression", r.memory_compression}};
}

inline nlohmann::json to_json(const CostReport& r, const std::optional<TableRow>& row = std::nullopt) {
    nlohmann::json j;
    j["schema_version"] = kReportSchemaVersion;
    j["network"] = r.network;
    auto& layers = j["layers"] = nlohmann::json::array();
    for (const auto& l : r.per_layer) {
        layers.push_back({{"label", l.label},
                          {"index", l.index},
                          {"residual", l.residual},
                          {"counts", to_json(l.counts)},
                          {"energy_pj", l.energy_pj},
                          {"storage_bits", l.storage_bits}});
    }
    j["total_energy_pj"] = r.total_energy_pj;
    j["total_storage_bits"] = r.total_storage_bits;
    if (row) {
        j["ratios"] = {{"ee_fp", row->vs_fp.energy_efficiency},
                       {"ee_xnor", row->vs_xnor.energy_efficiency},
                       {"mc_fp", row->vs_fp.memory_compression},
                       {"mc_xnor", row->vs_xnor.memory_compression}};
    }
    return j;
}

// ---------------------------------------------------------------------------
// Aligned-column text (CSV and table share the layout)
// ---------------------------------------------------------------------------

namespace detail {

inline std::string render_columns(const std::vector<std::vector<std::string>>& rows, bool csv) {
    std::vector<std::size_t> width;
    for (const auto& r : rows) {
        width.resize(std::max(width.size(), r.size()));
        for (std::size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
    }
    std::ostringstream out;
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) {
            const bool last = i + 1 == r.size();
            if (csv) {
                out << r[i] << (last ? "" : ",");
                if (!last) out << std::string(width[i] - r[i].size(), ' ');
            } else {
                out << r[i];
                if (!last) out << std::string(width[i] - r[i].size() + 2, ' ');
            }
        }
        out << '\n';
    }
    return out.str();
}

inline std::vector<std::vector<std::string>> report_rows(const CostReport& r) {
    std::vector<std::vector<std::string>> rows;
    rows.push_back({"layer", "mem_fp", "mem_bin", "mac_fp", "mac_bin", "energy_pj", "storage_bits"});
    for (const auto& l : r.per_layer) {
        rows.push_back({l.label, fixed(l.counts.mem_fp, 1), fixed(l.counts.mem_bin, 1), fixed(l.counts.mac_fp, 1),
                        fixed(l.counts.mac_bin, 1), fixed(l.energy_pj, 1), std::to_string(l.storage_bits)});
    }
    rows.push_back({"total", "", "", "", "", fixed(r.total_energy_pj, 1), std::to_string(r.total_storage_bits)});
    return rows;
}

} // namespace detail

inline std::string to_csv(const CostReport& r) {
    return "# schema_version=" + std::to_string(kReportSchemaVersion) + "\n" +
           detail::render_columns(detail::report_rows(r), true);
}

inline std::string to_table(const CostReport& r) { return detail::render_columns(detail::report_rows(r), false); }

inline std::string ratio_table(const std::vector<TableRow>& rows) {
    std::vector<std::vector<std::string>> cells;
    cells.push_back({"Network", "E.E (FP)", "E.E (XNOR)", "M.C (FP)", "M.C (XNOR)"});
    for (const auto& r : rows) {
        cells.push_back({r.network, fixed(r.vs_fp.energy_efficiency, 2), fixed(r.vs_xnor.energy_efficiency, 2),
                         fixed(r.vs_fp.memory_compression, 2), fixed(r.vs_xnor.memory_compression, 2)});
    }
    return detail::render_columns(cells, false);
}

} // namespace hybridnet

#endif
