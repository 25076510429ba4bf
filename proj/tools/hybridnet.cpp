// SPDX-License-Identifier: Apache-2.0
//
// hybridnet: describe architectures, reproduce cost tables, self-check the
// binary kernels and run toy training.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "hybridnet/hybridnet.hpp"

#ifndef HYBRIDNET_PRESET_DIR
#define HYBRIDNET_PRESET_DIR "presets"
#endif

namespace fs = std::filesystem;
using namespace hybridnet;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfigError = 2 };

fs::path preset_dir() {
    if (const char* env = std::getenv("HYBRIDNET_PRESETS"); env && *env) return env;
    return HYBRIDNET_PRESET_DIR;
}

// A config argument is a file path or the name of a preset.
ArchConfig resolve_config(const std::string& arg) {
    if (fs::is_regular_file(arg)) return load_config(arg);
    for (const auto& candidate : {preset_dir() / arg, preset_dir() / (arg + ".json")})
        if (fs::is_regular_file(candidate)) return load_config(candidate.string());
    throw ConfigError("no config file or preset named '" + arg + "' (preset dir: " + preset_dir().string() + ")");
}

EnergyChart load_chart(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open chart '" + path + "'");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("chart is not valid JSON: ") + e.what());
    }
    EnergyChart c;
    auto read = [&](const char* key, double& dst) {
        if (!j.contains(key)) return;
        if (!j[key].is_number()) throw ConfigError(std::string("chart field '") + key + "' must be a number");
        dst = j[key].get<double>();
    };
    read("fp_access_pj", c.fp_access_pj);
    read("bin_access_pj", c.bin_access_pj);
    read("fp_mac_pj", c.fp_mac_pj);
    read("bin_mac_pj", c.bin_mac_pj);
    return c;
}

struct ChartFlags {
    std::string file;
    double fp_access = -1, bin_access = -1, fp_mac = -1, bin_mac = -1;
    bool no_alpha_storage = false;

    void attach(CLI::App* app) {
        app->add_option("--chart", file, "JSON energy chart (fp_access_pj, bin_access_pj, fp_mac_pj, bin_mac_pj)");
        app->add_option("--fp-access-pj", fp_access, "energy of a 32-bit memory access");
        app->add_option("--bin-access-pj", bin_access, "energy of a binary memory access");
        app->add_option("--fp-mac-pj", fp_mac, "energy of a 32-bit MAC");
        app->add_option("--bin-mac-pj", bin_mac, "energy of a binary MAC");
        app->add_flag("--no-alpha-storage", no_alpha_storage, "do not count 32-bit scales in weight storage");
    }

    EnergyChart chart() const {
        EnergyChart c = file.empty() ? EnergyChart{} : load_chart(file);
        if (fp_access >= 0) c.fp_access_pj = fp_access;
        if (bin_access >= 0) c.bin_access_pj = bin_access;
        if (fp_mac >= 0) c.fp_mac_pj = fp_mac;
        if (bin_mac >= 0) c.bin_mac_pj = bin_mac;
        if (!c.valid()) throw ConfigError("energy chart entries must be positive");
        return c;
    }
    CostOptions options() const { return {!no_alpha_storage}; }
};

int cmd_describe(const std::string& cfg_arg, const std::string& format) {
    const auto cfg = resolve_config(cfg_arg);
    const auto spec = build(cfg);
    if (format == "json") {
        std::cout << to_json(spec).dump(2) << '\n';
        return kOk;
    }
    std::vector<std::vector<std::string>> rows = {{"#", "kind", "I", "O", "k", "N", "M", "stride", "pool", "weights",
                                                   "activations", "p"}};
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
        const auto& l = spec.layers[i];
        rows.push_back({std::to_string(i), to_string(l.kind), std::to_string(l.in_channels),
                        std::to_string(l.out_channels), std::to_string(l.kernel_size), std::to_string(l.input_spatial),
                        std::to_string(l.output_spatial), std::to_string(l.stride), std::to_string(l.pool_after),
                        l.weight_precision.name(), l.activation_precision.name(), fixed(l.fp_filter_fraction, 2)});
    }
    std::cout << spec.name << '\n' << detail::render_columns(rows, false);
    if (!spec.residuals.empty()) {
        std::vector<std::vector<std::string>> er = {{"edge", "from", "to", "kind", "weights", "activations"}};
        for (std::size_t e = 0; e < spec.residuals.size(); ++e) {
            const auto& r = spec.residuals[e];
            er.push_back({std::to_string(e), std::to_string(r.from_layer), std::to_string(r.to_layer),
                          to_string(r.kind), r.weight_precision.name(), r.activation_precision.name()});
        }
        std::cout << '\n' << detail::render_columns(er, false);
    }
    return kOk;
}

int cmd_cost(const std::vector<std::string>& cfg_args, const std::string& format, const ChartFlags& flags) {
    const auto chart = flags.chart();
    const auto opts = flags.options();
    std::vector<TableRow> rows;
    nlohmann::json all = nlohmann::json::array();
    for (const auto& arg : cfg_args) {
        const auto cfg = resolve_config(arg);
        const auto report = network_cost(build(cfg), chart, opts);
        const auto row = table_row(cfg, chart, opts);
        rows.push_back(row);
        if (format == "json") {
            all.push_back(to_json(report, row));
        } else if (format == "csv") {
            std::cout << to_csv(report);
        } else if (cfg_args.size() == 1) {
            std::cout << to_table(report) << '\n';
        }
    }
    if (format == "json")
        std::cout << (all.size() == 1 ? all[0] : all).dump(2) << '\n';
    else if (format == "table")
        std::cout << ratio_table(rows);
    return kOk;
}

int cmd_compare(const std::string& a, const std::string& b, const std::string& format, const ChartFlags& flags) {
    const auto chart = flags.chart();
    const auto opts = flags.options();
    const auto ra = network_cost(build(resolve_config(a)), chart, opts);
    const auto rb = network_cost(build(resolve_config(b)), chart, opts);
    const auto r = efficiency_ratio(ra, rb);
    if (format == "json") {
        nlohmann::json j = to_json(r);
        j["schema_version"] = kReportSchemaVersion;
        j["base"] = ra.network;
        j["target"] = rb.network;
        std::cout << j.dump(2) << '\n';
        return kOk;
    }
    std::cout << detail::render_columns({{"base", "target", "E.E", "M.C"},
                                         {ra.network, rb.network, fixed(r.energy_efficiency, 2),
                                          fixed(r.memory_compression, 2)}},
                                        false);
    return kOk;
}

int cmd_verify(const KernelCheckOptions& o) {
    const auto r = verify_kernels(o);
    const std::size_t total = r.dot_cases + r.conv_cases;
    if (r.ok()) {
        std::cout << "all " << total << " cases exact (" << r.dot_cases << " dot, " << r.conv_cases << " conv)\n";
        return kOk;
    }
    std::cout << r.failures << " of " << total << " cases mismatched\n";
    std::cerr << "counterexample:\n" << r.counterexample;
    return kCheckFailed;
}

int cmd_quantize_table(int k, int digits) {
    const auto levels = qk_levels(k);
    std::cout << "# q_k levels, k=" << k << " (" << levels.size() << " levels)\n";
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const double v = levels[i] == 0.0 ? 0.0 : levels[i];
        std::cout << i << ' ' << fixed(v, digits) << '\n';
    }
    return kOk;
}

struct ToyFlags {
    std::string task = "shapes";
    std::string transform = "none";
    double width = 0.5;
    std::size_t hidden = 16;
    std::string checkpoint;
    TrainConfig cfg;
};

int cmd_train_toy(const ToyFlags& f) {
    DataSplit data;
    ArchitectureSpec base;
    if (f.task == "shapes") {
        data = make_shapes({}, f.cfg.seed);
        base = build_resnet(8, f.width, {1, kShapeSide}, kShapeClasses);
    } else {
        data = make_blobs({}, f.cfg.seed);
        base = build_mlp(2, {f.hidden, f.hidden}, 2);
    }
    nlohmann::json tj = {{"kind", f.transform}};
    if (f.transform == "intra_layer") tj["p"] = 0.25;
    if (f.transform == "inter_layer") tj["k_fp"] = 1;
    if (f.transform == "kbit") tj["k"] = 2;
    const auto spec = apply_hybridization(base, transform_from_json(tj));
    auto res = train_toy(spec, data, f.cfg, [](const EpochMetrics& m) {
        std::cout << to_json(m).dump() << '\n';
    });
    if (!f.checkpoint.empty()) save_checkpoint(f.checkpoint, spec, res.params);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hybrid binary/full-precision network toolkit"};
    app.require_subcommand(1);

    std::string cfg_a, cfg_b, format = "table";
    std::vector<std::string> cfgs;
    ChartFlags chart_flags;

    auto* describe = app.add_subcommand("describe", "print the layer graph of a config or preset");
    describe->add_option("config", cfg_a, "config file or preset name")->required();
    describe->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));

    auto* cost = app.add_subcommand("cost", "energy/storage report with ratios against the fp and XNOR references");
    cost->add_option("config", cfgs, "config files or preset names")->required();
    cost->add_option("--format", format, "table, json or csv")->check(CLI::IsMember({"table", "json", "csv"}));
    chart_flags.attach(cost);

    ChartFlags cmp_flags;
    auto* compare = app.add_subcommand("compare", "E.E and M.C of B relative to A");
    compare->add_option("base", cfg_a, "reference config")->required();
    compare->add_option("target", cfg_b, "compared config")->required();
    compare->add_option("--format", format, "table or json")->check(CLI::IsMember({"table", "json"}));
    cmp_flags.attach(compare);

    KernelCheckOptions kopts;
    auto* verify = app.add_subcommand("verify-kernels", "randomized XNOR-popcount checks against unpacked integers");
    verify->add_option("--sizes", kopts.sizes, "dot lengths / conv input sides to draw from")->delimiter(',');
    verify->add_option("--seed", kopts.seed, "random seed");
    verify->add_option("--cases", kopts.cases, "number of cases")->check(CLI::PositiveNumber);
    verify->add_flag("--inject-fault", kopts.inject_fault, "flip one input bit (checks the checker)");

    int k = 2, digits = 4;
    auto* qtable = app.add_subcommand("quantize-table", "print the q_k level grid");
    qtable->add_option("--k", k, "bit width")->check(CLI::Range(1, 24));
    qtable->add_option("--digits", digits, "decimal places")->check(CLI::Range(0, 17));

    ToyFlags toy;
    auto* train = app.add_subcommand("train-toy", "train a toy network and print JSON-lines metrics");
    train->add_option("--task", toy.task, "shapes or blobs")->check(CLI::IsMember({"shapes", "blobs"}));
    train->add_option("--transform", toy.transform, "hybridization transform kind");
    train->add_option("--width", toy.width, "ResNet width multiplier (shapes task)");
    train->add_option("--hidden", toy.hidden, "hidden width (blobs task)");
    train->add_option("--epochs", toy.cfg.epochs, "epochs");
    train->add_option("--batch", toy.cfg.batch_size, "batch size");
    train->add_option("--lr", toy.cfg.learning_rate, "learning rate");
    train->add_option("--seed", toy.cfg.seed, "seed for data, init and shuffling");
    train->add_option("--clip", toy.cfg.clip, "latent weight clamp");
    train->add_option("--checkpoint", toy.checkpoint, "write final parameters here");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*describe) return cmd_describe(cfg_a, format);
        if (*cost) return cmd_cost(cfgs, format, chart_flags);
        if (*compare) return cmd_compare(cfg_a, cfg_b, format, cmp_flags);
        if (*verify) return cmd_verify(kopts);
        if (*qtable) return cmd_quantize_table(k, digits);
        if (*train) return cmd_train_toy(toy);
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kConfigError;
    } catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << '\n';
        return kCheckFailed;
    }
    return kOk;
}
