// SPDX-License-Identifier: Apache-2.0

#ifndef HYBRIDNET_ARCH_CONFIG_HPP
#define HYBRIDNET_ARCH_CONFIG_HPP

#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "hybridnet/arch_model.hpp"

namespace hybridnet {

/// Declarative description of one network as stored in a config file:
///
///   {"family": "vgg", "depth": 19, "width_mult": 1, "input": [3, 32], "classes": 100,
///    "transform": {"kind": "intra_layer", "p": 0.1}, "fc_width": 4096, "scale_stem": true}
///
/// `fc_width` and `scale_stem` only apply to VGG and are optional.
struct ArchConfig {
    std::string name;
    Family family = Family::vgg;
    int depth = 19;
    double width_mult = 1.0;
    InputShape input{3, 32};
    std::size_t classes = 100;
    Transform transform = transform::None{};
    std::size_t fc_width = 4096;
    bool scale_stem = true;
};

inline ArchitectureSpec build_base(const ArchConfig& c) {
    switch (c.family) {
    case Family::vgg: return build_vgg(c.depth, c.width_mult, c.input, c.classes, {c.fc_width, c.scale_stem});
    case Family::resnet: return build_resnet(c.depth, c.width_mult, c.input, c.classes);
    default: throw ConfigError("config family must be 'vgg' or 'resnet'");
    }
}

inline ArchitectureSpec build(const ArchConfig& c) {
    auto spec = apply_hybridization(build_base(c), c.transform);
    if (!c.name.empty()) spec.name = c.name;
    return spec;
}

/// Full-precision network of the same family, depth and input at unit width:
/// the denominator of every "relative to full precision" ratio.
inline ArchConfig fp_reference(const ArchConfig& c) {
    ArchConfig r = c;
    r.name.clear();
    r.width_mult = 1.0;
    r.scale_stem = true;
    r.transform = transform::None{};
    return r;
}

inline ArchConfig xnor_reference(const ArchConfig& c) {
    ArchConfig r = fp_reference(c);
    r.transform = transform::XnorBaseline{};
    return r;
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline nlohmann::json transform_to_json(const Transform& t) {
    nlohmann::json j;
    j["kind"] = transform_name(t);
    if (auto* il = std::get_if<transform::InterLayer>(&t)) j["k_fp"] = il->fp_layers;
    if (auto* ia = std::get_if<transform::IntraLayer>(&t)) j["p"] = ia->fraction;
    if (auto* kb = std::get_if<transform::KBit>(&t)) j["k"] = kb->bits;
    return j;
}

inline Transform transform_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
        throw ConfigError("transform must be an object with a string 'kind'");
    const auto kind = j["kind"].get<std::string>();
    auto num = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key) || !j[key].is_number())
            throw ConfigError("transform '" + kind + "' needs numeric field '" + key + "'");
        return j[key];
    };
    if (kind == "none") return transform::None{};
    if (kind == "xnor_baseline") return transform::XnorBaseline{};
    if (kind == "fp_residual") return transform::FpResidual{};
    if (kind == "fp_residual_plus_fc2") return transform::FpResidualPlusFc2{};
    if (kind == "inter_layer") {
        const auto& v = num("k_fp");
        if (!v.is_number_integer() || v.get<long long>() < 0) throw ConfigError("k_fp must be a non-negative integer");
        return transform::InterLayer{v.get<std::size_t>()};
    }
    if (kind == "intra_layer") return transform::IntraLayer{num("p").get<double>()};
    if (kind == "kbit") {
        const auto& v = num("k");
        if (!v.is_number_integer()) throw ConfigError("k must be an integer");
        return transform::KBit{v.get<int>()};
    }
    throw ConfigError("unknown transform kind '" + kind + "'");
}

inline nlohmann::json to_json(const ArchConfig& c) {
    nlohmann::json j;
    if (!c.name.empty()) j["name"] = c.name;
    j["family"] = to_string(c.family);
    j["depth"] = c.depth;
    j["width_mult"] = c.width_mult;
    j["input"] = {c.input.channels, c.input.side};
    j["classes"] = c.classes;
    j["transform"] = transform_to_json(c.transform);
    if (c.family == Family::vgg) {
        j["fc_width"] = c.fc_width;
        j["scale_stem"] = c.scale_stem;
    }
    return j;
}

inline ArchConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    auto need = [&](const char* key) -> const nlohmann::json& {
        if (!j.contains(key)) throw ConfigError(std::string("config is missing '") + key + "'");
        return j[key];
    };
    ArchConfig c;
    if (j.contains("name")) {
        if (!j["name"].is_string()) throw ConfigError("'name' must be a string");
        c.name = j["name"].get<std::string>();
    }
    const auto& fam = need("family");
    if (!fam.is_string()) throw ConfigError("'family' must be a string");
    const auto f = fam.get<std::string>();
    if (f == "vgg")
        c.family = Family::vgg;
    else if (f == "resnet")
        c.family = Family::resnet;
    else
        throw ConfigError("unknown family '" + f + "'");

    const auto& depth = need("depth");
    if (!depth.is_number_integer()) throw ConfigError("'depth' must be an integer");
    c.depth = depth.get<int>();

    if (j.contains("width_mult")) {
        if (!j["width_mult"].is_number()) throw ConfigError("'width_mult' must be a number");
        c.width_mult = j["width_mult"].get<double>();
    }
    const auto& in = need("input");
    if (!in.is_array() || in.size() != 2 || !in[0].is_number_unsigned() || !in[1].is_number_unsigned())
        throw ConfigError("'input' must be [channels, side]");
    c.input = {in[0].get<std::size_t>(), in[1].get<std::size_t>()};

    const auto& cls = need("classes");
    if (!cls.is_number_unsigned()) throw ConfigError("'classes' must be a positive integer");
    c.classes = cls.get<std::size_t>();

    if (j.contains("transform")) c.transform = transform_from_json(j["transform"]);
    if (j.contains("fc_width")) {
        if (!j["fc_width"].is_number_unsigned()) throw ConfigError("'fc_width' must be a positive integer");
        c.fc_width = j["fc_width"].get<std::size_t>();
    }
    if (j.contains("scale_stem")) {
        if (!j["scale_stem"].is_boolean()) throw ConfigError("'scale_stem' must be a boolean");
        c.scale_stem = j["scale_stem"].get<bool>();
    }
    return c;
}

inline ArchConfig parse_config(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    return config_from_json(j);
}

inline ArchConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str());
}

inline std::string emit_config(const ArchConfig& c) { return to_json(c).dump(2); }

// Full layer-graph dump, used by `describe` and for hashing checkpoints.
inline nlohmann::json to_json(const ArchitectureSpec& s) {
    nlohmann::json j;
    j["name"] = s.name;
    j["family"] = to_string(s.family);
    j["input"] = {s.input_channels, s.input_side};
    j["classes"] = s.num_classes;
    j["width_mult"] = s.width_multiplier;
    j["head"] = to_string(s.head);
    auto& layers = j["layers"] = nlohmann::json::array();
    for (const auto& l : s.layers) {
        layers.push_back({{"kind", to_string(l.kind)},
                          {"in", l.in_channels},
                          {"out", l.out_channels},
                          {"k", l.kernel_size},
                          {"n", l.input_spatial},
                          {"m", l.output_spatial},
                          {"stride", l.stride},
                          {"pad", l.padding},
                          {"pool", l.pool_after},
                          {"weights", l.weight_precision.name()},
                          {"activations", l.activation_precision.name()},
                          {"fp_fraction", l.fp_filter_fraction}});
    }
    auto& res = j["residuals"] = nlohmann::json::array();
    for (const auto& e : s.residuals) {
        res.push_back({{"from", e.from_layer},
                       {"to", e.to_layer},
                       {"kind", to_string(e.kind)},
                       {"weights", e.weight_precision.name()},
                       {"activations", e.activation_precision.name()}});
    }
    return j;
}

/// FNV-1a over the canonical JSON dump.
inline std::uint64_t spec_hash(const ArchitectureSpec& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char ch : to_json(s).dump()) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    return h;
}

} // namespace hybridnet

#endif
