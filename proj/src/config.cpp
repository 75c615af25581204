#include "dualvit/config.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>

namespace dualvit {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
    for (const auto& [key, _] : obj.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
            std::string list;
            for (const char* a : allowed) list += (list.empty() ? "" : ", ") + std::string(a);
            throw ConfigError(where + ": unknown key '" + key + "' (allowed: " + list + ")");
        }
    }
}

std::size_t positive(const json& obj, const char* key, const std::string& where) {
    const auto& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() <= 0) {
        throw ConfigError(where + "." + key + " must be a positive integer, got " + v.dump());
    }
    return v.get<std::size_t>();
}

StageSpec stage_from_json(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be an object");
    reject_unknown(j, {"depth", "heads", "channels", "ratio_pixel", "ratio_semantic", "patch", "kind"}, where);
    for (const char* k : {"depth", "heads", "channels", "ratio_pixel", "ratio_semantic", "patch", "kind"}) {
        if (!j.contains(k)) throw ConfigError(where + ": missing '" + k + "'");
    }
    StageSpec s;
    s.depth = positive(j, "depth", where);
    s.heads = positive(j, "heads", where);
    s.channels = positive(j, "channels", where);
    s.ratio_pixel = positive(j, "ratio_pixel", where);
    s.ratio_semantic = positive(j, "ratio_semantic", where);
    s.patch = positive(j, "patch", where);
    const auto& kind = j.at("kind");
    if (kind == "dual") {
        s.kind = BlockKind::Dual;
    } else if (kind == "merge") {
        s.kind = BlockKind::Merge;
    } else {
        throw ConfigError(where + ".kind must be \"dual\" or \"merge\", got " + kind.dump());
    }
    return s;
}

}  // namespace

json config_to_json(const ModelConfig& c) {
    json stages = json::array();
    for (const auto& s : c.stages) {
        stages.push_back({{"depth", s.depth},
                          {"heads", s.heads},
                          {"channels", s.channels},
                          {"ratio_pixel", s.ratio_pixel},
                          {"ratio_semantic", s.ratio_semantic},
                          {"patch", s.patch},
                          {"kind", s.kind == BlockKind::Dual ? "dual" : "merge"}});
    }
    return {{"name", c.name},          {"stages", stages},         {"m", c.semantic_tokens},
            {"num_classes", c.num_classes}, {"resolution", c.resolution}, {"pos_embed", c.pos_embed},
            {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    reject_unknown(j, {"preset", "name", "stages", "m", "num_classes", "resolution", "pos_embed", "seed"}, "config");

    ModelConfig c;
    if (j.contains("preset")) {
        if (!j["preset"].is_string()) throw ConfigError("config.preset must be a string");
        c = preset_config(j["preset"].get<std::string>());
    } else if (!j.contains("stages")) {
        throw ConfigError("config needs either 'preset' or 'stages'");
    }
    if (j.contains("name")) {
        if (!j["name"].is_string()) throw ConfigError("config.name must be a string");
        c.name = j["name"].get<std::string>();
    }
    if (j.contains("stages")) {
        const auto& st = j["stages"];
        if (!st.is_array() || st.size() != kNumStages) throw ConfigError("config.stages must be an array of 4 stages");
        for (std::size_t i = 0; i < kNumStages; ++i) c.stages[i] = stage_from_json(st[i], "config.stages[" + std::to_string(i) + "]");
    }
    if (j.contains("m")) c.semantic_tokens = positive(j, "m", "config");
    if (j.contains("num_classes")) c.num_classes = positive(j, "num_classes", "config");
    if (j.contains("resolution")) c.resolution = positive(j, "resolution", "config");
    if (j.contains("pos_embed")) {
        if (!j["pos_embed"].is_boolean()) throw ConfigError("config.pos_embed must be a boolean");
        c.pos_embed = j["pos_embed"].get<bool>();
    }
    if (j.contains("seed")) {
        if (!j["seed"].is_number_unsigned()) throw ConfigError("config.seed must be a non-negative integer");
        c.seed = j["seed"].get<std::uint64_t>();
    }
    c.validate();
    return c;
}

ModelConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
    }
    return config_from_json(j);
}

ModelConfig apply_overrides(const ModelConfig& config, const std::vector<std::string>& overrides) {
    json j = config_to_json(config);
    for (const auto& ov : overrides) {
        const auto eq = ov.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + ov + "' is not key=value");
        const std::string key = ov.substr(0, eq);
        const std::string text = ov.substr(eq + 1);
        json value;
        try {
            value = json::parse(text);
        } catch (const json::parse_error&) {
            value = text;
        }
        if (key == "preset") {
            if (!value.is_string()) throw ConfigError("override: preset must be a name");
            j = config_to_json(preset_config(value.get<std::string>()));
            continue;
        }
        std::string pointer = "/" + key;
        std::replace(pointer.begin(), pointer.end(), '.', '/');
        try {
            const json::json_pointer ptr(pointer);
            // only existing fields may be overridden
            if (!j.contains(ptr)) throw ConfigError("override: unknown key '" + key + "'");
            j[ptr] = value;
        } catch (const json::exception&) {
            throw ConfigError("override: unknown key '" + key + "'");
        }
    }
    return config_from_json(j);
}

}  // namespace dualvit
