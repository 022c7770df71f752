#include "gliopipe/config.hpp"

#include <cstdlib>

#include "gliopipe/util.hpp"

namespace gliopipe {

const char* to_string(AdapterKind k) {
    switch (k) {
        case AdapterKind::Registration: return "Registration";
        case AdapterKind::BiasCorrection: return "BiasCorrection";
        case AdapterKind::SkullStrip: return "SkullStrip";
        case AdapterKind::Segmentation: return "Segmentation";
        case AdapterKind::ClassifierStage2: return "ClassifierStage2";
        case AdapterKind::SegObjectExport: return "SegObjectExport";
    }
    return "?";
}

std::optional<AdapterKind> adapter_kind_from_string(const std::string& s) {
    for (AdapterKind k : {AdapterKind::Registration, AdapterKind::BiasCorrection,
                          AdapterKind::SkullStrip, AdapterKind::Segmentation,
                          AdapterKind::ClassifierStage2, AdapterKind::SegObjectExport})
        if (s == to_string(k)) return k;
    return std::nullopt;
}

namespace {

void require_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                  const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
    std::filesystem::path path(p);
    return path.is_absolute() ? path : base / path;
}

}  // namespace

RunConfig RunConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    require_keys(j,
                 {"input_roots", "output_root", "ruleset", "atlas", "adapters", "workers",
                  "adapter_timeout_sec", "alpha", "bin_width", "mock_thresholds", "radiomics"},
                 "config");
    RunConfig cfg;
    if (j.contains("input_roots"))
        for (const auto& r : j["input_roots"])
            cfg.input_roots.push_back(resolve(base_dir, r.get<std::string>()));
    if (!j.contains("output_root")) throw ConfigError("config needs output_root");
    cfg.output_root = resolve(base_dir, j["output_root"].get<std::string>());
    if (j.contains("ruleset")) cfg.ruleset_path = resolve(base_dir, j["ruleset"].get<std::string>());
    if (j.contains("atlas")) cfg.atlas_path = resolve(base_dir, j["atlas"].get<std::string>());
    if (j.contains("workers")) cfg.workers = j["workers"].get<int>();
    if (j.contains("adapter_timeout_sec"))
        cfg.adapter_timeout_sec = j["adapter_timeout_sec"].get<double>();
    if (j.contains("alpha")) cfg.alpha = j["alpha"].get<double>();
    if (j.contains("bin_width")) cfg.bin_width = j["bin_width"].get<double>();
    if (j.contains("radiomics")) cfg.radiomics = j["radiomics"].get<bool>();
    if (j.contains("mock_thresholds")) {
        const auto& t = j["mock_thresholds"];
        require_keys(t, {"seed", "et", "nc", "ed"}, "mock_thresholds");
        if (t.contains("seed")) cfg.mock_thresholds.seed = t["seed"].get<double>();
        if (t.contains("et")) cfg.mock_thresholds.et = t["et"].get<double>();
        if (t.contains("nc")) cfg.mock_thresholds.nc = t["nc"].get<double>();
        if (t.contains("ed")) cfg.mock_thresholds.ed = t["ed"].get<double>();
    }
    if (j.contains("adapters")) {
        if (!j["adapters"].is_object()) throw ConfigError("adapters must be an object");
        for (auto it = j["adapters"].begin(); it != j["adapters"].end(); ++it) {
            const auto kind = adapter_kind_from_string(it.key());
            if (!kind) throw ConfigError("unknown adapter kind '" + it.key() + "'");
            require_keys(it.value(), {"builtin", "command", "params"},
                         "adapter '" + it.key() + "'");
            AdapterSpec spec;
            if (it.value().contains("builtin"))
                spec.builtin = it.value()["builtin"].get<std::string>();
            if (it.value().contains("command"))
                spec.command = it.value()["command"].get<std::vector<std::string>>();
            if (it.value().contains("params")) spec.params = it.value()["params"];
            if (spec.builtin.empty() == spec.command.empty())
                throw ConfigError("adapter '" + it.key() +
                                  "' needs exactly one of builtin or command");
            cfg.adapters[*kind] = std::move(spec);
        }
    }

    if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
    if (cfg.adapter_timeout_sec <= 0) throw ConfigError("adapter_timeout_sec must be positive");
    if (cfg.alpha <= 0 || cfg.alpha >= 1) throw ConfigError("alpha must be in (0,1)");
    if (cfg.bin_width <= 0) throw ConfigError("bin_width must be positive");

    if (const char* w = std::getenv("GLIOPIPE_WORKERS")) {
        cfg.workers = std::atoi(w);
        if (cfg.workers < 1) throw ConfigError("GLIOPIPE_WORKERS must be >= 1");
    }
    if (const char* t = std::getenv("GLIOPIPE_ADAPTER_TIMEOUT")) {
        cfg.adapter_timeout_sec = std::atof(t);
        if (cfg.adapter_timeout_sec <= 0)
            throw ConfigError("GLIOPIPE_ADAPTER_TIMEOUT must be positive");
    }

    if (cfg.ruleset_path) {
        nlohmann::json rj;
        try {
            rj = nlohmann::json::parse(read_text_file(*cfg.ruleset_path));
        } catch (const std::exception& e) {
            throw ConfigError("cannot parse ruleset " + cfg.ruleset_path->string() + ": " +
                              e.what());
        }
        try {
            cfg.ruleset = Ruleset::from_json(rj);
        } catch (const FormatError& e) {
            throw ConfigError(e.what());
        }
    } else {
        cfg.ruleset = Ruleset::defaults();
    }
    return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& config_file) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(config_file));
    } catch (const std::exception& e) {
        throw ConfigError("cannot parse config " + config_file.string() + ": " + e.what());
    }
    return from_json(j, config_file.parent_path());
}

}  // namespace gliopipe
