#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/curation.hpp"

namespace gliopipe {

enum class AdapterKind {
    Registration,
    BiasCorrection,
    SkullStrip,
    Segmentation,
    ClassifierStage2,
    SegObjectExport,
};
const char* to_string(AdapterKind k);
std::optional<AdapterKind> adapter_kind_from_string(const std::string& s);

// One registry entry: either a builtin name or an external command line.
struct AdapterSpec {
    std::string builtin;               // e.g. "identity", "translate", "mock"
    std::vector<std::string> command;  // external process argv
    nlohmann::json params;             // static params merged into invocations
};

// Thresholds of the mock segmenter, in units of the normalized intensities.
struct MockThresholds {
    double seed = 20.0;
    double et = 100.0;
    double nc = 70.0;
    double ed = 20.0;
};

struct RunConfig {
    std::vector<std::filesystem::path> input_roots;
    std::filesystem::path output_root;
    std::optional<std::filesystem::path> ruleset_path;
    std::optional<std::filesystem::path> atlas_path;
    std::map<AdapterKind, AdapterSpec> adapters;
    int workers = 1;
    double adapter_timeout_sec = 3600.0;
    double alpha = 0.05;
    double bin_width = 25.0;
    MockThresholds mock_thresholds;
    bool radiomics = true;

    Ruleset ruleset;  // loaded from ruleset_path or defaults

    // Strict parse: unknown keys are a ConfigError; validation happens before
    // any session runs. Environment overrides: GLIOPIPE_WORKERS and
    // GLIOPIPE_ADAPTER_TIMEOUT only.
    static RunConfig load(const std::filesystem::path& config_file);
    static RunConfig from_json(const nlohmann::json& j,
                               const std::filesystem::path& base_dir);
};

}  // namespace gliopipe
