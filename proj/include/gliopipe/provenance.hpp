#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/volume.hpp"

namespace gliopipe {

struct FileRef {
    std::string path;  // relative to the session directory
    std::string hash;
};

struct StageEntry {
    std::string name;
    std::string kind;     // adapter kind or "native"
    std::string adapter;  // adapter name or "native"
    std::vector<FileRef> inputs;
    std::string params_hash;
    std::vector<FileRef> outputs;
    std::int64_t wall_ms = 0;
    std::string status;  // ok | failed
    std::string error;
};

// Append-only per-session audit trail; every produced file is traceable to
// exactly one stage entry.
struct SessionProvenance {
    std::string session_id;
    nlohmann::json curation;
    std::string route;  // MultiClass | BinaryWT | NoSegmentation | ""
    std::string model_key;
    std::optional<Affine4> patient2atlas;
    std::optional<std::string> atlas_hash;
    std::vector<StageEntry> stages;
    std::string status;  // ok | failed | excluded
    std::string error;

    const StageEntry* find_stage(const std::string& name) const;

    nlohmann::json to_json() const;
    static SessionProvenance from_json(const nlohmann::json& j);
};

}  // namespace gliopipe
