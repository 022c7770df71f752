#include "gliopipe/provenance.hpp"

namespace gliopipe {

namespace {

nlohmann::json refs_to_json(const std::vector<FileRef>& refs) {
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& r : refs) arr.push_back({{"path", r.path}, {"hash", r.hash}});
    return arr;
}

std::vector<FileRef> refs_from_json(const nlohmann::json& arr) {
    std::vector<FileRef> out;
    for (const auto& r : arr) out.push_back({r["path"].get<std::string>(), r["hash"].get<std::string>()});
    return out;
}

}  // namespace

const StageEntry* SessionProvenance::find_stage(const std::string& name) const {
    for (const auto& s : stages)
        if (s.name == name) return &s;
    return nullptr;
}

nlohmann::json SessionProvenance::to_json() const {
    nlohmann::json j;
    j["session_id"] = session_id;
    j["status"] = status;
    if (!error.empty()) j["error"] = error;
    if (!curation.is_null()) j["curation"] = curation;
    if (!route.empty()) {
        j["route"] = route;
        j["model_key"] = model_key;
    }
    if (patient2atlas) j["patient2atlas"] = patient2atlas->m;
    if (atlas_hash) j["atlas_hash"] = *atlas_hash;
    j["stages"] = nlohmann::json::array();
    for (const auto& s : stages) {
        nlohmann::json e;
        e["name"] = s.name;
        e["kind"] = s.kind;
        e["adapter"] = s.adapter;
        e["inputs"] = refs_to_json(s.inputs);
        e["params_hash"] = s.params_hash;
        e["outputs"] = refs_to_json(s.outputs);
        e["wall_ms"] = s.wall_ms;
        e["status"] = s.status;
        if (!s.error.empty()) e["error"] = s.error;
        j["stages"].push_back(std::move(e));
    }
    return j;
}

SessionProvenance SessionProvenance::from_json(const nlohmann::json& j) {
    SessionProvenance p;
    p.session_id = j.value("session_id", "");
    p.status = j.value("status", "");
    p.error = j.value("error", "");
    if (j.contains("curation")) p.curation = j["curation"];
    p.route = j.value("route", "");
    p.model_key = j.value("model_key", "");
    if (j.contains("patient2atlas")) {
        Affine4 a;
        a.m = j["patient2atlas"].get<std::array<double, 16>>();
        p.patient2atlas = a;
    }
    if (j.contains("atlas_hash")) p.atlas_hash = j["atlas_hash"].get<std::string>();
    if (j.contains("stages"))
        for (const auto& e : j["stages"]) {
            StageEntry s;
            s.name = e.value("name", "");
            s.kind = e.value("kind", "");
            s.adapter = e.value("adapter", "");
            s.inputs = refs_from_json(e.value("inputs", nlohmann::json::array()));
            s.params_hash = e.value("params_hash", "");
            s.outputs = refs_from_json(e.value("outputs", nlohmann::json::array()));
            s.wall_ms = e.value("wall_ms", std::int64_t{0});
            s.status = e.value("status", "");
            s.error = e.value("error", "");
            p.stages.push_back(std::move(s));
        }
    return p;
}

}  // namespace gliopipe
