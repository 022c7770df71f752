#include "gliopipe/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <limits>
#include <set>
#include <thread>

#include "gliopipe/nifti.hpp"
#include "gliopipe/radiomics.hpp"
#include "gliopipe/util.hpp"

namespace fs = std::filesystem;

namespace gliopipe {

SequenceSet SequenceSet::of(std::initializer_list<SequenceClass> classes) {
    SequenceSet s;
    for (auto c : classes) s.insert(c);
    return s;
}

bool SequenceSet::contains(SequenceClass c) const {
    switch (c) {
        case SequenceClass::T1WI: return t1;
        case SequenceClass::GdT1WI: return gd;
        case SequenceClass::T2WI: return t2;
        case SequenceClass::FLAIR: return flair;
        default: return false;
    }
}

void SequenceSet::insert(SequenceClass c) {
    switch (c) {
        case SequenceClass::T1WI: t1 = true; break;
        case SequenceClass::GdT1WI: gd = true; break;
        case SequenceClass::T2WI: t2 = true; break;
        case SequenceClass::FLAIR: flair = true; break;
        default: break;
    }
}

std::string SequenceSet::name() const {
    std::vector<std::string> names;
    for (SequenceClass c : {SequenceClass::T1WI, SequenceClass::GdT1WI, SequenceClass::T2WI,
                            SequenceClass::FLAIR})
        if (contains(c)) names.push_back(to_string(c));
    if (names.empty()) return "none";
    std::sort(names.begin(), names.end());
    return join(names, "+");
}

const char* to_string(SegRouteKind k) {
    switch (k) {
        case SegRouteKind::MultiClass: return "MultiClass";
        case SegRouteKind::BinaryWT: return "BinaryWT";
        case SegRouteKind::NoSegmentation: return "NoSegmentation";
    }
    return "?";
}

SegRoute route_segmentation(const SequenceSet& available) {
    SegRoute r;
    if (available.gd) {
        r.kind = SegRouteKind::MultiClass;
        r.model_key = available.name();
    } else if (available.t2 || available.flair) {
        r.kind = SegRouteKind::BinaryWT;
        r.model_key = available.name();
    } else {
        r.kind = SegRouteKind::NoSegmentation;
        r.model_key = "none";
    }
    return r;
}

SequenceClass select_registration_target(const CuratedSession& selected) {
    if (selected.selected.empty()) throw EmptySession("no selected scans");
    const SeriesRecord* best = nullptr;
    SequenceClass best_cls = SequenceClass::NonSegmentable;
    for (const auto& [cls, rec] : selected.selected) {
        if (!best) {
            best = &rec;
            best_cls = cls;
            continue;
        }
        bool better = rec.n_instances > best->n_instances;
        if (rec.n_instances == best->n_instances) {
            const int sa = rec.rep().series_number.value_or(std::numeric_limits<int>::max());
            const int sb = best->rep().series_number.value_or(std::numeric_limits<int>::max());
            better = sa < sb || (sa == sb && rec.series_uid < best->series_uid);
        }
        if (better) {
            best = &rec;
            best_cls = cls;
        }
    }
    return best_cls;
}

SegMask mock_segmenter(const std::map<SequenceClass, Volume3D>& vols,
                       const MockThresholds& t) {
    if (vols.empty()) throw Error("mock segmenter needs at least one volume");
    const Volume3D& first = vols.begin()->second;
    for (const auto& [cls, v] : vols)
        if (v.dims != first.dims) throw GridMismatch("mock segmenter inputs disagree on grid");

    SegMask mask;
    mask.vol = first;
    mask.vol.kind = VoxelKind::Label;
    std::fill(mask.vol.voxels.begin(), mask.vol.voxels.end(), seg_label::BG);

    const auto gd = vols.find(SequenceClass::GdT1WI);
    const Volume3D* edema_src = nullptr;
    if (auto it = vols.find(SequenceClass::FLAIR); it != vols.end()) edema_src = &it->second;
    else if (auto it2 = vols.find(SequenceClass::T2WI); it2 != vols.end()) edema_src = &it2->second;

    if (gd != vols.end()) {
        const auto& g = gd->second;
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double v = g.voxels[i];
            if (v > t.et) mask.vol.voxels[i] = seg_label::ET;
            else if (v > t.seed && v < t.nc) mask.vol.voxels[i] = seg_label::NC;
        }
        if (edema_src)
            for (std::size_t i = 0; i < edema_src->size(); ++i)
                if (edema_src->voxels[i] > t.ed && mask.vol.voxels[i] == seg_label::BG &&
                    g.voxels[i] <= t.seed)
                    mask.vol.voxels[i] = seg_label::ED;
        return mask;
    }

    // binary whole-tumor route
    const Volume3D& ref = edema_src ? *edema_src : first;
    for (std::size_t i = 0; i < ref.size(); ++i)
        if (ref.voxels[i] > t.ed) mask.vol.voxels[i] = 1.0f;
    return mask;
}

std::vector<SessionInput> discover_sessions(const std::vector<fs::path>& roots) {
    auto has_dicom = [](const fs::path& dir) {
        std::error_code ec;
        for (auto it = fs::recursive_directory_iterator(dir, ec);
             it != fs::recursive_directory_iterator(); ++it)
            if (it->is_regular_file() && it->path().extension() == ".dcm") return true;
        return false;
    };

    std::vector<SessionInput> out;
    std::set<std::string> seen;
    auto add = [&](SessionInput s) {
        if (!seen.insert(s.session_id).second)
            throw ConfigError("duplicate session id " + s.session_id);
        out.push_back(std::move(s));
    };

    for (const auto& root : roots) {
        if (!fs::exists(root)) throw ConfigError("input root does not exist: " + root.string());
        if (fs::is_regular_file(root) && root.extension() == ".json") {
            add({root.stem().string(), root, SessionKind::Manifest});
            continue;
        }
        if (!fs::is_directory(root)) throw ConfigError("input root is not a directory: " + root.string());
        if (has_dicom(root) ) {
            bool direct = false;
            for (const auto& e : fs::directory_iterator(root))
                if (e.is_regular_file() && e.path().extension() == ".dcm") direct = true;
            if (direct) {
                add({root.filename().string(), root, SessionKind::Dicom});
                continue;
            }
        }
        std::vector<fs::path> children;
        for (const auto& e : fs::directory_iterator(root)) children.push_back(e.path());
        std::sort(children.begin(), children.end());
        for (const auto& child : children) {
            if (fs::is_directory(child) && has_dicom(child))
                add({child.filename().string(), child, SessionKind::Dicom});
            else if (fs::is_regular_file(child) && child.extension() == ".json")
                add({child.stem().string(), child, SessionKind::Manifest});
        }
    }
    std::sort(out.begin(), out.end(),
              [](const SessionInput& a, const SessionInput& b) { return a.session_id < b.session_id; });
    return out;
}

namespace {

std::string sanitize(const std::string& s) {
    std::string out;
    for (char c : s)
        out.push_back(std::isalnum(static_cast<unsigned char>(c)) ? c : '_');
    return out;
}

Volume3D read_vol(const fs::path& p, VoxelKind hint = VoxelKind::Intensity) {
    return nifti::read(p, hint);
}

// --- builtin adapters ---

void builtin_registration(const AdapterInvocation& inv, bool translate) {
    if (inv.inputs.size() < 2 || inv.outputs.size() < 2)
        throw AdapterFailure("registration expects [moving, fixed] -> [warped, transform]");
    const Volume3D moving = read_vol(inv.inputs[0]);
    const Volume3D fixed = read_vol(inv.inputs[1]);
    Affine4 xform;  // moving -> fixed world transform
    if (translate && inv.params.value("role", "") == "atlas") {
        const auto off = inv.params.value("offset_mm", std::vector<double>{0, 0, 0});
        if (off.size() != 3) throw AdapterFailure("offset_mm needs 3 components");
        xform = Affine4::translation(off[0], off[1], off[2]);
    }
    const Volume3D warped = apply_affine(moving, xform, fixed, Interp::Trilinear);
    nifti::write(inv.outputs[0], warped);
    nifti::write_affine(inv.outputs[1], xform);
}

void builtin_bias_identity(const AdapterInvocation& inv) {
    const auto bytes = read_file(inv.inputs.at(0));
    write_file(inv.outputs.at(0), bytes);
}

void builtin_skullstrip_threshold(const AdapterInvocation& inv) {
    const double level = inv.params.value("level", 0.0);
    const Volume3D vol = read_vol(inv.inputs.at(0));
    Volume3D stripped = vol;
    Volume3D mask = vol;
    mask.kind = VoxelKind::Label;
    for (std::size_t i = 0; i < vol.size(); ++i) {
        const bool in = vol.voxels[i] > level;
        mask.voxels[i] = in ? 1.0f : 0.0f;
        if (!in) stripped.voxels[i] = 0.0f;
    }
    nifti::write(inv.outputs.at(0), stripped);
    nifti::write(inv.outputs.at(1), mask);
}

void builtin_segment_mock(const AdapterInvocation& inv) {
    const auto channels = inv.params.value("channels", std::vector<std::string>{});
    if (channels.size() != inv.inputs.size())
        throw AdapterFailure("segmentation channels do not match inputs");
    std::map<SequenceClass, Volume3D> vols;
    for (std::size_t i = 0; i < channels.size(); ++i) {
        const auto cls = sequence_class_from_string(channels[i]);
        if (!cls) throw AdapterFailure("unknown channel " + channels[i]);
        vols[*cls] = read_vol(inv.inputs[i]);
    }
    MockThresholds t;
    if (inv.params.contains("thresholds")) {
        const auto& tj = inv.params["thresholds"];
        t.seed = tj.value("seed", t.seed);
        t.et = tj.value("et", t.et);
        t.nc = tj.value("nc", t.nc);
        t.ed = tj.value("ed", t.ed);
    }
    const SegMask mask = mock_segmenter(vols, t);
    nifti::write(inv.outputs.at(0), mask.vol);
}

void builtin_classifier_fixed(const AdapterInvocation& inv) {
    nlohmann::json out;
    out["class"] = inv.params.value("class", "NonSegmentable");
    out["confidence"] = inv.params.value("confidence", 1.0);
    write_text_file(inv.outputs.at(0), out.dump(2) + "\n");
}

}  // namespace

AdapterRegistry build_registry(const RunConfig& cfg) {
    AdapterRegistry reg;
    for (const auto& [kind, spec] : cfg.adapters) {
        if (!spec.command.empty()) {
            reg.adapters[kind] = std::make_shared<ProcessAdapter>(
                spec.command[0], spec.command, spec.params, cfg.adapter_timeout_sec);
            continue;
        }
        const std::string& b = spec.builtin;
        FunctionAdapter::Fn fn;
        if (kind == AdapterKind::Registration && b == "identity")
            fn = [](const AdapterInvocation& i) { builtin_registration(i, false); };
        else if (kind == AdapterKind::Registration && b == "translate")
            fn = [](const AdapterInvocation& i) { builtin_registration(i, true); };
        else if (kind == AdapterKind::BiasCorrection && b == "identity")
            fn = builtin_bias_identity;
        else if (kind == AdapterKind::SkullStrip && b == "threshold")
            fn = builtin_skullstrip_threshold;
        else if (kind == AdapterKind::Segmentation && b == "mock")
            fn = builtin_segment_mock;
        else if (kind == AdapterKind::ClassifierStage2 && b == "fixed")
            fn = builtin_classifier_fixed;
        else
            throw ConfigError("unknown builtin '" + b + "' for adapter kind " +
                              to_string(kind));
        reg.adapters[kind] =
            std::make_shared<FunctionAdapter>("builtin:" + b, std::move(fn), spec.params);
    }
    return reg;
}

namespace {

struct LoadedSession {
    std::vector<SeriesRecord> series;
    std::map<std::string, std::vector<std::vector<std::uint8_t>>> payloads;
    bool loaded = false;
};

std::vector<fs::path> list_dicom_files(const fs::path& dir) {
    std::vector<fs::path> files;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator();
         ++it)
        if (it->is_regular_file() && it->path().extension() == ".dcm") files.push_back(it->path());
    std::sort(files.begin(), files.end());
    return files;
}

void load_dicom_session(const fs::path& dir, LoadedSession& s) {
    if (s.loaded) return;
    std::map<std::string, std::pair<SeriesRecord, std::vector<std::vector<std::uint8_t>>>> groups;
    for (const auto& f : list_dicom_files(dir)) {
        DicomFile df = parse_dicom(read_file(f));
        auto& [rec, payloads] = groups[df.meta.series_uid];
        rec.series_uid = df.meta.series_uid;
        rec.instances.push_back(df.meta);
        payloads.push_back(std::move(df.pixel_data));
    }
    for (auto& [uid, group] : groups) {
        group.first.n_instances = group.first.instances.size();
        s.series.push_back(group.first);
        s.payloads[uid] = std::move(group.second);
    }
    s.loaded = true;
}

// Resumable stage execution: a stage re-runs unless the previous provenance
// recorded the same name + params/input hash and all outputs still match.
struct StageCtx {
    const SessionProvenance* prev = nullptr;
    SessionProvenance* cur = nullptr;
    fs::path session_dir;
    Logger* log = nullptr;
    std::string session_id;
    bool executed = false;

    std::string rel(const fs::path& p) const {
        const auto r = fs::relative(p, session_dir);
        if (!r.empty() && r.native().rfind("..", 0) != 0) return r.string();
        return p.string();
    }

    void run(const std::string& name, const std::string& kind, const std::string& adapter,
             const std::vector<fs::path>& inputs, const nlohmann::json& params,
             const std::vector<fs::path>& outputs, const std::function<void()>& body) {
        StageEntry entry;
        entry.name = name;
        entry.kind = kind;
        entry.adapter = adapter;
        std::string key = name + "|" + adapter + "|" + params.dump();
        for (const auto& in : inputs) {
            FileRef ref{rel(in), hash_file(in)};
            key += "|" + ref.path + ":" + ref.hash;
            entry.inputs.push_back(std::move(ref));
        }
        entry.params_hash = hash_hex(fnv1a64(key));

        if (prev) {
            if (const StageEntry* old = prev->find_stage(name);
                old && old->status == "ok" && old->params_hash == entry.params_hash) {
                bool outputs_intact = !old->outputs.empty() || outputs.empty();
                for (const auto& ref : old->outputs) {
                    const fs::path p = fs::path(ref.path).is_absolute()
                                           ? fs::path(ref.path)
                                           : session_dir / ref.path;
                    if (!fs::exists(p) || hash_file(p) != ref.hash) {
                        outputs_intact = false;
                        break;
                    }
                }
                if (outputs_intact) {
                    cur->stages.push_back(*old);
                    log->event("stage", {{"session", session_id},
                                         {"stage", name},
                                         {"status", "skipped"}});
                    return;
                }
            }
        }

        const auto t0 = std::chrono::steady_clock::now();
        try {
            body();
        } catch (const std::exception& e) {
            entry.status = "failed";
            entry.error = e.what();
            entry.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
            cur->stages.push_back(entry);
            executed = true;
            log->event("stage", {{"session", session_id},
                                 {"stage", name},
                                 {"status", "failed"},
                                 {"error", entry.error}});
            throw;
        }
        entry.wall_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                            std::chrono::steady_clock::now() - t0)
                            .count();
        for (const auto& out : outputs) entry.outputs.push_back({rel(out), hash_file(out)});
        entry.status = "ok";
        cur->stages.push_back(entry);
        executed = true;
        log->event("stage",
                   {{"session", session_id}, {"stage", name}, {"status", "ok"}});
    }
};

}  // namespace

SessionOutcome PipelineRunner::run_session(const SessionInput& input, bool curate_only) {
    SessionOutcome outcome;
    outcome.session_id = input.session_id;

    const fs::path session_dir = cfg_.output_root / "sessions" / input.session_id;
    const fs::path work = session_dir / "work";
    const fs::path provenance_path = session_dir / "provenance.json";

    SessionProvenance prev;
    bool have_prev = false;
    SessionProvenance cur;
    cur.session_id = input.session_id;

    StageCtx ctx;
    ctx.cur = &cur;
    ctx.session_dir = session_dir;
    ctx.log = log_;
    ctx.session_id = input.session_id;

    log_->event("session_start", {{"session", input.session_id}});
    try {
        fs::create_directories(work);
        if (fs::exists(provenance_path)) {
            prev = SessionProvenance::from_json(
                nlohmann::json::parse(read_text_file(provenance_path)));
            have_prev = true;
            ctx.prev = &prev;
        }

        LoadedSession loaded;
        const fs::path curation_path = session_dir / "curation.json";

        // --- curation ---
        std::vector<fs::path> curate_inputs;
        if (input.kind == SessionKind::Dicom)
            curate_inputs = list_dicom_files(input.path);
        else
            curate_inputs = {input.path};
        if (curate_inputs.empty()) throw Error("session has no input files");

        nlohmann::json curate_params;
        curate_params["ruleset"] = cfg_.ruleset.to_json();
        const StageAdapter* stage2 = registry_.find(AdapterKind::ClassifierStage2);
        curate_params["stage2_adapter"] = stage2 ? stage2->name() : "builtin:tokens";

        ctx.run("curate", "native", "native", curate_inputs, curate_params, {curation_path},
                [&] {
                    std::vector<SeriesRecord> series;
                    if (input.kind == SessionKind::Dicom) {
                        load_dicom_session(input.path, loaded);
                        series = loaded.series;
                    } else {
                        const auto manifest = manifest_from_json(
                            nlohmann::json::parse(read_text_file(input.path)));
                        series = manifest.series;
                    }
                    ClassifierAdapter cls2_fn;
                    if (stage2) {
                        cls2_fn = [&](const SeriesRecord& rec,
                                      const Volume3D*) -> std::pair<SequenceClass, double> {
                            const auto base = work / ("classify2_" + sanitize(rec.series_uid));
                            const fs::path in_json = base.string() + ".json";
                            const fs::path out_json = base.string() + ".out.json";
                            write_text_file(
                                in_json,
                                manifest_to_json(input.session_id, {rec}).dump(2) + "\n");
                            AdapterInvocation inv;
                            inv.kind = AdapterKind::ClassifierStage2;
                            inv.stage = "classify2_" + sanitize(rec.series_uid);
                            inv.inputs = {in_json};
                            inv.outputs = {out_json};
                            stage2->run(inv);
                            const auto res =
                                nlohmann::json::parse(read_text_file(out_json));
                            const auto cls = sequence_class_from_string(
                                res.value("class", "NonSegmentable"));
                            if (!cls)
                                throw AdapterFailure("stage-2 adapter returned unknown class");
                            return {*cls, res.value("confidence", 1.0)};
                        };
                    }
                    const auto result = curate_session(input.session_id, series, cfg_.ruleset,
                                                       stage2 ? &cls2_fn : nullptr);
                    write_text_file(curation_path,
                                    curation_report_json(result).dump(2) + "\n");
                });

        const auto report = nlohmann::json::parse(read_text_file(curation_path));
        cur.curation = report;
        std::map<SequenceClass, std::string> selected;
        for (auto it = report["selected"].begin(); it != report["selected"].end(); ++it)
            selected[*sequence_class_from_string(it.key())] = it.value().get<std::string>();

        SequenceSet available;
        for (const auto& [cls, uid] : selected) available.insert(cls);
        const SegRoute route = route_segmentation(available);
        cur.route = to_string(route.kind);
        cur.model_key = route.model_key;

        const bool excluded = report["session_excluded"].get<bool>();
        if (excluded || curate_only || input.kind == SessionKind::Manifest) {
            cur.status = excluded ? "excluded" : "ok";
            outcome.status = cur.status;
            if (!excluded && !curate_only && input.kind == SessionKind::Manifest)
                log_->event("note", {{"session", input.session_id},
                                     {"message", "manifest session: curation only"}});
            if (ctx.executed || !have_prev) {
                write_text_file(provenance_path, cur.to_json().dump(2) + "\n");
            }
            outcome.executed_anything = ctx.executed;
            log_->event("session_done",
                        {{"session", input.session_id}, {"status", cur.status}});
            return outcome;
        }

        if (cfg_.atlas_path) cur.atlas_hash = hash_file(*cfg_.atlas_path);

        // map: class -> curated series uid, used to slice the loaded session
        auto series_for = [&](const std::string& uid) -> const SeriesRecord& {
            load_dicom_session(input.path, loaded);
            for (const auto& rec : loaded.series)
                if (rec.series_uid == uid) return rec;
            throw Error("curated series " + uid + " not found in session input");
        };

        auto raw_path = [&](SequenceClass c) {
            return work / (std::string(to_string(c)) + "_raw.nii");
        };

        // --- stack selected series into volumes ---
        {
            std::vector<fs::path> outputs;
            for (const auto& [cls, uid] : selected) outputs.push_back(raw_path(cls));
            outputs.push_back(work / "stack.json");
            nlohmann::json params;
            for (const auto& [cls, uid] : selected) params[to_string(cls)] = uid;
            ctx.run("stack", "native", "native", curate_inputs, params, outputs, [&] {
                nlohmann::json flags;
                for (const auto& [cls, uid] : selected) {
                    const auto& rec = series_for(uid);
                    const auto stacked = series_to_volume(rec, loaded.payloads.at(uid));
                    nifti::write(raw_path(cls), stacked.volume);
                    flags[to_string(cls)] = {{"slice_spacing", stacked.slice_spacing},
                                             {"uniform_spacing", stacked.uniform_spacing},
                                             {"from_instance_order", stacked.from_instance_order}};
                }
                write_text_file(work / "stack.json", flags.dump(2) + "\n");
            });
        }

        // --- registration to atlas (target scan) + co-registration ---
        CuratedSession curated;
        curated.session_id = input.session_id;
        {
            // rebuild enough of the curated session for target selection
            const auto& series_json = report["series"];
            for (const auto& [cls, uid] : selected) {
                SeriesRecord rec;
                rec.series_uid = uid;
                InstanceMeta meta;
                meta.series_uid = uid;
                for (const auto& sj : series_json)
                    if (sj["series_uid"] == uid) {
                        rec.n_instances = sj["n_instances"].get<std::size_t>();
                        if (sj.contains("series_number"))
                            meta.series_number = sj["series_number"].get<int>();
                    }
                rec.instances.push_back(meta);
                curated.selected.emplace(cls, rec);
            }
        }
        const SequenceClass target = select_registration_target(curated);
        const fs::path atlas_ref = cfg_.atlas_path ? *cfg_.atlas_path : raw_path(target);
        const fs::path p2a_path = session_dir / "patient2atlas.txt";
        auto atlas_path_of = [&](SequenceClass c) {
            return work / (std::string(to_string(c)) + "_atlas.nii");
        };

        {
            const auto& reg = registry_.require(AdapterKind::Registration);
            nlohmann::json params{{"role", "atlas"}};
            ctx.run("register_target", to_string(AdapterKind::Registration), reg.name(),
                    {raw_path(target), atlas_ref}, params,
                    {atlas_path_of(target), p2a_path}, [&] {
                        AdapterInvocation inv;
                        inv.kind = AdapterKind::Registration;
                        inv.stage = "register_target";
                        inv.inputs = {raw_path(target), atlas_ref};
                        inv.params = params;
                        inv.outputs = {atlas_path_of(target), p2a_path};
                        reg.run(inv);
                    });
        }
        const Affine4 patient2atlas = nifti::read_affine(p2a_path);
        cur.patient2atlas = patient2atlas;

        for (const auto& [cls, uid] : selected) {
            if (cls == target) continue;
            const auto& reg = registry_.require(AdapterKind::Registration);
            const fs::path coreg = work / (std::string(to_string(cls)) + "_coreg.nii");
            const fs::path coreg_txt = work / (std::string(to_string(cls)) + "_coreg.txt");
            nlohmann::json params{{"role", "coregister"}};
            const std::string name = std::string("coregister_") + to_string(cls);
            ctx.run(name, to_string(AdapterKind::Registration), reg.name(),
                    {raw_path(cls), raw_path(target)}, params, {coreg, coreg_txt}, [&] {
                        AdapterInvocation inv;
                        inv.kind = AdapterKind::Registration;
                        inv.stage = name;
                        inv.inputs = {raw_path(cls), raw_path(target)};
                        inv.params = params;
                        inv.outputs = {coreg, coreg_txt};
                        reg.run(inv);
                    });
            ctx.run(std::string("atlas_warp_") + to_string(cls), "native", "native",
                    {coreg, p2a_path, atlas_path_of(target)},
                    {{"interpolation", "trilinear"}}, {atlas_path_of(cls)}, [&] {
                        const Volume3D vol = read_vol(coreg);
                        const Volume3D ref = read_vol(atlas_path_of(target));
                        nifti::write(atlas_path_of(cls),
                                     apply_affine(vol, patient2atlas, ref, Interp::Trilinear));
                    });
        }

        // --- bias correction, skull strip, normalization per sequence ---
        auto norm_path = [&](SequenceClass c) {
            return work / (std::string(to_string(c)) + "_norm.nii");
        };
        for (const auto& [cls, uid] : selected) {
            const std::string cname = to_string(cls);
            const fs::path bias = work / (cname + "_bias.nii");
            const fs::path stripped = work / (cname + "_stripped.nii");
            const fs::path brainmask = work / (cname + "_brainmask.nii");

            const auto& bias_adapter = registry_.require(AdapterKind::BiasCorrection);
            ctx.run("bias_" + cname, to_string(AdapterKind::BiasCorrection),
                    bias_adapter.name(), {atlas_path_of(cls)}, {}, {bias}, [&] {
                        AdapterInvocation inv;
                        inv.kind = AdapterKind::BiasCorrection;
                        inv.stage = "bias_" + cname;
                        inv.inputs = {atlas_path_of(cls)};
                        inv.outputs = {bias};
                        bias_adapter.run(inv);
                    });

            const auto& strip = registry_.require(AdapterKind::SkullStrip);
            ctx.run("skullstrip_" + cname, to_string(AdapterKind::SkullStrip), strip.name(),
                    {bias}, {}, {stripped, brainmask}, [&] {
                        AdapterInvocation inv;
                        inv.kind = AdapterKind::SkullStrip;
                        inv.stage = "skullstrip_" + cname;
                        inv.inputs = {bias};
                        inv.outputs = {stripped, brainmask};
                        strip.run(inv);
                    });

            ctx.run("normalize_" + cname, "native", "native", {stripped, brainmask}, {},
                    {norm_path(cls)}, [&] {
                        const Volume3D vol = read_vol(stripped);
                        const Volume3D mask = read_vol(brainmask, VoxelKind::Label);
                        nifti::write(norm_path(cls), normalize_intensity(vol, mask));
                    });
        }

        // --- segmentation ---
        std::vector<std::string> channels;
        for (const auto& [cls, uid] : selected) channels.push_back(to_string(cls));
        std::sort(channels.begin(), channels.end());
        std::vector<fs::path> channel_files;
        for (const auto& c : channels) channel_files.push_back(norm_path(*sequence_class_from_string(c)));

        const fs::path mask_atlas = session_dir / "mask_atlas.nii";
        {
            const auto& seg = registry_.require(AdapterKind::Segmentation);
            nlohmann::json params;
            params["route"] = to_string(route.kind);
            params["model_key"] = route.model_key;
            params["channels"] = channels;
            params["thresholds"] = {{"seed", cfg_.mock_thresholds.seed},
                                    {"et", cfg_.mock_thresholds.et},
                                    {"nc", cfg_.mock_thresholds.nc},
                                    {"ed", cfg_.mock_thresholds.ed}};
            ctx.run("segment", to_string(AdapterKind::Segmentation), seg.name(), channel_files,
                    params, {mask_atlas}, [&] {
                        AdapterInvocation inv;
                        inv.kind = AdapterKind::Segmentation;
                        inv.stage = "segment";
                        inv.inputs = channel_files;
                        inv.params = params;
                        inv.outputs = {mask_atlas};
                        seg.run(inv);
                        // validate the returned mask: grid + label vocabulary
                        const Volume3D mask = read_vol(mask_atlas, VoxelKind::Label);
                        const Volume3D ref = read_vol(channel_files[0]);
                        if (mask.dims != ref.dims)
                            throw AdapterFailure("segmentation output grid mismatch");
                        for (float v : mask.voxels) {
                            const bool ok = route.kind == SegRouteKind::BinaryWT
                                                ? (v == 0.0f || v == 1.0f)
                                                : (v == 0.0f || v == 1.0f || v == 2.0f ||
                                                   v == 4.0f);
                            if (!ok)
                                throw AdapterFailure(
                                    "segmentation output has labels outside the route "
                                    "vocabulary");
                        }
                    });
        }

        // --- composites (multi-class only) ---
        const fs::path tc_atlas = session_dir / "tc_atlas.nii";
        const fs::path wt_atlas = session_dir / "wt_atlas.nii";
        if (route.kind == SegRouteKind::MultiClass) {
            ctx.run("composites", "native", "native", {mask_atlas}, {}, {tc_atlas, wt_atlas},
                    [&] {
                        SegMask mask{read_vol(mask_atlas, VoxelKind::Label)};
                        const auto merged = merge_mask_classes(mask);
                        nifti::write(tc_atlas, merged.tc);
                        nifti::write(wt_atlas, merged.wt);
                    });
        }

        // --- inverse warp back to patient space (nearest neighbor) ---
        const fs::path mask_patient = session_dir / "mask_patient.nii";
        {
            std::vector<fs::path> outs{mask_patient};
            if (route.kind == SegRouteKind::MultiClass) {
                outs.push_back(session_dir / "tc_patient.nii");
                outs.push_back(session_dir / "wt_patient.nii");
            }
            ctx.run("warp_mask", "native", "native",
                    {mask_atlas, p2a_path, raw_path(target)},
                    {{"interpolation", "nearest"}}, outs, [&] {
                        const Volume3D mask = read_vol(mask_atlas, VoxelKind::Label);
                        const Volume3D ref = read_vol(raw_path(target));
                        const Affine4 atlas2patient = invert_affine(patient2atlas);
                        const Volume3D warped =
                            apply_affine(mask, atlas2patient, ref, Interp::Nearest);
                        nifti::write(mask_patient, warped);
                        if (route.kind == SegRouteKind::MultiClass) {
                            const auto merged = merge_mask_classes(SegMask{warped});
                            nifti::write(session_dir / "tc_patient.nii", merged.tc);
                            nifti::write(session_dir / "wt_patient.nii", merged.wt);
                        }
                    });
        }

        // --- radiomic features on the normalized atlas-space images ---
        if (cfg_.radiomics) {
            std::vector<fs::path> rad_inputs = channel_files;
            rad_inputs.push_back(mask_atlas);
            const fs::path csv = session_dir / "features.csv";
            const fs::path fjson = session_dir / "features.json";
            nlohmann::json params{{"bin_width", cfg_.bin_width}};
            ctx.run("radiomics", "native", "native", rad_inputs, params, {csv, fjson}, [&] {
                std::map<SequenceClass, Volume3D> images;
                for (const auto& [cls, uid] : selected) images[cls] = read_vol(norm_path(cls));
                const Volume3D mask = read_vol(mask_atlas, VoxelKind::Label);
                const auto masks = radiomics::class_masks_from(
                    mask, route.kind == SegRouteKind::BinaryWT);
                radiomics::Params rp;
                rp.bin_width = cfg_.bin_width;
                const auto fv =
                    radiomics::extract_all(input.session_id, images, masks, rp);
                write_text_file(csv, radiomics::feature_csv_header() +
                                         radiomics::feature_csv_row(fv));
                write_text_file(fjson, radiomics::feature_json(fv).dump(2) + "\n");
            });
        }

        cur.status = "ok";
        outcome.status = "ok";
    } catch (const std::exception& e) {
        cur.status = "failed";
        cur.error = e.what();
        outcome.status = "failed";
        outcome.error = e.what();
    }

    outcome.executed_anything = ctx.executed;
    if (ctx.executed || !have_prev) {
        std::error_code ec;
        fs::create_directories(session_dir, ec);
        if (!ec) write_text_file(provenance_path, cur.to_json().dump(2) + "\n");
    }
    log_->event("session_done", {{"session", input.session_id}, {"status", outcome.status}});
    return outcome;
}

std::vector<SessionOutcome> PipelineRunner::run_batch(const std::vector<SessionInput>& inputs,
                                                      bool curate_only) {
    std::vector<SessionOutcome> outcomes(inputs.size());
    const int workers = std::max(1, std::min<int>(cfg_.workers, static_cast<int>(inputs.size())));
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= inputs.size()) return;
            outcomes[i] = run_session(inputs[i], curate_only);
        }
    };
    if (workers == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    return outcomes;
}

}  // namespace gliopipe
