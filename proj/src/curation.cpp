#include "gliopipe/curation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gliopipe/util.hpp"

namespace gliopipe {

const char* to_string(SequenceClass c) {
    switch (c) {
        case SequenceClass::T1WI: return "T1WI";
        case SequenceClass::GdT1WI: return "GdT1WI";
        case SequenceClass::T2WI: return "T2WI";
        case SequenceClass::FLAIR: return "FLAIR";
        case SequenceClass::NonSegmentable: return "NonSegmentable";
    }
    return "?";
}

const char* to_string(Orientation o) {
    switch (o) {
        case Orientation::Axial: return "Axial";
        case Orientation::Coronal: return "Coronal";
        case Orientation::Sagittal: return "Sagittal";
        case Orientation::Unknown: return "Unknown";
    }
    return "?";
}

std::optional<SequenceClass> sequence_class_from_string(const std::string& s) {
    for (SequenceClass c : {SequenceClass::T1WI, SequenceClass::GdT1WI, SequenceClass::T2WI,
                            SequenceClass::FLAIR, SequenceClass::NonSegmentable})
        if (s == to_string(c)) return c;
    return std::nullopt;
}

const char* to_string(ExclusionReason r) {
    switch (r) {
        case ExclusionReason::NoSeriesDescription: return "NoSeriesDescription";
        case ExclusionReason::NotOriginalPrimary: return "NotOriginalPrimary";
        case ExclusionReason::AngioFlag: return "AngioFlag";
        case ExclusionReason::Stage1NonSegmentable: return "Stage1NonSegmentable";
        case ExclusionReason::Stage2NonSegmentable: return "Stage2NonSegmentable";
        case ExclusionReason::NotSelected: return "NotSelected";
        case ExclusionReason::SessionNotSegmentable: return "SessionNotSegmentable";
    }
    return "?";
}

Ruleset Ruleset::defaults() {
    Ruleset r;
    r.allow_tokens = {"t1", "t2", "flair", "mprage", "bravo", "spgr", "fspgr", "cube", "space"};
    r.deny_tokens = {"scout",  "localizer", "loc",   "dwi",   "adc",      "dti",   "trace",
                     "tensor", "perfusion", "perf",  "dsc",   "dce",      "asl",   "swi",
                     "swan",   "bold",      "fmri",  "angio", "mra",      "mrv",   "tof",
                     "phase",  "fieldmap",  "b0",    "csf",   "screen",   "survey"};
    r.contrast_markers = {"post", "gd", "+c", "gad", "contrast"};
    r.min_instances = 10;
    return r;
}

Ruleset Ruleset::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("ruleset must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k != "allow_tokens" && k != "deny_tokens" && k != "contrast_markers" &&
            k != "min_instances")
            throw FormatError("unknown key '" + k + "' in ruleset");
    }
    Ruleset r = defaults();
    if (j.contains("allow_tokens")) r.allow_tokens = j["allow_tokens"].get<std::vector<std::string>>();
    if (j.contains("deny_tokens")) r.deny_tokens = j["deny_tokens"].get<std::vector<std::string>>();
    if (j.contains("contrast_markers"))
        r.contrast_markers = j["contrast_markers"].get<std::vector<std::string>>();
    if (j.contains("min_instances")) r.min_instances = j["min_instances"].get<std::size_t>();
    return r;
}

nlohmann::json Ruleset::to_json() const {
    return {{"allow_tokens", allow_tokens},
            {"deny_tokens", deny_tokens},
            {"contrast_markers", contrast_markers},
            {"min_instances", min_instances}};
}

namespace {

std::vector<std::string> description_tokens(const SeriesRecord& series) {
    const auto desc = series.rep().series_description.value_or("");
    std::string lowered = to_lower(desc);
    // Keep '+' inside tokens so markers like "+c" survive tokenization.
    std::string seps;
    for (int c = 1; c < 128; ++c) {
        const char ch = static_cast<char>(c);
        const bool keep = (ch >= 'a' && ch <= 'z') || (ch >= '0' && ch <= '9') || ch == '+';
        if (!keep) seps.push_back(ch);
    }
    return split_tokens(lowered, seps);
}

bool token_matches(const std::string& token, const std::string& marker) {
    if (token == marker) return true;
    // Punctuated markers ("+c") match as substrings, e.g. "t1+c".
    const bool punctuated = marker.find_first_not_of("abcdefghijklmnopqrstuvwxyz0123456789") !=
                            std::string::npos;
    return punctuated && token.find(marker) != std::string::npos;
}

bool any_token_matches(const std::vector<std::string>& tokens,
                       const std::vector<std::string>& markers) {
    for (const auto& t : tokens)
        for (const auto& m : markers)
            if (token_matches(t, m)) return true;
    return false;
}

}  // namespace

Stage1Result classify_stage1(const SeriesRecord& series, const Ruleset& rules) {
    const auto tokens = description_tokens(series);
    if (any_token_matches(tokens, rules.deny_tokens)) return Stage1Result::NonSegmentable;
    if (series.n_instances < rules.min_instances) return Stage1Result::NonSegmentable;
    if (any_token_matches(tokens, rules.allow_tokens)) return Stage1Result::Segmentable;
    return Stage1Result::NonSegmentable;
}

SequenceClass classify_stage2(const SeriesRecord& series, const Volume3D* vol,
                              const ClassifierAdapter* adapter, const Ruleset& rules) {
    if (adapter && *adapter) {
        try {
            return (*adapter)(series, vol).first;
        } catch (const std::exception& e) {
            throw AdapterFailure("stage-2 classifier failed on series " + series.series_uid +
                                 ": " + e.what());
        }
    }
    const auto tokens = description_tokens(series);
    if (any_token_matches(tokens, rules.contrast_markers)) return SequenceClass::GdT1WI;
    if (any_token_matches(tokens, {"flair"})) return SequenceClass::FLAIR;
    if (any_token_matches(tokens, {"t2"})) return SequenceClass::T2WI;
    if (any_token_matches(tokens, {"t1"})) return SequenceClass::T1WI;
    return SequenceClass::NonSegmentable;
}

Orientation determine_orientation(const InstanceMeta& meta) {
    if (!meta.image_orientation) return Orientation::Unknown;
    const auto& iop = *meta.image_orientation;
    const Vec3 row{iop[0], iop[1], iop[2]};
    const Vec3 col{iop[3], iop[4], iop[5]};
    const Vec3 n = cross(row, col);
    const double ax = std::abs(n[0]), ay = std::abs(n[1]), az = std::abs(n[2]);
    if (norm(n) < 1e-6) return Orientation::Unknown;  // degenerate cosines
    if (az >= ax && az >= ay) return Orientation::Axial;
    if (ay >= ax) return Orientation::Coronal;
    return Orientation::Sagittal;
}

ExclusionResult apply_exclusions(const std::vector<SeriesRecord>& series) {
    ExclusionResult out;
    for (const auto& rec : series) {
        const auto& m = rec.rep();
        if (!m.series_description || trim(*m.series_description).empty()) {
            out.excluded.push_back({rec.series_uid, ExclusionReason::NoSeriesDescription});
            continue;
        }
        const std::string joined = m.image_type ? join(*m.image_type, "/") : std::string{};
        if (joined.find("ORIGINAL/PRIMARY") == std::string::npos) {
            out.excluded.push_back({rec.series_uid, ExclusionReason::NotOriginalPrimary});
            continue;
        }
        if (m.angio_flag && *m.angio_flag == 'Y') {
            out.excluded.push_back({rec.series_uid, ExclusionReason::AngioFlag});
            continue;
        }
        out.kept.push_back(rec);
    }
    return out;
}

namespace {

int orientation_rank(Orientation o) {
    switch (o) {
        case Orientation::Axial: return 2;
        case Orientation::Coronal:
        case Orientation::Sagittal: return 1;  // only axial outranks; coronal and sagittal tie
        case Orientation::Unknown: return 0;
    }
    return 0;
}

// Total order over duplicate candidates: axial first, more instances, lower
// series number (absent ranks last), lexicographically smallest uid.
bool candidate_better(const ClassifiedSeries& a, const ClassifiedSeries& b) {
    const int ra = orientation_rank(a.orientation), rb = orientation_rank(b.orientation);
    if (ra != rb) return ra > rb;
    if (a.series.n_instances != b.series.n_instances)
        return a.series.n_instances > b.series.n_instances;
    const int sa = a.series.rep().series_number.value_or(std::numeric_limits<int>::max());
    const int sb = b.series.rep().series_number.value_or(std::numeric_limits<int>::max());
    if (sa != sb) return sa < sb;
    return a.series.series_uid < b.series.series_uid;
}

}  // namespace

CuratedSession select_scans(const std::string& session_id,
                            const std::vector<ClassifiedSeries>& classified) {
    CuratedSession out;
    out.session_id = session_id;
    std::map<SequenceClass, ClassifiedSeries> winners;
    for (const auto& cand : classified) {
        if (cand.cls == SequenceClass::NonSegmentable) continue;
        auto it = winners.find(cand.cls);
        if (it == winners.end() || candidate_better(cand, it->second))
            winners.insert_or_assign(cand.cls, cand);
    }
    for (const auto& cand : classified) {
        if (cand.cls == SequenceClass::NonSegmentable) continue;
        const auto& winner = winners.at(cand.cls);
        if (cand.series.series_uid != winner.series.series_uid)
            out.exclusions.push_back({cand.series.series_uid, ExclusionReason::NotSelected});
    }
    for (auto& [cls, cand] : winners) out.selected.emplace(cls, cand.series);

    out.session_excluded = !out.selected.contains(SequenceClass::GdT1WI) &&
                           !out.selected.contains(SequenceClass::T2WI) &&
                           !out.selected.contains(SequenceClass::FLAIR);
    return out;
}

CurationResult curate_session(const std::string& session_id,
                              const std::vector<SeriesRecord>& series, const Ruleset& rules,
                              const ClassifierAdapter* adapter) {
    CurationResult result;
    std::map<std::string, SeriesDecision> decisions;
    for (const auto& rec : series) {
        SeriesDecision d;
        d.series_uid = rec.series_uid;
        d.description = rec.rep().series_description;
        d.n_instances = rec.n_instances;
        d.series_number = rec.rep().series_number;
        d.mr_acq_type = rec.rep().mr_acq_type;
        d.orientation = determine_orientation(rec.rep());
        decisions[rec.series_uid] = d;
    }

    auto excl = apply_exclusions(series);
    std::vector<ExclusionRecord> all_exclusions = excl.excluded;
    for (const auto& e : excl.excluded) decisions[e.series_uid].reason = e.reason;

    std::vector<ClassifiedSeries> classified;
    for (const auto& rec : excl.kept) {
        auto& d = decisions[rec.series_uid];
        if (classify_stage1(rec, rules) == Stage1Result::NonSegmentable) {
            d.reason = ExclusionReason::Stage1NonSegmentable;
            all_exclusions.push_back({rec.series_uid, ExclusionReason::Stage1NonSegmentable});
            continue;
        }
        const SequenceClass cls = classify_stage2(rec, nullptr, adapter, rules);
        d.cls = cls;
        if (cls == SequenceClass::NonSegmentable) {
            d.reason = ExclusionReason::Stage2NonSegmentable;
            all_exclusions.push_back({rec.series_uid, ExclusionReason::Stage2NonSegmentable});
            continue;
        }
        classified.push_back({rec, cls, d.orientation});
    }

    result.session = select_scans(session_id, classified);
    for (const auto& e : result.session.exclusions) {
        decisions[e.series_uid].reason = e.reason;
        all_exclusions.push_back(e);
    }
    result.session.exclusions = std::move(all_exclusions);

    for (const auto& [cls, rec] : result.session.selected)
        decisions[rec.series_uid].selected = true;

    for (const auto& rec : series) result.decisions.push_back(decisions[rec.series_uid]);
    return result;
}

nlohmann::json curation_report_json(const CurationResult& result) {
    nlohmann::json j;
    j["session_id"] = result.session.session_id;
    j["session_excluded"] = result.session.session_excluded;
    j["selected"] = nlohmann::json::object();
    for (const auto& [cls, rec] : result.session.selected)
        j["selected"][to_string(cls)] = rec.series_uid;
    j["series"] = nlohmann::json::array();
    for (const auto& d : result.decisions) {
        nlohmann::json s;
        s["series_uid"] = d.series_uid;
        if (d.description) s["description"] = *d.description;
        s["n_instances"] = d.n_instances;
        if (d.series_number) s["series_number"] = *d.series_number;
        s["class"] = to_string(d.cls);
        s["orientation"] = to_string(d.orientation);
        if (d.mr_acq_type) s["mr_acq_type"] = *d.mr_acq_type;
        s["selected"] = d.selected;
        if (d.reason) s["reason"] = to_string(*d.reason);
        j["series"].push_back(std::move(s));
    }
    return j;
}

}  // namespace gliopipe
