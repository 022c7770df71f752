#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/dicom.hpp"
#include "gliopipe/volume.hpp"

namespace gliopipe {

enum class SequenceClass { T1WI, GdT1WI, T2WI, FLAIR, NonSegmentable };
enum class Orientation { Axial, Coronal, Sagittal, Unknown };

const char* to_string(SequenceClass c);
const char* to_string(Orientation o);
std::optional<SequenceClass> sequence_class_from_string(const std::string& s);

// Keyword ruleset driving the transparent stage-1/stage-2 rules. Matching is
// over the lowercased series description, split into tokens on everything
// except [a-z0-9+]; a marker with punctuation (e.g. "+c") matches as a token
// substring.
struct Ruleset {
    std::vector<std::string> allow_tokens;
    std::vector<std::string> deny_tokens;
    std::vector<std::string> contrast_markers;
    std::size_t min_instances = 10;

    static Ruleset defaults();
    static Ruleset from_json(const nlohmann::json& j);  // strict keys
    nlohmann::json to_json() const;
};

enum class Stage1Result { Segmentable, NonSegmentable };

// Stage 1 of the cascade: deny tokens reject, then the minimum instance
// count, then a series is segmentable iff an allow token matches.
Stage1Result classify_stage1(const SeriesRecord& series, const Ruleset& rules);

// Optional drop-in replacement for the built-in stage-2 heuristic.
using ClassifierAdapter =
    std::function<std::pair<SequenceClass, double>(const SeriesRecord&, const Volume3D*)>;

// Stage 2: the adapter's answer is authoritative when present; otherwise the
// token fallback (contrast markers -> GdT1WI, then flair/t2/t1). Adapter
// exceptions are rethrown as AdapterFailure with the series uid attached.
SequenceClass classify_stage2(const SeriesRecord& series, const Volume3D* vol,
                              const ClassifierAdapter* adapter, const Ruleset& rules);

// Slice normal = row x column cosines; the dominant absolute component picks
// the plane. Missing or degenerate cosines give Unknown.
Orientation determine_orientation(const InstanceMeta& meta);

enum class ExclusionReason {
    NoSeriesDescription,
    NotOriginalPrimary,
    AngioFlag,
    Stage1NonSegmentable,
    Stage2NonSegmentable,
    NotSelected,
    SessionNotSegmentable,
};
const char* to_string(ExclusionReason r);

struct ExclusionRecord {
    std::string series_uid;
    ExclusionReason reason;
};

struct ExclusionResult {
    std::vector<SeriesRecord> kept;
    std::vector<ExclusionRecord> excluded;
};

// Series-level exclusion rules: absent description, image type without
// ORIGINAL/PRIMARY, angio flag 'Y'.
ExclusionResult apply_exclusions(const std::vector<SeriesRecord>& series);

struct ClassifiedSeries {
    SeriesRecord series;
    SequenceClass cls = SequenceClass::NonSegmentable;
    Orientation orientation = Orientation::Unknown;
};

struct CuratedSession {
    std::string session_id;
    std::map<SequenceClass, SeriesRecord> selected;  // never NonSegmentable
    std::vector<ExclusionRecord> exclusions;
    bool session_excluded = false;
};

// Picks one series per sequence class by (axial first, higher instance
// count, lower series number, lexicographic uid); flags the session excluded
// when none of GdT1WI/T2WI/FLAIR survived.
CuratedSession select_scans(const std::string& session_id,
                            const std::vector<ClassifiedSeries>& classified);

// Per-series audit row for the curation report.
struct SeriesDecision {
    std::string series_uid;
    std::optional<std::string> description;
    std::size_t n_instances = 0;
    std::optional<int> series_number;
    SequenceClass cls = SequenceClass::NonSegmentable;
    Orientation orientation = Orientation::Unknown;
    std::optional<std::string> mr_acq_type;
    bool selected = false;
    std::optional<ExclusionReason> reason;
};

struct CurationResult {
    CuratedSession session;
    std::vector<SeriesDecision> decisions;
};

// Full cascade for one session: exclusions -> stage 1 -> stage 2 ->
// orientation -> selection. Stage 2 is never invoked on series stage 1 or
// the exclusion rules removed.
CurationResult curate_session(const std::string& session_id,
                              const std::vector<SeriesRecord>& series, const Ruleset& rules,
                              const ClassifierAdapter* adapter = nullptr);

nlohmann::json curation_report_json(const CurationResult& result);

}  // namespace gliopipe
