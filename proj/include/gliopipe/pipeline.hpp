#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "gliopipe/adapters.hpp"
#include "gliopipe/config.hpp"
#include "gliopipe/curation.hpp"
#include "gliopipe/log.hpp"
#include "gliopipe/provenance.hpp"

namespace gliopipe {

// Subset of the four segmentable sequences.
struct SequenceSet {
    bool t1 = false, gd = false, t2 = false, flair = false;

    static SequenceSet of(std::initializer_list<SequenceClass> classes);
    bool contains(SequenceClass c) const;
    void insert(SequenceClass c);
    int size() const { return int(t1) + int(gd) + int(t2) + int(flair); }
    // Canonical combination name: class names sorted lexicographically and
    // joined with '+'; "none" for the empty set.
    std::string name() const;
    bool operator==(const SequenceSet&) const = default;
};

enum class SegRouteKind { MultiClass, BinaryWT, NoSegmentation };
const char* to_string(SegRouteKind k);

struct SegRoute {
    SegRouteKind kind = SegRouteKind::NoSegmentation;
    std::string model_key = "none";
    bool operator==(const SegRoute&) const = default;
};

// GdT1WI present -> MultiClass; else T2WI or FLAIR -> BinaryWT; else no mask.
// Total over all 16 subsets.
SegRoute route_segmentation(const SequenceSet& available);

// The registration target is the selected scan with the most instances; ties
// fall back to the selection total order. Throws EmptySession.
SequenceClass select_registration_target(const CuratedSession& selected);

// Test/demo double for the segmentation CNN: deterministic intensity
// thresholding. With GdT1WI present it emits NC/ED/ET labels (ET where
// gd > et, NC where seed < gd < nc, ED where flair/t2 > ed elsewhere);
// without GdT1WI it emits a binary whole-tumor mask.
SegMask mock_segmenter(const std::map<SequenceClass, Volume3D>& vols,
                       const MockThresholds& thresholds);

enum class SessionKind { Dicom, Manifest };

struct SessionInput {
    std::string session_id;
    std::filesystem::path path;  // DICOM directory or manifest file
    SessionKind kind = SessionKind::Dicom;
};

// Scans the input roots: a directory with .dcm files is a DICOM session, a
// .json file is a metadata-only manifest session.
std::vector<SessionInput> discover_sessions(const std::vector<std::filesystem::path>& roots);

struct SessionOutcome {
    std::string session_id;
    std::string status;  // ok | failed | excluded
    std::string error;
    bool executed_anything = false;
};

// Builds the adapter registry from the config (builtins or external
// commands). Throws ConfigError for unknown builtin names.
AdapterRegistry build_registry(const RunConfig& cfg);

class PipelineRunner {
  public:
    PipelineRunner(const RunConfig& cfg, Logger& log)
        : cfg_(cfg), registry_(build_registry(cfg)), log_(&log) {}

    // Full pipeline for one session; never throws for per-session failures.
    SessionOutcome run_session(const SessionInput& input, bool curate_only = false);

    // Bounded worker pool over sessions; one failing session never aborts
    // the batch.
    std::vector<SessionOutcome> run_batch(const std::vector<SessionInput>& inputs,
                                          bool curate_only = false);

    const AdapterRegistry& registry() const { return registry_; }

  private:
    RunConfig cfg_;
    AdapterRegistry registry_;
    Logger* log_;
};

}  // namespace gliopipe
