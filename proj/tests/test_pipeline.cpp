#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "gliopipe/evaluation.hpp"
#include "gliopipe/nifti.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/util.hpp"
#include "support/dicom_fixture.hpp"
#include "support/phantom.hpp"

using namespace gliopipe;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gliopipe_pipeline_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

SequenceSet set_of(std::initializer_list<SequenceClass> classes) {
    return SequenceSet::of(classes);
}

// collects (path, content-hash) for every regular file under root;
// provenance carries wall-clock timings, so it can be excluded when
// comparing two independent runs
std::map<std::string, std::string> tree_hashes(const fs::path& root,
                                               bool include_provenance = true) {
    std::map<std::string, std::string> out;
    for (auto it = fs::recursive_directory_iterator(root);
         it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file()) continue;
        if (!include_provenance && it->path().filename() == "provenance.json") continue;
        out[fs::relative(it->path(), root).string()] = hash_file(it->path());
    }
    return out;
}

}  // namespace

TEST_CASE("routing truth table is exhaustive over all 16 subsets") {
    using SC = SequenceClass;
    const std::array<SC, 4> all{SC::T1WI, SC::GdT1WI, SC::T2WI, SC::FLAIR};
    int multi = 0, binary = 0, none = 0;
    for (int bits = 0; bits < 16; ++bits) {
        SequenceSet s;
        for (int b = 0; b < 4; ++b)
            if (bits & (1 << b)) s.insert(all[static_cast<std::size_t>(b)]);
        const auto route = route_segmentation(s);
        if (s.contains(SC::GdT1WI)) {
            CHECK(route.kind == SegRouteKind::MultiClass);
            CHECK(route.model_key == s.name());
            ++multi;
        } else if (s.contains(SC::T2WI) || s.contains(SC::FLAIR)) {
            CHECK(route.kind == SegRouteKind::BinaryWT);
            CHECK(route.model_key == s.name());
            ++binary;
        } else {
            CHECK(route.kind == SegRouteKind::NoSegmentation);
            CHECK(route.model_key == "none");
            ++none;
        }
    }
    CHECK(multi == 8);
    CHECK(binary == 6);
    CHECK(none == 2);  // {} and {T1WI}
}

TEST_CASE("routing examples") {
    CHECK(route_segmentation(set_of({SequenceClass::GdT1WI})).kind ==
          SegRouteKind::MultiClass);
    CHECK(route_segmentation(set_of({SequenceClass::T1WI, SequenceClass::FLAIR})).kind ==
          SegRouteKind::BinaryWT);
    CHECK(route_segmentation(set_of({SequenceClass::T1WI})).kind ==
          SegRouteKind::NoSegmentation);
    CHECK(route_segmentation(set_of({SequenceClass::T2WI, SequenceClass::FLAIR})).model_key ==
          "FLAIR+T2WI");
    CHECK(route_segmentation(set_of({})).model_key == "none");
}

namespace {

SeriesRecord selected_series(const std::string& uid, std::size_t n, int series_number) {
    SeriesRecord rec;
    rec.series_uid = uid;
    InstanceMeta m;
    m.series_uid = uid;
    m.series_number = series_number;
    rec.instances.push_back(m);
    rec.n_instances = n;
    return rec;
}

}  // namespace

TEST_CASE("registration target: highest instance count, documented tie-break") {
    CuratedSession s;
    s.selected.emplace(SequenceClass::T1WI, selected_series("a", 30, 1));
    s.selected.emplace(SequenceClass::GdT1WI, selected_series("b", 120, 2));
    CHECK(select_registration_target(s) == SequenceClass::GdT1WI);

    CuratedSession single;
    single.selected.emplace(SequenceClass::FLAIR, selected_series("c", 25, 9));
    CHECK(select_registration_target(single) == SequenceClass::FLAIR);

    // 60/60 tie: T2 has the lower series number
    CuratedSession tie;
    tie.selected.emplace(SequenceClass::T2WI, selected_series("t2", 60, 4));
    tie.selected.emplace(SequenceClass::FLAIR, selected_series("fl", 60, 7));
    CHECK(select_registration_target(tie) == SequenceClass::T2WI);

    CuratedSession empty;
    CHECK_THROWS_AS(select_registration_target(empty), EmptySession);
}

TEST_CASE("mock segmenter labels a threshold-coded phantom exactly") {
    MockThresholds t;  // seed 20, et 100, nc 70, ed 20
    auto gd = Volume3D::create({6, 6, 1}, {1, 1, 1});
    auto flair = gd;
    // author regions at the documented thresholds
    gd.at(1, 1, 0) = 150.0f;   // > et -> ET
    gd.at(2, 1, 0) = 50.0f;    // seed < v < nc -> NC
    flair.at(3, 1, 0) = 30.0f;  // > ed, gd quiet -> ED
    const auto mask = mock_segmenter(
        {{SequenceClass::GdT1WI, gd}, {SequenceClass::FLAIR, flair}}, t);
    CHECK(mask.vol.at(1, 1, 0) == seg_label::ET);
    CHECK(mask.vol.at(2, 1, 0) == seg_label::NC);
    CHECK(mask.vol.at(3, 1, 0) == seg_label::ED);
    CHECK(mask.vol.at(0, 0, 0) == seg_label::BG);
}

TEST_CASE("mock segmenter: all-zero inputs give an all-background mask") {
    const auto zero = Volume3D::create({4, 4, 4}, {1, 1, 1});
    const auto mask = mock_segmenter({{SequenceClass::GdT1WI, zero}}, {});
    CHECK(mask.vol.count_nonzero() == 0);
}

TEST_CASE("mock segmenter: binary route emits only {0, WT}") {
    auto flair = Volume3D::create({4, 4, 4}, {1, 1, 1});
    flair.at(1, 1, 1) = 99.0f;
    flair.at(2, 2, 2) = 99.0f;
    const auto mask = mock_segmenter({{SequenceClass::FLAIR, flair}}, {});
    std::set<float> labels(mask.vol.voxels.begin(), mask.vol.voxels.end());
    CHECK(labels == std::set<float>{0.0f, 1.0f});
    CHECK(mask.vol.count_nonzero() == 2);
}

TEST_CASE("phantom session runs end to end with Dice 1.0 and resumes untouched") {
    const auto dir = fresh_dir("e2e");
    const auto phantom = testing::write_phantom_session(dir / "in", "case1");
    const auto cfg_json =
        testing::phantom_config(dir / "in", dir / "out", {2, -3, 1});
    RunConfig cfg = RunConfig::from_json(cfg_json, dir);

    std::ostringstream log_sink;
    Logger log(log_sink);
    PipelineRunner runner(cfg, log);
    const auto sessions = discover_sessions(cfg.input_roots);
    REQUIRE(sessions.size() == 1);
    CHECK(sessions[0].session_id == "case1");

    const auto outcome = runner.run_session(sessions[0]);
    REQUIRE(outcome.status == "ok");

    const fs::path sdir = dir / "out" / "sessions" / "case1";
    const auto mask = nifti::read(sdir / "mask_patient.nii", VoxelKind::Label);
    CHECK(mask.voxels == phantom.truth_mask.voxels);  // exact labels, Dice 1.0
    CHECK(dice(mask, phantom.truth_mask) == 1.0);
    // composites in patient space follow the same warp
    const auto wt = nifti::read(sdir / "wt_patient.nii", VoxelKind::Label);
    const auto wt_truth = merge_mask_classes(SegMask{phantom.truth_mask}).wt;
    CHECK(dice(wt, wt_truth) == 1.0);

    // provenance: every output file appears in exactly one stage entry
    const auto prov = SessionProvenance::from_json(
        nlohmann::json::parse(read_text_file(sdir / "provenance.json")));
    CHECK(prov.status == "ok");
    CHECK(prov.route == "MultiClass");
    CHECK(prov.model_key == "FLAIR+GdT1WI+T2WI");
    REQUIRE(prov.patient2atlas.has_value());
    CHECK(prov.patient2atlas->at(0, 3) == doctest::Approx(2.0));
    std::map<std::string, int> output_refs;
    for (const auto& st : prov.stages) {
        CHECK(st.status == "ok");
        for (const auto& ref : st.outputs) {
            output_refs[ref.path] += 1;
            const auto p = sdir / ref.path;
            REQUIRE(fs::exists(p));
            CHECK(hash_file(p) == ref.hash);
        }
    }
    for (const auto& [path, count] : output_refs) CHECK(count == 1);
    CHECK(output_refs.contains("mask_patient.nii"));
    CHECK(output_refs.contains("features.csv"));

    // the feature vector has the fixed 1930-column schema
    const auto csv = read_text_file(sdir / "features.csv");
    const auto header_end = csv.find('\n');
    CHECK(std::count(csv.begin(), csv.begin() + static_cast<long>(header_end), ',') == 1930);

    // rerun: everything skips, nothing is rewritten
    const auto before = tree_hashes(dir / "out");
    const auto outcome2 = runner.run_session(sessions[0]);
    CHECK(outcome2.status == "ok");
    CHECK_FALSE(outcome2.executed_anything);
    CHECK(tree_hashes(dir / "out") == before);
}

TEST_CASE("session with only non-segmentable series is excluded, no segmentation runs") {
    const auto dir = fresh_dir("excluded");
    // a DWI-only session: stage 1 denies it
    testing::DicomFixture f;
    f.series_uid = "1.9.1";
    f.description = "DWI";
    f.image_type = std::vector<std::string>{"ORIGINAL", "PRIMARY"};
    f.rows = 4;
    f.cols = 4;
    f.iop = std::array<double, 6>{1, 0, 0, 0, 1, 0};
    f.pixel_spacing = std::array<double, 2>{1, 1};
    fs::create_directories(dir / "in" / "dwi_only");
    for (int k = 0; k < 3; ++k) {
        f.sop_uid = "1.9.1." + std::to_string(k + 1);
        f.instance_number = k + 1;
        f.ipp = std::array<double, 3>{0, 0, static_cast<double>(k)};
        f.pixels.assign(16, 100);
        write_file(dir / "in" / "dwi_only" / ("f" + std::to_string(k) + ".dcm"),
                   testing::make_dicom(f));
    }
    RunConfig cfg = RunConfig::from_json(
        testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}), dir);
    std::ostringstream sink;
    Logger log(sink);
    PipelineRunner runner(cfg, log);
    const auto outcome = runner.run_session(discover_sessions(cfg.input_roots)[0]);
    CHECK(outcome.status == "excluded");
    const auto prov = SessionProvenance::from_json(nlohmann::json::parse(
        read_text_file(dir / "out" / "sessions" / "dwi_only" / "provenance.json")));
    CHECK(prov.status == "excluded");
    CHECK(prov.route == "NoSegmentation");
    REQUIRE(prov.stages.size() == 1);  // curation only
    CHECK(prov.stages[0].name == "curate");
}

TEST_CASE("missing segmentation adapter fails the session but keeps curation artifacts") {
    const auto dir = fresh_dir("missing_adapter");
    testing::write_phantom_session(dir / "in", "case1");
    auto cfg_json = testing::phantom_config(dir / "in", dir / "out", {0, 0, 0});
    cfg_json["adapters"].erase("Segmentation");
    RunConfig cfg = RunConfig::from_json(cfg_json, dir);
    std::ostringstream sink;
    Logger log(sink);
    PipelineRunner runner(cfg, log);
    const auto outcome = runner.run_session(discover_sessions(cfg.input_roots)[0]);
    CHECK(outcome.status == "failed");
    CHECK(outcome.error.find("Segmentation") != std::string::npos);
    const fs::path sdir = dir / "out" / "sessions" / "case1";
    CHECK(fs::exists(sdir / "curation.json"));
    const auto prov = SessionProvenance::from_json(
        nlohmann::json::parse(read_text_file(sdir / "provenance.json")));
    CHECK(prov.status == "failed");
}

TEST_CASE("one failing session leaves the other sessions bit-identical") {
    const auto dir = fresh_dir("isolation");
    testing::write_phantom_session(dir / "in", "good1");
    testing::write_phantom_session(dir / "in", "good2");

    RunConfig cfg = RunConfig::from_json(
        testing::phantom_config(dir / "in", dir / "out_a", {1, 0, 0}), dir);
    std::ostringstream sink;
    Logger log(sink);
    PipelineRunner runner(cfg, log);
    const auto outcomes = runner.run_batch(discover_sessions(cfg.input_roots));
    REQUIRE(outcomes.size() == 2);
    CHECK(outcomes[0].status == "ok");
    CHECK(outcomes[1].status == "ok");

    // same corpus plus a session whose pixel data is corrupt
    testing::write_phantom_session(dir / "in2", "good1");
    testing::write_phantom_session(dir / "in2", "good2");
    fs::create_directories(dir / "in2" / "bad");
    write_text_file(dir / "in2" / "bad" / "broken.dcm", "not dicom at all");
    RunConfig cfg2 = RunConfig::from_json(
        testing::phantom_config(dir / "in2", dir / "out_b", {1, 0, 0}), dir);
    PipelineRunner runner2(cfg2, log);
    const auto outcomes2 = runner2.run_batch(discover_sessions(cfg2.input_roots));
    REQUIRE(outcomes2.size() == 3);
    int failed = 0;
    for (const auto& o : outcomes2) failed += o.status == "failed";
    CHECK(failed == 1);

    for (const std::string id : {"good1", "good2"}) {
        const auto a = tree_hashes(dir / "out_a" / "sessions" / id, false);
        const auto b = tree_hashes(dir / "out_b" / "sessions" / id, false);
        CHECK(a == b);
    }
}

TEST_CASE("external process adapter speaks the descriptor protocol") {
    const auto dir = fresh_dir("process_adapter");
    // a bias-correction adapter implemented as a python script: copies
    // inputs[0] to outputs[0]
    const fs::path script = dir / "bias.py";
    write_text_file(script,
                    "#!/usr/bin/env python3\n"
                    "import json, shutil, sys\n"
                    "d = json.load(open(sys.argv[1]))\n"
                    "assert d['kind'] == 'BiasCorrection'\n"
                    "assert d['params']['flavor'] == 'passthrough'\n"
                    "shutil.copy(d['inputs'][0], d['outputs'][0])\n");

    ProcessAdapter adapter("bias.py", {"python3", script.string()},
                           {{"flavor", "passthrough"}}, 30.0);
    const fs::path in = dir / "in.nii", out = dir / "out.nii";
    auto vol = Volume3D::create({3, 3, 3}, {1, 1, 1});
    vol.at(1, 1, 1) = 42.0f;
    nifti::write(in, vol);

    AdapterInvocation inv;
    inv.kind = AdapterKind::BiasCorrection;
    inv.stage = "bias_test";
    inv.inputs = {in};
    inv.outputs = {out};
    adapter.run(inv);
    CHECK(nifti::read(out).at(1, 1, 1) == 42.0f);

    // nonzero exit becomes AdapterFailure
    const fs::path bad = dir / "bad.py";
    write_text_file(bad, "import sys\nsys.exit(3)\n");
    ProcessAdapter failing("bad.py", {"python3", bad.string()}, {}, 30.0);
    CHECK_THROWS_AS(failing.run(inv), AdapterFailure);

    // timeout is enforced
    const fs::path slow = dir / "slow.py";
    write_text_file(slow, "import time\ntime.sleep(30)\n");
    ProcessAdapter sleepy("slow.py", {"python3", slow.string()}, {}, 0.5);
    CHECK_THROWS_AS(sleepy.run(inv), AdapterFailure);
}

TEST_CASE("manifest sessions curate identically to their DICOM twins") {
    const auto dir = fresh_dir("manifest_eq");
    testing::write_phantom_session(dir / "in_dicom", "twin");

    // build the manifest for the same series inventory
    std::vector<InstanceMeta> metas;
    for (auto it = fs::recursive_directory_iterator(dir / "in_dicom");
         it != fs::recursive_directory_iterator(); ++it)
        if (it->is_regular_file()) metas.push_back(parse_dicom_file(read_file(it->path())));
    const auto series = assemble_series(metas);
    fs::create_directories(dir / "in_manifest");
    write_text_file(dir / "in_manifest" / "twin.json",
                    manifest_to_json("twin", series).dump(2) + "\n");

    std::ostringstream sink;
    Logger log(sink);
    RunConfig cfg_a = RunConfig::from_json(
        testing::phantom_config(dir / "in_dicom", dir / "out_a", {0, 0, 0}), dir);
    RunConfig cfg_b = RunConfig::from_json(
        testing::phantom_config(dir / "in_manifest", dir / "out_b", {0, 0, 0}), dir);
    PipelineRunner ra(cfg_a, log), rb(cfg_b, log);
    CHECK(ra.run_session(discover_sessions(cfg_a.input_roots)[0], /*curate_only=*/true).status ==
          "ok");
    CHECK(rb.run_session(discover_sessions(cfg_b.input_roots)[0]).status == "ok");

    const auto report_a = nlohmann::json::parse(
        read_text_file(dir / "out_a" / "sessions" / "twin" / "curation.json"));
    const auto report_b = nlohmann::json::parse(
        read_text_file(dir / "out_b" / "sessions" / "twin" / "curation.json"));
    CHECK(report_a["selected"] == report_b["selected"]);
    CHECK(report_a["session_excluded"] == report_b["session_excluded"]);
    for (std::size_t i = 0; i < report_a["series"].size(); ++i) {
        CHECK(report_a["series"][i]["class"] == report_b["series"][i]["class"]);
        CHECK(report_a["series"][i]["orientation"] == report_b["series"][i]["orientation"]);
        CHECK(report_a["series"][i]["selected"] == report_b["series"][i]["selected"]);
    }
}

TEST_CASE("a configured stage-2 classifier adapter overrides the token fallback") {
    const auto dir = fresh_dir("stage2_adapter");
    testing::write_phantom_session(dir / "in", "case1");
    auto cfg_json = testing::phantom_config(dir / "in", dir / "out", {0, 0, 0});
    cfg_json["adapters"]["ClassifierStage2"] = {
        {"builtin", "fixed"}, {"params", {{"class", "T2WI"}, {"confidence", 0.9}}}};
    RunConfig cfg = RunConfig::from_json(cfg_json, dir);
    std::ostringstream sink;
    Logger log(sink);
    PipelineRunner runner(cfg, log);
    const auto outcome =
        runner.run_session(discover_sessions(cfg.input_roots)[0], /*curate_only=*/true);
    CHECK(outcome.status == "ok");
    const auto report = nlohmann::json::parse(
        read_text_file(dir / "out" / "sessions" / "case1" / "curation.json"));
    // every segmentable series got the adapter's answer; one T2WI winner
    CHECK(report["selected"].size() == 1);
    CHECK(report["selected"].contains("T2WI"));
    // ties on orientation and count break on the series number, so the
    // winner is the series numbered 1
    CHECK(report["selected"]["T2WI"] == "1.2.840.99.100.case1");
}

TEST_CASE("environment variables override workers and adapter timeout only") {
    setenv("GLIOPIPE_WORKERS", "7", 1);
    setenv("GLIOPIPE_ADAPTER_TIMEOUT", "12.5", 1);
    const auto cfg = RunConfig::from_json(
        {{"output_root", "o"}, {"workers", 2}, {"adapter_timeout_sec", 60.0}}, ".");
    unsetenv("GLIOPIPE_WORKERS");
    unsetenv("GLIOPIPE_ADAPTER_TIMEOUT");
    CHECK(cfg.workers == 7);
    CHECK(cfg.adapter_timeout_sec == 12.5);
}

TEST_CASE("config rejects unknown keys and bad values") {
    CHECK_THROWS_AS(RunConfig::from_json({{"output_root", "o"}, {"bogus", 1}}, "."),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"output_root", "o"}, {"workers", 0}}, "."),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({{"output_root", "o"}, {"alpha", 1.5}}, "."),
                    ConfigError);
    CHECK_THROWS_AS(RunConfig::from_json({}, "."), ConfigError);
    // unknown builtin names surface when the registry is built, before any
    // session runs
    CHECK_THROWS_AS(
        build_registry(RunConfig::from_json(
            {{"output_root", "o"},
             {"adapters", {{"Segmentation", {{"builtin", "nope"}}}}}},
            ".")),
        ConfigError);
    // builtin and command are mutually exclusive
    CHECK_THROWS_AS(
        RunConfig::from_json(
            {{"output_root", "o"},
             {"adapters",
              {{"Segmentation",
                {{"builtin", "mock"}, {"command", {"seg"}}}}}}},
            "."),
        ConfigError);
}
