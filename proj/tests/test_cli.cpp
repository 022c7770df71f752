#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <random>
#include <sstream>

#include "gliopipe/adapters.hpp"
#include "gliopipe/nifti.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/util.hpp"
#include "support/phantom.hpp"

using namespace gliopipe;
namespace fs = std::filesystem;

namespace {

std::string cli_binary() {
    const char* bin = std::getenv("GLIOPIPE_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "GLIOPIPE_BIN must point at the CLI binary");
    return bin;
}

fs::path fresh_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "gliopipe_cli_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

struct CliResult {
    int exit_code;
    std::string out;
    std::string err;
};

CliResult run_cli(const fs::path& dir, const std::string& args) {
    const fs::path out = dir / "stdout.txt", err = dir / "stderr.txt";
    const std::string cmd =
        cli_binary() + " " + args + " > " + out.string() + " 2> " + err.string();
    const int code = run_subprocess({"/bin/sh", "-c", cmd}, 120.0);
    return {code, read_text_file(out), read_text_file(err)};
}

std::map<std::string, std::string> tree_hashes(const fs::path& root) {
    std::map<std::string, std::string> hashes;
    for (auto it = fs::recursive_directory_iterator(root);
         it != fs::recursive_directory_iterator(); ++it)
        if (it->is_regular_file())
            hashes[fs::relative(it->path(), root).string()] = hash_file(it->path());
    return hashes;
}

}  // namespace

TEST_CASE("cli: malformed config exits 2") {
    const auto dir = fresh_dir("badcfg");
    write_text_file(dir / "config.json", R"({"output_root": "o", "bogus": 1})");
    const auto r = run_cli(dir, "curate --config " + (dir / "config.json").string());
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("config error") != std::string::npos);

    const auto r2 = run_cli(dir, "curate --config " + (dir / "missing.json").string());
    CHECK(r2.exit_code == 2);
}

TEST_CASE("cli: empty input root warns and exits 0") {
    const auto dir = fresh_dir("empty");
    fs::create_directories(dir / "in");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    const auto r = run_cli(dir, "curate --config " + (dir / "config.json").string());
    CHECK(r.exit_code == 0);
    CHECK(r.err.find("no sessions") != std::string::npos);
}

TEST_CASE("cli: curate emits one report per session") {
    const auto dir = fresh_dir("curate");
    testing::write_phantom_session(dir / "in", "a1");
    testing::write_phantom_session(dir / "in", "a2");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    const auto r = run_cli(dir, "curate --config " + (dir / "config.json").string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "out" / "sessions" / "a1" / "curation.json"));
    CHECK(fs::exists(dir / "out" / "sessions" / "a2" / "curation.json"));
    const auto report = nlohmann::json::parse(
        read_text_file(dir / "out" / "sessions" / "a1" / "curation.json"));
    CHECK(report["selected"].size() == 3);
}

TEST_CASE("cli: full run produces masks and features; rerun is byte-identical") {
    const auto dir = fresh_dir("run");
    testing::write_phantom_session(dir / "in", "p1");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {2, -3, 1}).dump());
    const auto r = run_cli(dir, "run --config " + (dir / "config.json").string());
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("p1\tok") != std::string::npos);
    CHECK(fs::exists(dir / "out" / "sessions" / "p1" / "mask_patient.nii"));
    CHECK(fs::exists(dir / "out" / "sessions" / "p1" / "features.csv"));

    const auto before = tree_hashes(dir / "out");
    const auto r2 = run_cli(dir, "run --config " + (dir / "config.json").string());
    CHECK(r2.exit_code == 0);
    CHECK(tree_hashes(dir / "out") == before);
    // every stage reports skipped on the rerun (one JSON object per line)
    int skipped = 0, executed = 0;
    std::istringstream lines(r2.err);
    std::string line;
    while (std::getline(lines, line)) {
        if (line.empty() || line[0] != '{') continue;
        const auto j = nlohmann::json::parse(line);
        if (j.value("event", "") != "stage") continue;
        if (j.value("status", "") == "skipped") ++skipped;
        else ++executed;
    }
    CHECK(skipped >= 9);
    CHECK(executed == 0);
}

TEST_CASE("cli: --sessions filter only touches the listed sessions") {
    const auto dir = fresh_dir("filter");
    testing::write_phantom_session(dir / "in", "keep");
    testing::write_phantom_session(dir / "in", "skip");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    const auto r = run_cli(
        dir, "run --config " + (dir / "config.json").string() + " --sessions keep");
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(dir / "out" / "sessions" / "keep"));
    CHECK_FALSE(fs::exists(dir / "out" / "sessions" / "skip"));
}

TEST_CASE("cli: a failing session yields exit 1 but the rest completes") {
    const auto dir = fresh_dir("partial");
    testing::write_phantom_session(dir / "in", "good");
    fs::create_directories(dir / "in" / "bad");
    write_text_file(dir / "in" / "bad" / "x.dcm", "garbage");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    const auto r = run_cli(dir, "run --config " + (dir / "config.json").string());
    CHECK(r.exit_code == 1);
    CHECK(fs::exists(dir / "out" / "sessions" / "good" / "mask_patient.nii"));
    CHECK(r.out.find("bad\tfailed") != std::string::npos);
}

TEST_CASE("cli: segment routes and runs the adapter on preprocessed volumes") {
    const auto dir = fresh_dir("segment");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    fs::create_directories(dir / "vols");
    auto gd = Volume3D::create({8, 8, 8}, {1, 1, 1});
    gd.at(4, 4, 4) = 500.0f;
    nifti::write(dir / "vols" / "GdT1WI.nii", gd);
    nifti::write(dir / "vols" / "T2WI.nii", Volume3D::create({8, 8, 8}, {1, 1, 1}));

    const auto r = run_cli(dir, "segment --config " + (dir / "config.json").string() +
                                    " --session-dir " + (dir / "vols").string() + " --out " +
                                    (dir / "vols" / "mask.nii").string());
    CHECK(r.exit_code == 0);
    const auto route = nlohmann::json::parse(read_text_file(dir / "vols" / "route.json"));
    CHECK(route["route"] == "MultiClass");
    CHECK(route["model_key"] == "GdT1WI+T2WI");
    const auto mask = nifti::read(dir / "vols" / "mask.nii", VoxelKind::Label);
    CHECK(mask.at(4, 4, 4) == seg_label::ET);

    // T1-only input: no mask, still exit 0
    fs::create_directories(dir / "t1only");
    nifti::write(dir / "t1only" / "T1WI.nii", Volume3D::create({4, 4, 4}, {1, 1, 1}));
    const auto r2 = run_cli(dir, "segment --config " + (dir / "config.json").string() +
                                     " --session-dir " + (dir / "t1only").string() +
                                     " --out " + (dir / "t1only" / "mask.nii").string());
    CHECK(r2.exit_code == 0);
    CHECK_FALSE(fs::exists(dir / "t1only" / "mask.nii"));
    const auto route2 = nlohmann::json::parse(read_text_file(dir / "t1only" / "route.json"));
    CHECK(route2["route"] == "NoSegmentation");
}

TEST_CASE("cli: radiomics subcommand writes the fixed-width vector") {
    const auto dir = fresh_dir("radiomics");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    fs::create_directories(dir / "vols");
    std::mt19937 rng(3);
    for (const char* name : {"GdT1WI", "T2WI"}) {
        auto v = Volume3D::create({8, 8, 8}, {1, 1, 1});
        for (auto& x : v.voxels) x = static_cast<float>(rng() % 200);
        nifti::write(dir / "vols" / (std::string(name) + ".nii"), v);
    }
    auto mask = Volume3D::create({8, 8, 8}, {1, 1, 1}, VoxelKind::Label);
    for (std::size_t i = 0; i < 32; ++i) mask.voxels[i] = 1.0f;
    for (std::size_t i = 64; i < 96; ++i) mask.voxels[i] = 4.0f;
    nifti::write(dir / "case7.nii", mask);

    const auto r = run_cli(dir, "radiomics --config " + (dir / "config.json").string() +
                                    " --images " + (dir / "vols").string() + " --mask " +
                                    (dir / "case7.nii").string() + " --out " +
                                    (dir / "features").string());
    CHECK(r.exit_code == 0);
    const auto csv = read_text_file(dir / "features.csv");
    CHECK(std::count(csv.begin(), csv.end(), ',') == 2 * 1930);
    CHECK(csv.rfind("session_id,", 0) == 0);
    const auto j = nlohmann::json::parse(read_text_file(dir / "features.json"));
    CHECK(j["session_id"] == "case7");
    CHECK(j["features"].size() == 1930);
}

TEST_CASE("cli: evaluate compares predicted and refined masks") {
    const auto dir = fresh_dir("evaluate");
    fs::create_directories(dir / "pred");
    fs::create_directories(dir / "refined");
    auto m = Volume3D::create({6, 6, 6}, {1, 1, 1}, VoxelKind::Label);
    for (std::size_t i = 0; i < 20; ++i) m.voxels[i] = 1.0f;
    nifti::write(dir / "pred" / "s1.nii", m);
    nifti::write(dir / "refined" / "s1.nii", m);
    nifti::write(dir / "refined" / "lonely.nii", m);

    const auto r = run_cli(dir, "evaluate --pred " + (dir / "pred").string() +
                                    " --refined " + (dir / "refined").string() + " --out " +
                                    (dir / "report.json").string());
    CHECK(r.exit_code == 0);
    const auto report = nlohmann::json::parse(read_text_file(dir / "report.json"));
    CHECK(report["sessions"]["s1"]["WT"] == 1.0);
    CHECK(report["unpaired"][0] == "lonely");
}

TEST_CASE("cli: inspect prints the provenance") {
    const auto dir = fresh_dir("inspect");
    testing::write_phantom_session(dir / "in", "z1");
    write_text_file(dir / "config.json",
                    testing::phantom_config(dir / "in", dir / "out", {0, 0, 0}).dump());
    REQUIRE(run_cli(dir, "run --config " + (dir / "config.json").string()).exit_code == 0);
    const auto r = run_cli(
        dir, "inspect --config " + (dir / "config.json").string() + " --session z1");
    CHECK(r.exit_code == 0);
    CHECK(r.out.find("\"session_id\": \"z1\"") != std::string::npos);
    CHECK(r.out.find("\"stages\"") != std::string::npos);

    const auto r2 = run_cli(
        dir, "inspect --config " + (dir / "config.json").string() + " --session nope");
    CHECK(r2.exit_code == 1);
}
