#include <filesystem>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "gliopipe/eval_report.hpp"
#include "gliopipe/nifti.hpp"
#include "gliopipe/pipeline.hpp"
#include "gliopipe/radiomics.hpp"
#include "gliopipe/util.hpp"

namespace fs = std::filesystem;
using namespace gliopipe;

namespace {

int run_sessions(const std::string& config_path, const std::vector<std::string>& inputs,
                 const std::vector<std::string>& sessions, bool curate_only) {
    RunConfig cfg = RunConfig::load(config_path);
    if (!inputs.empty()) {
        cfg.input_roots.clear();
        for (const auto& i : inputs) cfg.input_roots.push_back(fs::absolute(i));
    }
    if (cfg.input_roots.empty()) throw ConfigError("no input roots configured");

    Logger log;
    auto all = discover_sessions(cfg.input_roots);
    if (!sessions.empty()) {
        std::vector<SessionInput> filtered;
        for (const auto& s : all)
            if (std::find(sessions.begin(), sessions.end(), s.session_id) != sessions.end())
                filtered.push_back(s);
        all = std::move(filtered);
    }
    if (all.empty()) {
        log.event("warning", {{"message", "no sessions found under the input roots"}});
        return 0;
    }

    PipelineRunner runner(cfg, log);
    const auto outcomes = runner.run_batch(all, curate_only);
    int failed = 0;
    for (const auto& o : outcomes) {
        std::cout << o.session_id << "\t" << o.status
                  << (o.error.empty() ? "" : "\t" + o.error) << "\n";
        if (o.status == "failed") ++failed;
    }
    return failed > 0 ? 1 : 0;
}

int cmd_segment(const std::string& config_path, const std::string& session_dir,
                const std::string& out_mask) {
    RunConfig cfg = RunConfig::load(config_path);
    Logger log;
    PipelineRunner runner(cfg, log);

    std::map<SequenceClass, fs::path> present;
    SequenceSet available;
    for (SequenceClass c : radiomics::kImageChannels) {
        const fs::path p = fs::path(session_dir) / (std::string(to_string(c)) + ".nii");
        if (fs::exists(p)) {
            present[c] = p;
            available.insert(c);
        }
    }
    const SegRoute route = route_segmentation(available);
    nlohmann::json rj{{"route", to_string(route.kind)}, {"model_key", route.model_key}};
    write_text_file(fs::path(session_dir) / "route.json", rj.dump(2) + "\n");
    std::cout << rj.dump() << "\n";
    if (route.kind == SegRouteKind::NoSegmentation) return 0;

    std::vector<std::string> channels;
    for (const auto& [c, p] : present) channels.push_back(to_string(c));
    std::sort(channels.begin(), channels.end());

    AdapterInvocation inv;
    inv.kind = AdapterKind::Segmentation;
    inv.stage = "segment";
    for (const auto& c : channels) inv.inputs.push_back(present.at(*sequence_class_from_string(c)));
    inv.params = {{"route", to_string(route.kind)},
                  {"model_key", route.model_key},
                  {"channels", channels},
                  {"thresholds",
                   {{"seed", cfg.mock_thresholds.seed},
                    {"et", cfg.mock_thresholds.et},
                    {"nc", cfg.mock_thresholds.nc},
                    {"ed", cfg.mock_thresholds.ed}}}};
    inv.outputs = {fs::path(out_mask)};
    runner.registry().require(AdapterKind::Segmentation).run(inv);
    return 0;
}

int cmd_radiomics(const std::string& config_path, const std::string& images_dir,
                  const std::string& mask_path, const std::string& out_prefix, int binary_flag) {
    RunConfig cfg = RunConfig::load(config_path);
    std::map<SequenceClass, Volume3D> images;
    for (SequenceClass c : radiomics::kImageChannels) {
        const fs::path p = fs::path(images_dir) / (std::string(to_string(c)) + ".nii");
        if (fs::exists(p)) images[c] = nifti::read(p);
    }
    const Volume3D mask = nifti::read(mask_path, VoxelKind::Label);
    bool binary_wt;
    if (binary_flag == 0 || binary_flag == 1) {
        binary_wt = binary_flag == 1;
    } else {
        binary_wt = true;
        for (float v : mask.voxels)
            if (v == 2.0f || v == 4.0f) binary_wt = false;
    }
    const auto masks = radiomics::class_masks_from(mask, binary_wt);
    radiomics::Params rp;
    rp.bin_width = cfg.bin_width;
    const std::string session_id = fs::path(mask_path).stem().string();
    const auto fv = radiomics::extract_all(session_id, images, masks, rp);
    write_text_file(out_prefix + ".csv",
                    radiomics::feature_csv_header() + radiomics::feature_csv_row(fv));
    write_text_file(out_prefix + ".json", radiomics::feature_json(fv).dump(2) + "\n");
    std::cout << "features: " << fv.count_non_null() << " of " << fv.entries.size()
              << " non-null\n";
    return 0;
}

int cmd_evaluate(const std::string& pred, const std::string& refined, const std::string& grades,
                 const std::string& out, const std::string& config_path) {
    EvalOptions opt;
    if (!config_path.empty()) opt.alpha = RunConfig::load(config_path).alpha;
    if (!grades.empty()) opt.grades_csv = fs::path(grades);
    const auto report = evaluate_masks(pred, refined, opt);
    if (out.empty())
        std::cout << report.dump(2) << "\n";
    else
        write_text_file(out, report.dump(2) + "\n");
    return 0;
}

int cmd_inspect(const std::string& config_path, const std::string& session) {
    RunConfig cfg = RunConfig::load(config_path);
    const fs::path p = cfg.output_root / "sessions" / session / "provenance.json";
    if (!fs::exists(p)) {
        std::cerr << "no provenance for session " << session << " under "
                  << cfg.output_root << "\n";
        return 1;
    }
    std::cout << nlohmann::json::parse(read_text_file(p)).dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"MRI session curation, tumor segmentation routing, and radiomics"};
    app.require_subcommand(1);

    std::string config_path, session_dir, out_path, images_dir, mask_path, grades, session_id;
    std::string out_prefix = "features";
    std::vector<std::string> inputs, sessions;
    int binary_flag = -1;

    auto* curate = app.add_subcommand("curate", "curate sessions and write reports");
    curate->add_option("--config", config_path, "run configuration file")->required();
    curate->add_option("--input", inputs, "override the configured input roots");
    curate->add_option("--sessions", sessions, "only process the listed session ids");

    auto* run = app.add_subcommand("run", "full pipeline: curate, preprocess, segment, measure");
    run->add_option("--config", config_path, "run configuration file")->required();
    run->add_option("--input", inputs, "override the configured input roots");
    run->add_option("--sessions", sessions, "only process the listed session ids");

    auto* segment = app.add_subcommand("segment", "route and segment preprocessed volumes");
    segment->add_option("--config", config_path, "run configuration file")->required();
    segment->add_option("--session-dir", session_dir, "directory with <Class>.nii volumes")
        ->required();
    segment->add_option("--out", out_path, "output mask path")->required();

    auto* rad = app.add_subcommand("radiomics", "compute the radiomic feature vector");
    rad->add_option("--config", config_path, "run configuration file")->required();
    rad->add_option("--images", images_dir, "directory with <Class>.nii volumes")->required();
    rad->add_option("--mask", mask_path, "label mask (.nii)")->required();
    rad->add_option("--out", out_prefix, "output prefix (.csv/.json appended)");
    rad->add_flag("--binary-wt{1},--multi-class{0}", binary_flag,
                  "force binary or multi-class mask interpretation");

    auto* eval = app.add_subcommand("evaluate", "compare predicted and refined masks");
    eval->add_option("--pred", session_dir, "prediction dir (run output root or flat)")
        ->required();
    eval->add_option("--refined", images_dir, "refined masks dir (<id>.nii)")->required();
    eval->add_option("--grades", grades, "optional session_id,grade csv");
    eval->add_option("--out", out_path, "report path (stdout when omitted)");
    eval->add_option("--config", config_path, "run configuration (for the alpha threshold)");

    auto* inspect = app.add_subcommand("inspect", "print a session's provenance");
    inspect->add_option("--config", config_path, "run configuration file")->required();
    inspect->add_option("--session", session_id, "session id")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (curate->parsed()) return run_sessions(config_path, inputs, sessions, true);
        if (run->parsed()) return run_sessions(config_path, inputs, sessions, false);
        if (segment->parsed()) return cmd_segment(config_path, session_dir, out_path);
        if (rad->parsed())
            return cmd_radiomics(config_path, images_dir, mask_path, out_prefix, binary_flag);
        if (eval->parsed())
            return cmd_evaluate(session_dir, images_dir, grades, out_path, config_path);
        if (inspect->parsed()) return cmd_inspect(config_path, session_id);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
