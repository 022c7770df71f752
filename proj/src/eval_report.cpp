#include "gliopipe/eval_report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "gliopipe/evaluation.hpp"
#include "gliopipe/nifti.hpp"
#include "gliopipe/util.hpp"
#include "gliopipe/volume.hpp"

namespace fs = std::filesystem;

namespace gliopipe {

namespace {

std::map<std::string, fs::path> collect_predictions(const fs::path& pred_dir) {
    std::map<std::string, fs::path> out;
    const fs::path sessions = pred_dir / "sessions";
    if (fs::is_directory(sessions)) {
        for (const auto& e : fs::directory_iterator(sessions)) {
            const fs::path mask = e.path() / "mask_patient.nii";
            if (fs::exists(mask)) out[e.path().filename().string()] = mask;
        }
        return out;
    }
    for (const auto& e : fs::directory_iterator(pred_dir))
        if (e.is_regular_file() && e.path().extension() == ".nii")
            out[e.path().stem().string()] = e.path();
    return out;
}

bool has_multiclass_labels(const Volume3D& v) {
    for (float x : v.voxels)
        if (x == 2.0f || x == 4.0f) return true;
    return false;
}

Volume3D select_labels(const Volume3D& v, std::initializer_list<float> labels) {
    Volume3D out = v;
    out.kind = VoxelKind::Label;
    for (auto& x : out.voxels) {
        bool in = false;
        for (float l : labels) in = in || (x == l);
        x = in ? 1.0f : 0.0f;
    }
    return out;
}

std::string mean_sd_string(double mean, double sd) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3f (±%.3f)", mean, sd);
    return buf;
}

nlohmann::json aggregate(const std::vector<double>& xs) {
    nlohmann::json j;
    j["n"] = xs.size();
    if (xs.empty()) return j;
    double sum = 0.0;
    for (double x : xs) sum += x;
    const double mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) ss += (x - mean) * (x - mean);
    const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
    j["mean"] = mean;
    j["sd"] = sd;
    j["display"] = mean_sd_string(mean, sd);
    return j;
}

std::map<std::string, std::string> load_grades(const fs::path& csv) {
    std::map<std::string, std::string> out;
    std::istringstream in(read_text_file(csv));
    std::string line;
    while (std::getline(in, line)) {
        const auto fields = split_tokens(trim(line), ",");
        if (fields.size() < 2 || fields[0] == "session_id") continue;
        out[trim(fields[0])] = trim(fields[1]);
    }
    return out;
}

}  // namespace

nlohmann::json evaluate_masks(const fs::path& pred_dir, const fs::path& refined_dir,
                              const EvalOptions& options) {
    const auto preds = collect_predictions(pred_dir);

    std::map<std::string, fs::path> refined;
    for (const auto& e : fs::directory_iterator(refined_dir))
        if (e.is_regular_file() && e.path().extension() == ".nii")
            refined[e.path().stem().string()] = e.path();

    nlohmann::json report;
    report["alpha"] = options.alpha;
    report["sessions"] = nlohmann::json::object();
    report["unpaired"] = nlohmann::json::array();
    for (const auto& [id, p] : preds)
        if (!refined.contains(id)) report["unpaired"].push_back(id);
    for (const auto& [id, p] : refined)
        if (!preds.contains(id)) report["unpaired"].push_back(id);

    const std::vector<std::string> classes{"WT", "TC", "ET"};
    std::map<std::string, std::vector<double>> per_class;       // class -> dices
    std::map<std::string, std::map<std::string, std::vector<double>>> by_grade;

    std::map<std::string, std::string> grades;
    if (options.grades_csv) grades = load_grades(*options.grades_csv);

    for (const auto& [id, pred_path] : preds) {
        const auto rit = refined.find(id);
        if (rit == refined.end()) continue;
        const Volume3D pred = nifti::read(pred_path, VoxelKind::Label);
        const Volume3D ref = nifti::read(rit->second, VoxelKind::Label);

        nlohmann::json row;
        try {
            const bool multi = has_multiclass_labels(pred) || has_multiclass_labels(ref);
            std::map<std::string, double> d;
            d["WT"] = dice(select_labels(pred, {1.0f, 2.0f, 4.0f}),
                           select_labels(ref, {1.0f, 2.0f, 4.0f}));
            if (multi) {
                d["TC"] = dice(select_labels(pred, {1.0f, 4.0f}),
                               select_labels(ref, {1.0f, 4.0f}));
                d["ET"] = dice(select_labels(pred, {4.0f}), select_labels(ref, {4.0f}));
            }
            for (const auto& [cls, value] : d) {
                row[cls] = value;
                per_class[cls].push_back(value);
                if (const auto git = grades.find(id); git != grades.end())
                    by_grade[git->second][cls].push_back(value);
            }
            if (const auto git = grades.find(id); git != grades.end())
                row["grade"] = git->second;
        } catch (const GridMismatch& e) {
            row["error"] = e.what();
        }
        report["sessions"][id] = std::move(row);
    }

    report["aggregate"] = nlohmann::json::object();
    for (const auto& cls : classes)
        if (per_class.contains(cls)) report["aggregate"][cls] = aggregate(per_class[cls]);

    if (!grades.empty()) {
        report["by_grade"] = nlohmann::json::object();
        for (const auto& [grade, cls_map] : by_grade) {
            nlohmann::json g;
            for (const auto& [cls, xs] : cls_map) g[cls] = aggregate(xs);
            report["by_grade"][grade] = std::move(g);
        }
        // Welch's t-test between grade groups, two-sided
        report["grade_tests"] = nlohmann::json::array();
        std::vector<std::string> grade_names;
        for (const auto& [g, _] : by_grade) grade_names.push_back(g);
        for (std::size_t a = 0; a < grade_names.size(); ++a)
            for (std::size_t b = a + 1; b < grade_names.size(); ++b)
                for (const auto& cls : classes) {
                    const auto& xs = by_grade[grade_names[a]][cls];
                    const auto& ys = by_grade[grade_names[b]][cls];
                    nlohmann::json t;
                    t["class"] = cls;
                    t["groups"] = {grade_names[a], grade_names[b]};
                    try {
                        const auto res = welch_t(xs, ys, options.alpha);
                        t["t"] = res.t;
                        t["df"] = res.df;
                        t["p_two_sided"] = res.p_two_sided;
                        t["significant"] = res.significant;
                    } catch (const DegenerateSample& e) {
                        t["skipped"] = e.what();
                    }
                    report["grade_tests"].push_back(std::move(t));
                }
    }
    return report;
}

}  // namespace gliopipe
