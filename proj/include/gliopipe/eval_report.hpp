#pragma once

#include <filesystem>
#include <optional>

#include <json.hpp>

namespace gliopipe {

struct EvalOptions {
    double alpha = 0.05;
    std::optional<std::filesystem::path> grades_csv;
};

// Compares predicted masks against expert-refined masks. pred_dir is either
// a pipeline output root (sessions/<id>/mask_patient.nii) or a flat
// directory of <id>.nii files; refined_dir is a flat directory of <id>.nii.
// Unpaired sessions are listed, not fatal. WT Dice is always reported; TC/ET
// only when a mask carries multi-class labels. When a grades CSV
// (session_id,grade) is supplied, aggregates are stratified by grade and
// grade pairs are compared with Welch's t-test on the per-class Dice.
nlohmann::json evaluate_masks(const std::filesystem::path& pred_dir,
                              const std::filesystem::path& refined_dir,
                              const EvalOptions& options = {});

}  // namespace gliopipe
