#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "gliopipe/curation.hpp"
#include "gliopipe/volume.hpp"

namespace gliopipe::radiomics {

enum class TextureFamily { GLCM, GLRLM, GLSZM, GLDM, NGTDM };
const char* to_string(TextureFamily f);
// Fixed per-family feature counts (24, 16, 16, 14, 5); they sum to 75.
int feature_count(TextureFamily f);

// Tumor classes a feature vector is computed over, in schema order.
enum class MaskClass { ED, NC, ET, TC, WT };
const char* to_string(MaskClass c);
inline constexpr std::array<MaskClass, 5> kMaskClasses{
    MaskClass::ED, MaskClass::NC, MaskClass::ET, MaskClass::TC, MaskClass::WT};
inline constexpr std::array<SequenceClass, 4> kImageChannels{
    SequenceClass::T1WI, SequenceClass::GdT1WI, SequenceClass::T2WI, SequenceClass::FLAIR};

struct Params {
    double bin_width = 25.0;
    int gldm_alpha = 0;
};

using NamedValues = std::vector<std::pair<std::string, double>>;

// In-mask voxels after fixed-bin-width discretization:
// level(x) = floor((x - min) / bin_width) + 1. Outside the mask level is 0.
struct DiscretizedROI {
    std::array<std::size_t, 3> dims{0, 0, 0};
    std::vector<int> levels;          // 0 = out of mask
    std::vector<int> present_levels;  // sorted distinct in-mask levels
    std::size_t n_voxels = 0;
    double bin_width = 25.0;

    int at(std::size_t i, std::size_t j, std::size_t k) const {
        return levels[i + dims[0] * (j + dims[1] * k)];
    }
};

DiscretizedROI discretize(const Volume3D& vol, const Volume3D& mask, double bin_width);

// Gray-level texture matrix plus the context the feature formulas need.
// GLCM: col_values are gray levels; GLRLM run lengths; GLSZM zone sizes;
// GLDM dependence sizes; NGTDM two columns (n_i, s_i) per level.
struct TextureMatrix {
    TextureFamily family = TextureFamily::GLCM;
    std::vector<int> row_levels;
    std::vector<int> col_values;
    std::vector<double> counts;  // row-major
    std::size_t n_voxels = 0;    // ROI voxels (NGTDM: voxels with a valid neighborhood)
    int n_directions = 1;

    double at(std::size_t r, std::size_t c) const { return counts[r * col_values.size() + c]; }
    double total() const;
};

// GLCM aggregated symmetrically over the given offsets (defaults to the 13
// unique 3D direction vectors at distance 1).
TextureMatrix glcm_matrix(const DiscretizedROI& roi,
                          const std::vector<std::array<int, 3>>& offsets = {});
TextureMatrix glrlm_matrix(const DiscretizedROI& roi);   // 13 directions
TextureMatrix glszm_matrix(const DiscretizedROI& roi);   // 26-connected zones
TextureMatrix gldm_matrix(const DiscretizedROI& roi, int alpha = 0);
TextureMatrix ngtdm_matrix(const DiscretizedROI& roi);   // 26-neighborhood means

TextureMatrix texture_matrix(const DiscretizedROI& roi, TextureFamily family,
                             const Params& params = {});

// Named features per family (24/16/16/14/5). Throws DegenerateMatrix when the
// matrix carries no mass. Degenerate-value conventions follow
// docs/feature-formulas.md and are unit-tested.
NamedValues texture_features(const TextureMatrix& m);

// The 14 3D shape features; surface area uses boundary-face counting.
// Throws EmptyMask.
NamedValues shape_features(const Volume3D& mask, const Vec3& spacing);

// The 18 first-order features; Entropy/Uniformity use the discretized
// histogram at bin_width. Throws EmptyMask.
NamedValues first_order_features(const Volume3D& vol, const Volume3D& mask, double bin_width);

// Fixed-width 1,930-entry schema: 5 classes x 14 shape entries, then
// 4 images x 5 classes x 93 first-order + texture entries. Names follow
// class_image_family_feature; shape rows use the literal image token "na".
const std::vector<std::string>& feature_schema();

struct FeatureVector {
    std::string session_id;
    std::vector<std::pair<std::string, std::optional<double>>> entries;

    std::size_t count_non_null() const;
};

// Full extraction: shape once per nonempty class, first-order + texture per
// (present image, nonempty class); everything else is an explicit null so
// the schema stays fixed-width.
FeatureVector extract_all(const std::string& session_id,
                          const std::map<SequenceClass, Volume3D>& images,
                          const std::map<MaskClass, Volume3D>& class_masks,
                          const Params& params = {});

// Builds the five per-class binary masks from a label mask. For a binary
// whole-tumor mask (binary_wt = true) only WT is populated.
std::map<MaskClass, Volume3D> class_masks_from(const Volume3D& mask, bool binary_wt);

std::string feature_csv_header();
std::string feature_csv_row(const FeatureVector& fv);
nlohmann::json feature_json(const FeatureVector& fv);

}  // namespace gliopipe::radiomics
