#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "gliopipe/errors.hpp"

namespace gliopipe {

using Vec3 = std::array<double, 3>;

Vec3 cross(const Vec3& a, const Vec3& b);
double dot(const Vec3& a, const Vec3& b);
double norm(const Vec3& a);

// 4x4 homogeneous transform, row-major, last row fixed to (0,0,0,1).
struct Affine4 {
    std::array<double, 16> m{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

    static Affine4 identity() { return {}; }
    static Affine4 translation(double tx, double ty, double tz);

    double& at(int r, int c) { return m[static_cast<std::size_t>(r * 4 + c)]; }
    double at(int r, int c) const { return m[static_cast<std::size_t>(r * 4 + c)]; }

    Vec3 apply(const Vec3& p) const;
    Affine4 operator*(const Affine4& rhs) const;

    // Determinant of the upper 3x3 block.
    double det3() const;
    // Throws FormatError when the last row is not (0,0,0,1) within tol.
    void validate(double tol = 1e-9) const;

    bool operator==(const Affine4&) const = default;
};

// Inverse of an affine transform; throws SingularTransform when |det3| <= 1e-12.
Affine4 invert_affine(const Affine4& xform);

enum class VoxelKind { Intensity, Label };
enum class Interp { Trilinear, Nearest };

// Regular voxel grid. Voxel (i,j,k) is stored at i + j*nx + k*nx*ny (i fastest).
// direction holds the three voxel axes as columns of a 3x3 row-major matrix;
// world = origin + direction * diag(spacing) * index.
struct Volume3D {
    std::array<std::size_t, 3> dims{0, 0, 0};
    Vec3 spacing{1.0, 1.0, 1.0};
    Vec3 origin{0.0, 0.0, 0.0};
    std::array<double, 9> direction{1, 0, 0, 0, 1, 0, 0, 0, 1};
    VoxelKind kind = VoxelKind::Intensity;
    std::vector<float> voxels;

    static Volume3D create(std::array<std::size_t, 3> dims, Vec3 spacing,
                           VoxelKind kind = VoxelKind::Intensity);

    std::size_t size() const { return dims[0] * dims[1] * dims[2]; }
    std::size_t index(std::size_t i, std::size_t j, std::size_t k) const {
        return i + dims[0] * (j + dims[1] * k);
    }
    float& at(std::size_t i, std::size_t j, std::size_t k) { return voxels[index(i, j, k)]; }
    float at(std::size_t i, std::size_t j, std::size_t k) const { return voxels[index(i, j, k)]; }

    bool same_grid(const Volume3D& o, double tol = 1e-6) const;
    Affine4 index_to_world() const;

    // Samples at a continuous voxel coordinate; out-of-field returns 0.
    float sample(const Vec3& cont_index, Interp mode) const;

    std::size_t count_nonzero() const;
};

// z-scores in-mask voxels using mean/std of the strict percentile interior
// (values v with p5 < v < p95 of the in-mask distribution, linear-interpolation
// percentiles). Out-of-mask voxels are set to 0.
// Throws EmptyMask (no in-mask voxel) or DegenerateIntensities (constant
// in-mask image, or an inlier set too small to carry statistics).
Volume3D normalize_intensity(const Volume3D& vol, const Volume3D& brain_mask);

// Resamples to target_dims; spacing is rescaled so the physical extent is
// preserved. Label volumes must use Interp::Nearest (ModeLabelMismatch).
Volume3D resample_to_shape(const Volume3D& vol, std::array<std::size_t, 3> target_dims,
                           Interp mode);

// Resamples vol onto the grid of ref by pulling each ref voxel through
// xform^-1 (xform maps vol world coordinates to ref world coordinates).
// Out-of-field voxels are 0/background.
Volume3D apply_affine(const Volume3D& vol, const Affine4& xform, const Volume3D& ref,
                      Interp mode);

// Tumor label vocabulary.
namespace seg_label {
inline constexpr float BG = 0.0f;
inline constexpr float NC = 1.0f;
inline constexpr float ED = 2.0f;
inline constexpr float ET = 4.0f;
}  // namespace seg_label

// Labeled volume over {BG, NC, ED, ET} with derived TC/WT composites.
struct SegMask {
    Volume3D vol;

    // Throws InvalidLabel when a voxel is outside {0,1,2,4}.
    void validate() const;
    // Binary (0/1, Label kind) view of a single atomic label.
    Volume3D label_mask(float label) const;
};

struct MergedMasks {
    Volume3D tc;  // NC u ET
    Volume3D wt;  // NC u ED u ET
};

MergedMasks merge_mask_classes(const SegMask& mask);

}  // namespace gliopipe
