#include "gliopipe/volume.hpp"

#include <algorithm>
#include <cmath>

#include "gliopipe/util.hpp"

namespace gliopipe {

Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

Affine4 Affine4::translation(double tx, double ty, double tz) {
    Affine4 t;
    t.at(0, 3) = tx;
    t.at(1, 3) = ty;
    t.at(2, 3) = tz;
    return t;
}

Vec3 Affine4::apply(const Vec3& p) const {
    Vec3 out;
    for (int r = 0; r < 3; ++r)
        out[static_cast<std::size_t>(r)] =
            at(r, 0) * p[0] + at(r, 1) * p[1] + at(r, 2) * p[2] + at(r, 3);
    return out;
}

Affine4 Affine4::operator*(const Affine4& rhs) const {
    Affine4 out;
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) {
            double s = 0.0;
            for (int k = 0; k < 4; ++k) s += at(r, k) * rhs.at(k, c);
            out.at(r, c) = s;
        }
    return out;
}

double Affine4::det3() const {
    return at(0, 0) * (at(1, 1) * at(2, 2) - at(1, 2) * at(2, 1)) -
           at(0, 1) * (at(1, 0) * at(2, 2) - at(1, 2) * at(2, 0)) +
           at(0, 2) * (at(1, 0) * at(2, 1) - at(1, 1) * at(2, 0));
}

void Affine4::validate(double tol) const {
    if (std::abs(at(3, 0)) > tol || std::abs(at(3, 1)) > tol || std::abs(at(3, 2)) > tol ||
        std::abs(at(3, 3) - 1.0) > tol)
        throw FormatError("affine last row is not (0,0,0,1)");
}

Affine4 invert_affine(const Affine4& xform) {
    xform.validate();
    const double det = xform.det3();
    if (std::abs(det) <= 1e-12) throw SingularTransform("affine upper 3x3 is singular");

    // inverse = [R^-1 | -R^-1 t], R^-1 via adjugate.
    Affine4 inv;
    const auto& a = xform;
    inv.at(0, 0) = (a.at(1, 1) * a.at(2, 2) - a.at(1, 2) * a.at(2, 1)) / det;
    inv.at(0, 1) = (a.at(0, 2) * a.at(2, 1) - a.at(0, 1) * a.at(2, 2)) / det;
    inv.at(0, 2) = (a.at(0, 1) * a.at(1, 2) - a.at(0, 2) * a.at(1, 1)) / det;
    inv.at(1, 0) = (a.at(1, 2) * a.at(2, 0) - a.at(1, 0) * a.at(2, 2)) / det;
    inv.at(1, 1) = (a.at(0, 0) * a.at(2, 2) - a.at(0, 2) * a.at(2, 0)) / det;
    inv.at(1, 2) = (a.at(0, 2) * a.at(1, 0) - a.at(0, 0) * a.at(1, 2)) / det;
    inv.at(2, 0) = (a.at(1, 0) * a.at(2, 1) - a.at(1, 1) * a.at(2, 0)) / det;
    inv.at(2, 1) = (a.at(0, 1) * a.at(2, 0) - a.at(0, 0) * a.at(2, 1)) / det;
    inv.at(2, 2) = (a.at(0, 0) * a.at(1, 1) - a.at(0, 1) * a.at(1, 0)) / det;
    for (int r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int k = 0; k < 3; ++k) s += inv.at(r, k) * a.at(k, 3);
        inv.at(r, 3) = -s;
    }
    return inv;
}

Volume3D Volume3D::create(std::array<std::size_t, 3> dims, Vec3 spacing, VoxelKind kind) {
    Volume3D v;
    v.dims = dims;
    v.spacing = spacing;
    v.kind = kind;
    v.voxels.assign(v.size(), 0.0f);
    return v;
}

bool Volume3D::same_grid(const Volume3D& o, double tol) const {
    if (dims != o.dims) return false;
    for (int i = 0; i < 3; ++i) {
        const auto u = static_cast<std::size_t>(i);
        if (std::abs(spacing[u] - o.spacing[u]) > tol) return false;
        if (std::abs(origin[u] - o.origin[u]) > tol) return false;
    }
    for (std::size_t i = 0; i < 9; ++i)
        if (std::abs(direction[i] - o.direction[i]) > tol) return false;
    return true;
}

Affine4 Volume3D::index_to_world() const {
    Affine4 a;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            a.at(r, c) = direction[static_cast<std::size_t>(r * 3 + c)] *
                         spacing[static_cast<std::size_t>(c)];
    a.at(0, 3) = origin[0];
    a.at(1, 3) = origin[1];
    a.at(2, 3) = origin[2];
    return a;
}

float Volume3D::sample(const Vec3& p, Interp mode) const {
    const auto nx = static_cast<double>(dims[0]);
    const auto ny = static_cast<double>(dims[1]);
    const auto nz = static_cast<double>(dims[2]);
    if (mode == Interp::Nearest) {
        const double ri = std::round(p[0]), rj = std::round(p[1]), rk = std::round(p[2]);
        if (ri < 0 || rj < 0 || rk < 0 || ri >= nx || rj >= ny || rk >= nz) return 0.0f;
        return at(static_cast<std::size_t>(ri), static_cast<std::size_t>(rj),
                  static_cast<std::size_t>(rk));
    }
    // Trilinear; corners outside the grid contribute background (0).
    const double fi = std::floor(p[0]), fj = std::floor(p[1]), fk = std::floor(p[2]);
    const double di = p[0] - fi, dj = p[1] - fj, dk = p[2] - fk;
    double acc = 0.0;
    for (int ci = 0; ci < 2; ++ci)
        for (int cj = 0; cj < 2; ++cj)
            for (int ck = 0; ck < 2; ++ck) {
                const double w = (ci ? di : 1.0 - di) * (cj ? dj : 1.0 - dj) *
                                 (ck ? dk : 1.0 - dk);
                if (w == 0.0) continue;
                const double ii = fi + ci, jj = fj + cj, kk = fk + ck;
                if (ii < 0 || jj < 0 || kk < 0 || ii >= nx || jj >= ny || kk >= nz) continue;
                acc += w * at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj),
                              static_cast<std::size_t>(kk));
            }
    return static_cast<float>(acc);
}

std::size_t Volume3D::count_nonzero() const {
    std::size_t n = 0;
    for (float v : voxels)
        if (v != 0.0f) ++n;
    return n;
}

Volume3D normalize_intensity(const Volume3D& vol, const Volume3D& brain_mask) {
    if (vol.dims != brain_mask.dims) throw GridMismatch("volume and brain mask grids differ");
    std::vector<double> inside;
    inside.reserve(vol.size());
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (brain_mask.voxels[i] != 0.0f) inside.push_back(vol.voxels[i]);
    if (inside.empty()) throw EmptyMask("brain mask is empty");

    std::sort(inside.begin(), inside.end());
    if (inside.front() == inside.back())
        throw DegenerateIntensities("constant in-mask image");
    const double p5 = percentile_sorted(inside, 5.0);
    const double p95 = percentile_sorted(inside, 95.0);

    double sum = 0.0, sum2 = 0.0;
    std::size_t n = 0;
    for (double v : inside) {
        if (v > p5 && v < p95) {
            sum += v;
            sum2 += v * v;
            ++n;
        }
    }
    if (n < 2) throw DegenerateIntensities("inlier set too small for statistics");
    const double mean = sum / static_cast<double>(n);
    const double var = sum2 / static_cast<double>(n) - mean * mean;
    if (var <= 0.0) throw DegenerateIntensities("zero variance on the inlier set");
    const double sd = std::sqrt(var);

    Volume3D out = vol;
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (brain_mask.voxels[i] != 0.0f)
            out.voxels[i] = static_cast<float>((vol.voxels[i] - mean) / sd);
        else
            out.voxels[i] = 0.0f;
    }
    return out;
}

Volume3D resample_to_shape(const Volume3D& vol, std::array<std::size_t, 3> target_dims,
                           Interp mode) {
    if (target_dims[0] == 0 || target_dims[1] == 0 || target_dims[2] == 0)
        throw Error("target dims must be positive");
    if (vol.kind == VoxelKind::Label && mode == Interp::Trilinear)
        throw ModeLabelMismatch("trilinear interpolation requested on label data");

    Volume3D out;
    out.dims = target_dims;
    out.kind = vol.kind;
    out.direction = vol.direction;
    Vec3 scale;
    for (std::size_t a = 0; a < 3; ++a) {
        scale[a] = static_cast<double>(vol.dims[a]) / static_cast<double>(target_dims[a]);
        out.spacing[a] = vol.spacing[a] * scale[a];
    }
    // Pixel-center alignment; shift the origin so voxel centers keep their
    // physical position (identity when dims are unchanged).
    Vec3 shift{};
    for (std::size_t a = 0; a < 3; ++a) shift[a] = 0.5 * scale[a] - 0.5;
    const Affine4 i2w = vol.index_to_world();
    out.origin = i2w.apply(shift);

    out.voxels.assign(out.size(), 0.0f);
    for (std::size_t k = 0; k < target_dims[2]; ++k)
        for (std::size_t j = 0; j < target_dims[1]; ++j)
            for (std::size_t i = 0; i < target_dims[0]; ++i) {
                Vec3 p{(static_cast<double>(i) + 0.5) * scale[0] - 0.5,
                       (static_cast<double>(j) + 0.5) * scale[1] - 0.5,
                       (static_cast<double>(k) + 0.5) * scale[2] - 0.5};
                // Clamp so a pure up/downsample never bleeds background
                // into the field of view.
                for (std::size_t a = 0; a < 3; ++a)
                    p[a] = std::clamp(p[a], 0.0, static_cast<double>(vol.dims[a] - 1));
                out.at(i, j, k) = vol.sample(p, mode);
            }
    return out;
}

Volume3D apply_affine(const Volume3D& vol, const Affine4& xform, const Volume3D& ref,
                      Interp mode) {
    if (vol.kind == VoxelKind::Label && mode == Interp::Trilinear)
        throw ModeLabelMismatch("trilinear interpolation requested on label data");
    const Affine4 pull = invert_affine(vol.index_to_world()) * invert_affine(xform) *
                         ref.index_to_world();

    Volume3D out;
    out.dims = ref.dims;
    out.spacing = ref.spacing;
    out.origin = ref.origin;
    out.direction = ref.direction;
    out.kind = vol.kind;
    out.voxels.assign(out.size(), 0.0f);
    for (std::size_t k = 0; k < out.dims[2]; ++k)
        for (std::size_t j = 0; j < out.dims[1]; ++j)
            for (std::size_t i = 0; i < out.dims[0]; ++i) {
                const Vec3 p = pull.apply({static_cast<double>(i), static_cast<double>(j),
                                           static_cast<double>(k)});
                out.at(i, j, k) = vol.sample(p, mode);
            }
    return out;
}

void SegMask::validate() const {
    for (float v : vol.voxels)
        if (v != seg_label::BG && v != seg_label::NC && v != seg_label::ED &&
            v != seg_label::ET)
            throw InvalidLabel("mask voxel outside {0,1,2,4}");
}

Volume3D SegMask::label_mask(float label) const {
    Volume3D out = vol;
    out.kind = VoxelKind::Label;
    for (auto& v : out.voxels) v = (v == label) ? 1.0f : 0.0f;
    return out;
}

MergedMasks merge_mask_classes(const SegMask& mask) {
    mask.validate();
    MergedMasks out{mask.vol, mask.vol};
    out.tc.kind = VoxelKind::Label;
    out.wt.kind = VoxelKind::Label;
    for (std::size_t i = 0; i < mask.vol.size(); ++i) {
        const float v = mask.vol.voxels[i];
        out.tc.voxels[i] = (v == seg_label::NC || v == seg_label::ET) ? 1.0f : 0.0f;
        out.wt.voxels[i] = (v != seg_label::BG) ? 1.0f : 0.0f;
    }
    return out;
}

}  // namespace gliopipe
