#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>

#include "gliopipe/evaluation.hpp"
#include "gliopipe/nifti.hpp"
#include "gliopipe/util.hpp"
#include "gliopipe/volume.hpp"

using namespace gliopipe;
namespace fs = std::filesystem;

namespace {

Volume3D ones_mask(std::array<std::size_t, 3> dims) {
    auto m = Volume3D::create(dims, {1, 1, 1}, VoxelKind::Label);
    std::fill(m.voxels.begin(), m.voxels.end(), 1.0f);
    return m;
}

// independent recomputation of the inlier statistics, used as the oracle
std::pair<double, double> recompute_inlier_stats(const Volume3D& vol, const Volume3D& mask) {
    std::vector<double> in;
    for (std::size_t i = 0; i < vol.size(); ++i)
        if (mask.voxels[i] != 0.0f) in.push_back(vol.voxels[i]);
    std::sort(in.begin(), in.end());
    const double p5 = percentile_sorted(in, 5.0), p95 = percentile_sorted(in, 95.0);
    std::vector<double> inliers;
    for (double v : in)
        if (v > p5 && v < p95) inliers.push_back(v);
    double mean = 0;
    for (double v : inliers) mean += v;
    mean /= static_cast<double>(inliers.size());
    double var = 0;
    for (double v : inliers) var += (v - mean) * (v - mean);
    var /= static_cast<double>(inliers.size());
    return {mean, std::sqrt(var)};
}

fs::path temp_dir() {
    const auto dir = fs::temp_directory_path() / "gliopipe_volume_tests";
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("normalization excludes the percentile tails from the statistics") {
    auto vol = Volume3D::create({10, 10, 1}, {1, 1, 1});
    for (std::size_t i = 0; i < 100; ++i) vol.voxels[i] = static_cast<float>(i + 1);
    const auto mask = ones_mask({10, 10, 1});
    const auto out = normalize_intensity(vol, mask);

    // inliers are exactly {6..95}; their mean maps to ~0 and sd to ~1
    std::vector<double> mapped;
    for (std::size_t i = 5; i < 95; ++i) mapped.push_back(out.voxels[i]);
    double mean = 0;
    for (double v : mapped) mean += v;
    mean /= static_cast<double>(mapped.size());
    double var = 0;
    for (double v : mapped) var += (v - mean) * (v - mean);
    var /= static_cast<double>(mapped.size());
    CHECK(mean == doctest::Approx(0.0).epsilon(1e-6));
    CHECK(std::sqrt(var) == doctest::Approx(1.0).epsilon(1e-6));
    // tails are z-scored with the inlier stats, not clipped: inliers {6..95}
    // have mean 50.5 and population sd sqrt((90^2-1)/12)
    const double inlier_sd = std::sqrt((90.0 * 90.0 - 1.0) / 12.0);
    CHECK(out.voxels[99] == doctest::Approx((100.0 - 50.5) / inlier_sd).epsilon(1e-5));
}

TEST_CASE("normalization is close to idempotent on the inlier set") {
    std::mt19937 rng(5);
    std::normal_distribution<float> gauss(0.0f, 1.0f);
    auto vol = Volume3D::create({12, 12, 12}, {1, 1, 1});
    for (auto& v : vol.voxels) v = gauss(rng);
    const auto mask = ones_mask({12, 12, 12});
    const auto once = normalize_intensity(vol, mask);
    const auto twice = normalize_intensity(once, mask);
    // the second pass re-centers an already centered sample
    const auto [m1, s1] = recompute_inlier_stats(once, mask);
    const auto [m2, s2] = recompute_inlier_stats(twice, mask);
    CHECK(std::abs(m2) <= 1e-5);
    CHECK(std::abs(s2 - 1.0) <= 1e-5);
    CHECK(std::abs(m1) <= 1e-5);
    CHECK(std::abs(s1 - 1.0) <= 1e-5);
}

TEST_CASE("constant in-mask image raises DegenerateIntensities") {
    auto vol = Volume3D::create({4, 4, 4}, {1, 1, 1});
    std::fill(vol.voxels.begin(), vol.voxels.end(), 7.0f);
    CHECK_THROWS_AS(normalize_intensity(vol, ones_mask({4, 4, 4})), DegenerateIntensities);

    auto empty = Volume3D::create({4, 4, 4}, {1, 1, 1}, VoxelKind::Label);
    CHECK_THROWS_AS(normalize_intensity(vol, empty), EmptyMask);
}

TEST_CASE("normalization property over random masked volumes") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<float> uni(0.0f, 500.0f);
    for (int trial = 0; trial < 100; ++trial) {
        auto vol = Volume3D::create({8, 8, 8}, {1, 1, 1});
        for (auto& v : vol.voxels) v = uni(rng);
        auto mask = Volume3D::create({8, 8, 8}, {1, 1, 1}, VoxelKind::Label);
        for (auto& v : mask.voxels) v = (rng() % 4) ? 1.0f : 0.0f;
        if (std::count_if(mask.voxels.begin(), mask.voxels.end(),
                          [](float v) { return v != 0.0f; }) < 60)
            continue;
        const auto out = normalize_intensity(vol, mask);
        const auto [mean, sd] = recompute_inlier_stats(out, mask);
        CHECK(std::abs(mean) <= 1e-6);
        CHECK(std::abs(sd - 1.0) <= 1e-6);
        for (std::size_t i = 0; i < out.size(); ++i)
            if (mask.voxels[i] == 0.0f) CHECK(out.voxels[i] == 0.0f);
    }
}

TEST_CASE("identity resample returns identical voxels") {
    std::mt19937 rng(3);
    auto vol = Volume3D::create({5, 6, 7}, {1, 2, 3});
    for (auto& v : vol.voxels) v = static_cast<float>(rng() % 1000);
    const auto out = resample_to_shape(vol, {5, 6, 7}, Interp::Trilinear);
    CHECK(out.voxels == vol.voxels);
    CHECK(out.spacing == vol.spacing);
}

TEST_CASE("constant volume stays constant under resampling") {
    auto vol = Volume3D::create({4, 4, 4}, {1, 1, 1});
    std::fill(vol.voxels.begin(), vol.voxels.end(), 3.5f);
    for (auto dims : {std::array<std::size_t, 3>{8, 8, 8}, {3, 5, 9}, {128, 2, 2}}) {
        const auto out = resample_to_shape(vol, dims, Interp::Trilinear);
        for (float v : out.voxels) CHECK(v == doctest::Approx(3.5f));
    }
}

TEST_CASE("resampling preserves the physical extent") {
    auto vol = Volume3D::create({64, 64, 64}, {1, 1, 1});
    const auto out = resample_to_shape(vol, {128, 128, 128}, Interp::Trilinear);
    CHECK(out.spacing[0] == doctest::Approx(0.5));
    CHECK(static_cast<double>(out.dims[0]) * out.spacing[0] ==
          doctest::Approx(static_cast<double>(vol.dims[0]) * vol.spacing[0]));
}

TEST_CASE("trilinear upsample of a ramp matches the interpolation oracle") {
    auto vol = Volume3D::create({4, 4, 4}, {1, 1, 1});
    for (std::size_t k = 0; k < 4; ++k)
        for (std::size_t j = 0; j < 4; ++j)
            for (std::size_t i = 0; i < 4; ++i)
                vol.at(i, j, k) = static_cast<float>(i + 10 * j + 100 * k);
    const auto out = resample_to_shape(vol, {8, 8, 8}, Interp::Trilinear);

    // oracle: direct trilinear interpolation at the documented sample points
    auto oracle = [&](double x, double y, double z) {
        auto clampv = [&](double t) { return std::clamp(t, 0.0, 3.0); };
        x = clampv(x);
        y = clampv(y);
        z = clampv(z);
        const double x0 = std::floor(x), y0 = std::floor(y), z0 = std::floor(z);
        double acc = 0;
        for (int dx = 0; dx < 2; ++dx)
            for (int dy = 0; dy < 2; ++dy)
                for (int dz = 0; dz < 2; ++dz) {
                    const double xi = std::min(x0 + dx, 3.0), yi = std::min(y0 + dy, 3.0),
                                 zi = std::min(z0 + dz, 3.0);
                    const double w = (dx ? x - x0 : 1 - (x - x0)) *
                                     (dy ? y - y0 : 1 - (y - y0)) *
                                     (dz ? z - z0 : 1 - (z - z0));
                    acc += w * (xi + 10 * yi + 100 * zi);
                }
        return acc;
    };
    for (std::size_t k = 0; k < 8; ++k)
        for (std::size_t j = 0; j < 8; ++j)
            for (std::size_t i = 0; i < 8; ++i) {
                const double x = (i + 0.5) * 0.5 - 0.5;
                const double y = (j + 0.5) * 0.5 - 0.5;
                const double z = (k + 0.5) * 0.5 - 0.5;
                CHECK(out.at(i, j, k) == doctest::Approx(oracle(x, y, z)).epsilon(1e-5));
            }
}

TEST_CASE("labels must resample with nearest") {
    auto vol = Volume3D::create({4, 4, 4}, {1, 1, 1}, VoxelKind::Label);
    CHECK_THROWS_AS(resample_to_shape(vol, {8, 8, 8}, Interp::Trilinear), ModeLabelMismatch);
    CHECK_NOTHROW(resample_to_shape(vol, {8, 8, 8}, Interp::Nearest));
}

TEST_CASE("identity transform is the identity on voxels") {
    std::mt19937 rng(8);
    auto vol = Volume3D::create({6, 5, 4}, {1, 1, 1});
    for (auto& v : vol.voxels) v = static_cast<float>(rng() % 100);
    const auto out = apply_affine(vol, Affine4::identity(), vol, Interp::Trilinear);
    CHECK(out.voxels == vol.voxels);
}

TEST_CASE("integer-voxel translation shifts a labeled cube exactly") {
    auto vol = Volume3D::create({16, 16, 16}, {1, 1, 1}, VoxelKind::Label);
    for (std::size_t k = 4; k < 8; ++k)
        for (std::size_t j = 4; j < 8; ++j)
            for (std::size_t i = 4; i < 8; ++i) vol.at(i, j, k) = 4.0f;
    const auto xform = Affine4::translation(3, 2, 1);
    const auto out = apply_affine(vol, xform, vol, Interp::Nearest);

    // index-shift oracle
    std::set<float> labels;
    for (std::size_t k = 0; k < 16; ++k)
        for (std::size_t j = 0; j < 16; ++j)
            for (std::size_t i = 0; i < 16; ++i) {
                const bool inside = i >= 7 && i < 11 && j >= 6 && j < 10 && k >= 5 && k < 9;
                CHECK(out.at(i, j, k) == (inside ? 4.0f : 0.0f));
                labels.insert(out.at(i, j, k));
            }
    CHECK(labels == std::set<float>{0.0f, 4.0f});
}

TEST_CASE("warp then inverse-warp keeps Dice at 0.95 or better on random blobs") {
    std::mt19937 rng(2024);
    std::uniform_real_distribution<double> angle(-0.3, 0.3);
    std::uniform_real_distribution<double> shift(-2.5, 2.5);
    for (int trial = 0; trial < 20; ++trial) {
        auto blob = Volume3D::create({32, 32, 32}, {1, 1, 1}, VoxelKind::Label);
        const double cx = 16 + shift(rng), cy = 16 + shift(rng), cz = 16 + shift(rng);
        for (std::size_t k = 0; k < 32; ++k)
            for (std::size_t j = 0; j < 32; ++j)
                for (std::size_t i = 0; i < 32; ++i) {
                    const double d2 = (i - cx) * (i - cx) + (j - cy) * (j - cy) +
                                      (k - cz) * (k - cz);
                    if (d2 <= 64.0) blob.at(i, j, k) = 1.0f;
                }

        // small rigid motion: rotation about z plus translation
        const double a = angle(rng);
        Affine4 xform;
        xform.at(0, 0) = std::cos(a);
        xform.at(0, 1) = -std::sin(a);
        xform.at(1, 0) = std::sin(a);
        xform.at(1, 1) = std::cos(a);
        xform.at(0, 3) = shift(rng);
        xform.at(1, 3) = shift(rng);
        xform.at(2, 3) = shift(rng);
        // rotate about the grid center rather than the corner
        Affine4 center = Affine4::translation(16, 16, 16);
        Affine4 uncenter = Affine4::translation(-16, -16, -16);
        const Affine4 total = center * xform * uncenter;

        const auto warped = apply_affine(blob, total, blob, Interp::Nearest);
        const auto back = apply_affine(warped, invert_affine(total), blob, Interp::Nearest);
        CHECK(dice(blob, back) >= 0.95);
    }
}

TEST_CASE("invert_affine examples and properties") {
    CHECK(invert_affine(Affine4::identity()) == Affine4::identity());

    const auto t = invert_affine(Affine4::translation(3, -2, 5));
    CHECK(t.at(0, 3) == doctest::Approx(-3.0));
    CHECK(t.at(1, 3) == doctest::Approx(2.0));
    CHECK(t.at(2, 3) == doctest::Approx(-5.0));

    std::mt19937 rng(31);
    std::uniform_real_distribution<double> uni(-1.0, 1.0);
    for (int trial = 0; trial < 50; ++trial) {
        Affine4 a;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 4; ++c) a.at(r, c) = (r == c ? 2.0 : 0.0) + 0.4 * uni(rng);
        const auto inv = invert_affine(a);
        const auto prod = a * inv;
        const auto twice = invert_affine(inv);
        for (int r = 0; r < 4; ++r)
            for (int c = 0; c < 4; ++c) {
                CHECK(std::abs(prod.at(r, c) - (r == c ? 1.0 : 0.0)) <= 1e-9);
                CHECK(std::abs(twice.at(r, c) - a.at(r, c)) <= 1e-9);
            }
    }

    Affine4 singular;
    singular.at(0, 0) = 0.0;
    singular.at(1, 1) = 0.0;
    singular.at(0, 1) = 0.0;
    CHECK_THROWS_AS(invert_affine(singular), SingularTransform);
}

TEST_CASE("class merging: TC and WT composites") {
    SegMask mask{Volume3D::create({3, 3, 1}, {1, 1, 1}, VoxelKind::Label)};

    SUBCASE("all background") {
        const auto merged = merge_mask_classes(mask);
        CHECK(merged.tc.count_nonzero() == 0);
        CHECK(merged.wt.count_nonzero() == 0);
    }
    SUBCASE("one NC and one ED voxel") {
        mask.vol.at(0, 0, 0) = seg_label::NC;
        mask.vol.at(1, 0, 0) = seg_label::ED;
        const auto merged = merge_mask_classes(mask);
        CHECK(merged.tc.count_nonzero() == 1);
        CHECK(merged.wt.count_nonzero() == 2);
    }
    SUBCASE("invalid label rejected") {
        mask.vol.at(0, 0, 0) = 3.0f;
        CHECK_THROWS_AS(merge_mask_classes(mask), InvalidLabel);
    }
}

TEST_CASE("merging matches a per-voxel union oracle and nests ET in TC in WT") {
    std::mt19937 rng(17);
    const float labels[4] = {0, 1, 2, 4};
    for (int trial = 0; trial < 25; ++trial) {
        SegMask mask{Volume3D::create({6, 6, 6}, {1, 1, 1}, VoxelKind::Label)};
        for (auto& v : mask.vol.voxels) v = labels[rng() % 4];
        const auto merged = merge_mask_classes(mask);

        std::size_t tc = 0, wt = 0, et = 0;
        for (std::size_t i = 0; i < mask.vol.size(); ++i) {
            const float v = mask.vol.voxels[i];
            const bool in_tc = v == 1.0f || v == 4.0f;
            const bool in_wt = v != 0.0f;
            et += v == 4.0f;
            tc += in_tc;
            wt += in_wt;
            CHECK(merged.tc.voxels[i] == (in_tc ? 1.0f : 0.0f));
            CHECK(merged.wt.voxels[i] == (in_wt ? 1.0f : 0.0f));
        }
        CHECK(merged.tc.count_nonzero() == tc);
        CHECK(merged.wt.count_nonzero() == wt);
        CHECK(et <= tc);
        CHECK(tc <= wt);
    }
}

TEST_CASE("NIfTI round-trip for float and label volumes") {
    const auto dir = temp_dir();
    std::mt19937 rng(55);

    auto vol = Volume3D::create({7, 6, 5}, {0.5, 1.25, 2.0});
    vol.origin = {-10.0, 4.5, 3.25};
    for (auto& v : vol.voxels) v = static_cast<float>(rng() % 10000) / 7.0f;
    nifti::write(dir / "f.nii", vol);
    const auto back = nifti::read(dir / "f.nii");
    CHECK(back.dims == vol.dims);
    CHECK(back.voxels == vol.voxels);
    for (int i = 0; i < 3; ++i) {
        CHECK(back.spacing[static_cast<std::size_t>(i)] ==
              doctest::Approx(vol.spacing[static_cast<std::size_t>(i)]));
        CHECK(back.origin[static_cast<std::size_t>(i)] ==
              doctest::Approx(vol.origin[static_cast<std::size_t>(i)]));
    }

    auto mask = Volume3D::create({4, 4, 4}, {1, 1, 1}, VoxelKind::Label);
    mask.at(1, 2, 3) = 4.0f;
    mask.at(0, 0, 0) = 2.0f;
    nifti::write(dir / "m.nii", mask);
    const auto mback = nifti::read(dir / "m.nii");
    CHECK(mback.kind == VoxelKind::Label);
    CHECK(mback.voxels == mask.voxels);

    // gzip magic is rejected
    write_file(dir / "z.nii", std::vector<std::uint8_t>{0x1f, 0x8b, 0x08, 0x00});
    CHECK_THROWS_AS(nifti::read(dir / "z.nii"), FormatError);
}

TEST_CASE("NIfTI reader honors the qform when no sform is present, sform otherwise") {
    const auto dir = temp_dir();
    auto vol = Volume3D::create({3, 4, 5}, {1.5, 2.0, 2.5});
    vol.origin = {7.0, -3.0, 2.0};
    for (std::size_t i = 0; i < vol.size(); ++i) vol.voxels[i] = static_cast<float>(i);
    nifti::write(dir / "q.nii", vol);

    // byte-surgery on the header: drop the sform, install an identity-rotation
    // qform with the same offset (sform_code @ 254, qform_code @ 252,
    // quatern b/c/d @ 256, qoffset @ 268)
    auto bytes = read_file(dir / "q.nii");
    auto put_i16 = [&](std::size_t off, std::int16_t v) { std::memcpy(&bytes[off], &v, 2); };
    auto put_f32 = [&](std::size_t off, float v) { std::memcpy(&bytes[off], &v, 4); };
    put_i16(254, 0);  // sform_code = 0
    put_i16(252, 1);  // qform_code = 1
    put_f32(256, 0.0f);
    put_f32(260, 0.0f);
    put_f32(264, 0.0f);
    put_f32(268, 7.0f);
    put_f32(272, -3.0f);
    put_f32(276, 2.0f);
    write_file(dir / "q.nii", bytes);

    const auto back = nifti::read(dir / "q.nii");
    CHECK(back.voxels == vol.voxels);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(back.spacing[i] == doctest::Approx(vol.spacing[i]));
        CHECK(back.origin[i] == doctest::Approx(vol.origin[i]));
    }

    // when both forms are present, the sform wins
    auto both = read_file(dir / "q.nii");
    std::int16_t one = 1;
    std::memcpy(&both[254], &one, 2);  // sform_code = 1 again
    // srow_x/y/z live at 280/296/312; write a doubled-spacing sform
    auto put_row = [&](std::size_t off, float a, float b, float c, float d) {
        put_f32(off + 0, a);
        put_f32(off + 4, b);
        put_f32(off + 8, c);
        put_f32(off + 12, d);
    };
    bytes = both;
    put_row(280, 3.0f, 0, 0, 0);
    put_row(296, 0, 4.0f, 0, 0);
    put_row(312, 0, 0, 5.0f, 0);
    write_file(dir / "both.nii", bytes);
    const auto sform_wins = nifti::read(dir / "both.nii");
    CHECK(sform_wins.spacing[0] == doctest::Approx(3.0));
    CHECK(sform_wins.spacing[1] == doctest::Approx(4.0));
    CHECK(sform_wins.spacing[2] == doctest::Approx(5.0));
    CHECK(sform_wins.origin[0] == doctest::Approx(0.0));
}

TEST_CASE("affine text file round-trip") {
    const auto dir = temp_dir();
    Affine4 a = Affine4::translation(1.5, -2.25, 3.125);
    a.at(0, 0) = 0.875;
    nifti::write_affine(dir / "x.txt", a);
    const auto back = nifti::read_affine(dir / "x.txt");
    CHECK(back == a);

    write_text_file(dir / "bad.txt", "1 2 3");
    CHECK_THROWS_AS(nifti::read_affine(dir / "bad.txt"), FormatError);
}
