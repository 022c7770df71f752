#include "gliopipe/nifti.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <sstream>

#include "gliopipe/util.hpp"

namespace gliopipe::nifti {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;   // must be 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_FLOAT32 = 16;

void affine_from_header(const Nifti1Header& h, Volume3D& vol) {
    if (h.sform_code > 0) {
        // Decompose the sform: spacing = column norms, direction = unit columns.
        const float* rows[3] = {h.srow_x, h.srow_y, h.srow_z};
        for (int c = 0; c < 3; ++c) {
            double n = 0.0;
            for (int r = 0; r < 3; ++r) n += double(rows[r][c]) * double(rows[r][c]);
            n = std::sqrt(n);
            if (n <= 0) throw FormatError("sform has a zero column");
            vol.spacing[static_cast<std::size_t>(c)] = n;
            for (int r = 0; r < 3; ++r)
                vol.direction[static_cast<std::size_t>(r * 3 + c)] = rows[r][c] / n;
        }
        vol.origin = {h.srow_x[3], h.srow_y[3], h.srow_z[3]};
        return;
    }
    if (h.qform_code > 0) {
        const double b = h.quatern_b, c = h.quatern_c, d = h.quatern_d;
        double a2 = 1.0 - (b * b + c * c + d * d);
        const double a = a2 > 0 ? std::sqrt(a2) : 0.0;
        const double qfac = (h.pixdim[0] < 0) ? -1.0 : 1.0;
        const double R[9] = {
            a * a + b * b - c * c - d * d, 2 * (b * c - a * d),           2 * (b * d + a * c),
            2 * (b * c + a * d),           a * a + c * c - b * b - d * d, 2 * (c * d - a * b),
            2 * (b * d - a * c),           2 * (c * d + a * b),           a * a + d * d - b * b - c * c};
        for (int r = 0; r < 3; ++r)
            for (int col = 0; col < 3; ++col)
                vol.direction[static_cast<std::size_t>(r * 3 + col)] =
                    R[r * 3 + col] * (col == 2 ? qfac : 1.0);
        vol.origin = {h.qoffset_x, h.qoffset_y, h.qoffset_z};
        return;
    }
    // Neither form present: axis-aligned grid at the header pixdims.
    vol.origin = {0, 0, 0};
}

}  // namespace

Volume3D read(const std::filesystem::path& p, VoxelKind kind_hint) {
    const auto bytes = read_file(p);
    if (bytes.size() >= 2 && bytes[0] == 0x1f && bytes[1] == 0x8b)
        throw FormatError("gzip-compressed NIfTI is not supported: " + p.string());
    if (bytes.size() < sizeof(Nifti1Header)) throw FormatError("short NIfTI file: " + p.string());

    Nifti1Header h{};
    std::memcpy(&h, bytes.data(), sizeof h);
    if (h.sizeof_hdr != 348) throw FormatError("bad sizeof_hdr (not little-endian NIfTI-1?)");
    if (std::strncmp(h.magic, "n+1", 3) != 0)
        throw FormatError("not a single-file NIfTI-1 (.nii): " + p.string());
    if (h.dim[0] < 3) throw FormatError("expected a 3D volume");
    for (int d = 4; d <= h.dim[0]; ++d)
        if (h.dim[d] > 1) throw FormatError("expected a 3D volume, found >3 nontrivial dims");

    Volume3D vol;
    vol.dims = {static_cast<std::size_t>(h.dim[1]), static_cast<std::size_t>(h.dim[2]),
                static_cast<std::size_t>(h.dim[3])};
    vol.spacing = {std::abs(h.pixdim[1]), std::abs(h.pixdim[2]), std::abs(h.pixdim[3])};
    affine_from_header(h, vol);
    vol.kind = (h.datatype == DT_UINT8 && kind_hint == VoxelKind::Intensity)
                   ? VoxelKind::Label
                   : kind_hint;

    const std::size_t n = vol.size();
    const auto off = static_cast<std::size_t>(h.vox_offset);
    const std::size_t bpv = static_cast<std::size_t>(h.bitpix) / 8;
    if (off + n * bpv > bytes.size()) throw FormatError("NIfTI data section truncated");

    vol.voxels.resize(n);
    const std::uint8_t* src = bytes.data() + off;
    switch (h.datatype) {
        case DT_UINT8:
            for (std::size_t i = 0; i < n; ++i) vol.voxels[i] = static_cast<float>(src[i]);
            break;
        case DT_INT16:
            for (std::size_t i = 0; i < n; ++i) {
                std::int16_t v;
                std::memcpy(&v, src + 2 * i, 2);
                vol.voxels[i] = static_cast<float>(v);
            }
            break;
        case DT_FLOAT32:
            for (std::size_t i = 0; i < n; ++i) {
                float v;
                std::memcpy(&v, src + 4 * i, 4);
                vol.voxels[i] = v;
            }
            break;
        default:
            throw FormatError("unsupported NIfTI datatype " + std::to_string(h.datatype));
    }
    if (h.scl_slope != 0.0f && (h.scl_slope != 1.0f || h.scl_inter != 0.0f))
        for (auto& v : vol.voxels) v = v * h.scl_slope + h.scl_inter;
    return vol;
}

void write(const std::filesystem::path& p, const Volume3D& vol) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = 3;
    for (int d = 0; d < 3; ++d) h.dim[d + 1] = static_cast<std::int16_t>(vol.dims[static_cast<std::size_t>(d)]);
    h.dim[4] = h.dim[5] = h.dim[6] = h.dim[7] = 1;
    const bool label = vol.kind == VoxelKind::Label;
    h.datatype = label ? DT_UINT8 : DT_FLOAT32;
    h.bitpix = label ? 8 : 32;
    h.pixdim[0] = 1.0f;
    for (int d = 0; d < 3; ++d) h.pixdim[d + 1] = static_cast<float>(vol.spacing[static_cast<std::size_t>(d)]);
    h.vox_offset = 352.0f;
    h.scl_slope = 1.0f;
    h.scl_inter = 0.0f;
    h.xyzt_units = 2;  // NIFTI_UNITS_MM
    h.qform_code = 0;
    h.sform_code = 1;
    const Affine4 a = vol.index_to_world();
    for (int c = 0; c < 4; ++c) {
        h.srow_x[c] = static_cast<float>(a.at(0, c));
        h.srow_y[c] = static_cast<float>(a.at(1, c));
        h.srow_z[c] = static_cast<float>(a.at(2, c));
    }
    std::memcpy(h.magic, "n+1", 4);

    std::vector<std::uint8_t> out(352 + vol.size() * (label ? 1 : 4), 0);
    std::memcpy(out.data(), &h, sizeof h);
    if (label) {
        for (std::size_t i = 0; i < vol.size(); ++i)
            out[352 + i] = static_cast<std::uint8_t>(vol.voxels[i]);
    } else {
        std::memcpy(out.data() + 352, vol.voxels.data(), vol.size() * 4);
    }
    write_file(p, out);
}

Affine4 read_affine(const std::filesystem::path& p) {
    std::istringstream in(read_text_file(p));
    Affine4 a;
    for (std::size_t i = 0; i < 16; ++i)
        if (!(in >> a.m[i])) throw FormatError("affine text file needs 16 reals: " + p.string());
    a.validate(1e-6);
    return a;
}

void write_affine(const std::filesystem::path& p, const Affine4& a) {
    std::ostringstream out;
    out.precision(17);
    for (int r = 0; r < 4; ++r) {
        for (int c = 0; c < 4; ++c) out << a.at(r, c) << (c == 3 ? "" : " ");
        out << "\n";
    }
    write_text_file(p, out.str());
}

}  // namespace gliopipe::nifti
