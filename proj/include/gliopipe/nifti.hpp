#pragma once

#include <filesystem>

#include "gliopipe/volume.hpp"

namespace gliopipe::nifti {

// Single-file NIfTI-1 (.nii), little endian, uncompressed.
// Supported datatypes: uint8 (2), int16 (4), float32 (16).
// On read the sform is preferred over the qform for the voxel-to-world map.
Volume3D read(const std::filesystem::path& p, VoxelKind kind_hint = VoxelKind::Intensity);

// Writes float32 for Intensity volumes and uint8 for Label volumes; the
// voxel-to-world map is emitted as the sform (sform_code = 1).
void write(const std::filesystem::path& p, const Volume3D& vol);

// FLIRT-style 4x4 text transform: 16 whitespace-separated reals, row-major.
Affine4 read_affine(const std::filesystem::path& p);
void write_affine(const std::filesystem::path& p, const Affine4& a);

}  // namespace gliopipe::nifti
