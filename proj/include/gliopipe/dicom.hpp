#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gliopipe/volume.hpp"

namespace gliopipe {

struct DicomTag {
    std::uint16_t group = 0;
    std::uint16_t element = 0;

    auto operator<=>(const DicomTag&) const = default;
    // Renders as "(GGGG,EEEE)", uppercase hex.
    std::string str() const;
};

namespace tags {
inline constexpr DicomTag ImageType{0x0008, 0x0008};
inline constexpr DicomTag SOPInstanceUID{0x0008, 0x0018};
inline constexpr DicomTag SeriesDescription{0x0008, 0x103E};
inline constexpr DicomTag MRAcquisitionType{0x0018, 0x0023};
inline constexpr DicomTag AngioFlag{0x0018, 0x0025};
inline constexpr DicomTag SeriesInstanceUID{0x0020, 0x000E};
inline constexpr DicomTag SeriesNumber{0x0020, 0x0011};
inline constexpr DicomTag InstanceNumber{0x0020, 0x0013};
inline constexpr DicomTag ImagePositionPatient{0x0020, 0x0032};
inline constexpr DicomTag ImageOrientationPatient{0x0020, 0x0037};
inline constexpr DicomTag Rows{0x0028, 0x0010};
inline constexpr DicomTag Columns{0x0028, 0x0011};
inline constexpr DicomTag PixelSpacing{0x0028, 0x0030};
inline constexpr DicomTag BitsAllocated{0x0028, 0x0100};
inline constexpr DicomTag PixelRepresentation{0x0028, 0x0103};
inline constexpr DicomTag PixelData{0x7FE0, 0x0010};
inline constexpr DicomTag TransferSyntaxUID{0x0002, 0x0010};
}  // namespace tags

// Metadata of one DICOM instance; absent optional tags stay absent, never
// defaulted. rows/cols are 0 when the tag was not present.
struct InstanceMeta {
    std::string series_uid;
    std::string sop_uid;
    std::optional<std::string> series_description;
    std::optional<std::vector<std::string>> image_type;
    std::optional<char> angio_flag;
    std::optional<std::string> mr_acq_type;
    std::optional<std::array<double, 6>> image_orientation;  // row then column cosines
    std::optional<std::array<double, 3>> image_position;     // mm
    int rows = 0;
    int cols = 0;
    std::optional<std::array<double, 2>> pixel_spacing;  // (row, col) mm
    std::optional<int> series_number;
    std::optional<int> instance_number;
    std::optional<int> bits_allocated;
    std::optional<int> pixel_representation;
};

struct SeriesRecord {
    std::string series_uid;
    std::vector<InstanceMeta> instances;
    std::size_t n_instances = 0;

    // Series-level tags are taken from the first instance.
    const InstanceMeta& rep() const { return instances.front(); }
};

struct DicomFile {
    InstanceMeta meta;
    std::vector<std::uint8_t> pixel_data;
};

// Parses one Part-10 file (explicit or implicit VR little endian,
// uncompressed). Unknown elements are skipped by length, sequences included.
// Throws MissingMagic, UnsupportedTransferSyntax, TruncatedElement.
DicomFile parse_dicom(std::span<const std::uint8_t> bytes);
InstanceMeta parse_dicom_file(std::span<const std::uint8_t> bytes);

// Groups instances by series_uid; output sorted by series_uid.
std::vector<SeriesRecord> assemble_series(std::vector<InstanceMeta> instances);

struct StackedVolume {
    Volume3D volume;
    double slice_spacing = 1.0;
    bool uniform_spacing = true;
    // True when image positions were missing and slices were ordered by
    // instance number instead of spatial projection.
    bool from_instance_order = false;
};

// Stacks per-instance pixel payloads (parallel to series.instances) into a
// volume; slices are sorted by the projection of the image position onto the
// slice normal. Throws InconsistentGeometry.
StackedVolume series_to_volume(const SeriesRecord& series,
                               const std::vector<std::vector<std::uint8_t>>& pixel_payloads);

// --- session manifest (metadata-only alternative to raw DICOM) ---

struct SessionManifest {
    std::string session_id;
    std::vector<SeriesRecord> series;
};

// Strict schema: {session_id, series:[{series_uid, description, image_type,
// angio_flag, mr_acq_type, iop, n_instances, series_number}]}; unknown keys
// are rejected (FormatError).
SessionManifest manifest_from_json(const nlohmann::json& j);
nlohmann::json manifest_to_json(const std::string& session_id,
                                const std::vector<SeriesRecord>& series);

}  // namespace gliopipe
