#include "gliopipe/dicom.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <map>
#include <numeric>

#include "gliopipe/util.hpp"

namespace gliopipe {

std::string DicomTag::str() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "(%04X,%04X)", group, element);
    return buf;
}

namespace {

constexpr const char* kImplicitLE = "1.2.840.10008.1.2";
constexpr const char* kExplicitLE = "1.2.840.10008.1.2.1";
constexpr std::uint32_t kUndefined = 0xFFFFFFFFu;

struct Reader {
    std::span<const std::uint8_t> bytes;
    std::size_t pos = 0;

    std::size_t remaining() const { return bytes.size() - pos; }
    bool eof() const { return pos >= bytes.size(); }

    void need(std::size_t n, const char* what) const {
        if (pos + n > bytes.size())
            throw TruncatedElement(std::string("truncated while reading ") + what);
    }
    std::uint16_t u16() {
        need(2, "uint16");
        std::uint16_t v = static_cast<std::uint16_t>(bytes[pos] | (bytes[pos + 1] << 8));
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4, "uint32");
        std::uint32_t v = static_cast<std::uint32_t>(bytes[pos]) |
                          (static_cast<std::uint32_t>(bytes[pos + 1]) << 8) |
                          (static_cast<std::uint32_t>(bytes[pos + 2]) << 16) |
                          (static_cast<std::uint32_t>(bytes[pos + 3]) << 24);
        pos += 4;
        return v;
    }
    std::uint16_t peek_u16(std::size_t off) const {
        if (pos + off + 2 > bytes.size()) return 0xFFFF;
        return static_cast<std::uint16_t>(bytes[pos + off] | (bytes[pos + off + 1] << 8));
    }
    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto s = bytes.subspan(pos, n);
        pos += n;
        return s;
    }
    void skip(std::size_t n, const char* what) {
        need(n, what);
        pos += n;
    }
};

struct Element {
    DicomTag tag;
    char vr[3] = {0, 0, 0};
    std::uint32_t length = 0;
    bool undefined_length = false;
};

bool is_short_vr(const char* vr) {
    static const char* short_vrs[] = {"AE", "AS", "AT", "CS", "DA", "DS", "DT", "FL", "FD",
                                      "IS", "LO", "LT", "PN", "SH", "SL", "SS", "ST", "TM",
                                      "UI", "UL", "US"};
    for (const char* s : short_vrs)
        if (vr[0] == s[0] && vr[1] == s[1]) return true;
    return false;
}

bool is_long_vr(const char* vr) {
    static const char* long_vrs[] = {"OB", "OW", "OF", "SQ", "UT", "UN"};
    for (const char* s : long_vrs)
        if (vr[0] == s[0] && vr[1] == s[1]) return true;
    return false;
}

Element read_element_header(Reader& r, bool explicit_vr) {
    Element e;
    e.tag.group = r.u16();
    e.tag.element = r.u16();
    // Delimitation items carry no VR in either syntax.
    if (e.tag.group == 0xFFFE) {
        e.length = r.u32();
        e.undefined_length = (e.length == kUndefined);
        return e;
    }
    if (explicit_vr) {
        const auto vr_span = r.take(2, "VR");
        e.vr[0] = static_cast<char>(vr_span[0]);
        e.vr[1] = static_cast<char>(vr_span[1]);
        if (is_long_vr(e.vr)) {
            r.skip(2, "VR reserved bytes");
            e.length = r.u32();
        } else if (is_short_vr(e.vr)) {
            e.length = r.u16();
        } else {
            throw TruncatedElement("unrecognized VR for " + e.tag.str());
        }
    } else {
        e.length = r.u32();
    }
    e.undefined_length = (e.length == kUndefined);
    return e;
}

void skip_element_body(Reader& r, const Element& e, bool explicit_vr);

// Walks items of an undefined-length sequence until the sequence delimiter.
void skip_undefined_sequence(Reader& r, bool explicit_vr) {
    for (;;) {
        Element item = read_element_header(r, explicit_vr);
        if (item.tag == DicomTag{0xFFFE, 0xE0DD}) return;  // sequence delimiter
        if (item.tag != DicomTag{0xFFFE, 0xE000})
            throw TruncatedElement("unexpected tag " + item.tag.str() + " inside sequence");
        if (item.undefined_length) {
            // Undefined-length item: walk nested elements until the item
            // delimitation item.
            for (;;) {
                Element nested = read_element_header(r, explicit_vr);
                if (nested.tag == DicomTag{0xFFFE, 0xE00D}) break;
                skip_element_body(r, nested, explicit_vr);
            }
        } else {
            r.skip(item.length, "sequence item");
        }
    }
}

void skip_element_body(Reader& r, const Element& e, bool explicit_vr) {
    if (e.undefined_length) {
        // Only sequences may have undefined length in the syntaxes we accept.
        skip_undefined_sequence(r, explicit_vr);
        return;
    }
    r.skip(e.length, "element value");
}

std::string as_string(std::span<const std::uint8_t> v) {
    return trim(std::string(reinterpret_cast<const char*>(v.data()), v.size()));
}

std::vector<std::string> as_multi_string(std::span<const std::uint8_t> v) {
    std::vector<std::string> out;
    for (auto& piece : split_tokens(std::string(reinterpret_cast<const char*>(v.data()), v.size()),
                                    "\\"))
        out.push_back(trim(piece));
    return out;
}

std::vector<double> as_doubles(std::span<const std::uint8_t> v, const DicomTag& tag) {
    std::vector<double> out;
    for (auto& piece : as_multi_string(v)) {
        try {
            out.push_back(std::stod(piece));
        } catch (const std::exception&) {
            throw TruncatedElement("bad decimal string in " + tag.str());
        }
    }
    return out;
}

int as_int_string(std::span<const std::uint8_t> v, const DicomTag& tag) {
    try {
        return std::stoi(as_string(v));
    } catch (const std::exception&) {
        throw TruncatedElement("bad integer string in " + tag.str());
    }
}

std::uint16_t as_u16(std::span<const std::uint8_t> v, const DicomTag& tag) {
    if (v.size() < 2) throw TruncatedElement("short US value in " + tag.str());
    return static_cast<std::uint16_t>(v[0] | (v[1] << 8));
}

// Reads the file meta group (always explicit VR) and returns the transfer
// syntax UID, empty when not present.
std::string read_meta_group(Reader& r) {
    std::string transfer_syntax;
    while (!r.eof() && r.peek_u16(0) == 0x0002) {
        Element e = read_element_header(r, /*explicit_vr=*/true);
        if (e.undefined_length) throw TruncatedElement("undefined length in file meta group");
        auto v = r.take(e.length, "meta element value");
        if (e.tag == tags::TransferSyntaxUID) transfer_syntax = as_string(v);
    }
    return transfer_syntax;
}

}  // namespace

DicomFile parse_dicom(std::span<const std::uint8_t> bytes) {
    Reader r{bytes};
    if (bytes.size() >= 132 && std::memcmp(bytes.data() + 128, "DICM", 4) == 0) {
        r.pos = 132;
    } else if (bytes.size() >= 8 && r.peek_u16(0) == 0x0002) {
        // No preamble, stream starts at the file meta group.
        r.pos = 0;
    } else {
        throw MissingMagic("no DICM magic and no file meta group");
    }

    std::string ts = read_meta_group(r);
    if (ts.empty()) ts = kExplicitLE;
    bool explicit_vr;
    if (ts == kExplicitLE)
        explicit_vr = true;
    else if (ts == kImplicitLE)
        explicit_vr = false;
    else
        throw UnsupportedTransferSyntax("transfer syntax " + ts +
                                        " (only uncompressed little endian is supported)");

    DicomFile out;
    InstanceMeta& m = out.meta;
    while (!r.eof()) {
        if (r.remaining() < 8) throw TruncatedElement("trailing bytes shorter than an element");
        Element e = read_element_header(r, explicit_vr);

        if (e.tag == tags::PixelData) {
            if (e.undefined_length)
                throw UnsupportedTransferSyntax(
                    "encapsulated (compressed) pixel data is not supported");
            auto v = r.take(e.length, "pixel data");
            out.pixel_data.assign(v.begin(), v.end());
            continue;
        }
        if (e.undefined_length || (explicit_vr && e.vr[0] == 'S' && e.vr[1] == 'Q')) {
            skip_element_body(r, e, explicit_vr);
            continue;
        }

        auto v = r.take(e.length, "element value");
        if (e.tag == tags::SeriesInstanceUID) m.series_uid = as_string(v);
        else if (e.tag == tags::SOPInstanceUID) m.sop_uid = as_string(v);
        else if (e.tag == tags::SeriesDescription) m.series_description = as_string(v);
        else if (e.tag == tags::ImageType) m.image_type = as_multi_string(v);
        else if (e.tag == tags::AngioFlag) {
            const auto s = as_string(v);
            if (!s.empty()) m.angio_flag = s[0];
        } else if (e.tag == tags::MRAcquisitionType) m.mr_acq_type = as_string(v);
        else if (e.tag == tags::ImageOrientationPatient) {
            const auto d = as_doubles(v, e.tag);
            if (d.size() != 6) throw TruncatedElement("IOP must have 6 values");
            std::array<double, 6> iop;
            std::copy_n(d.begin(), 6, iop.begin());
            for (int half = 0; half < 2; ++half) {
                const Vec3 c{iop[static_cast<std::size_t>(half * 3)],
                             iop[static_cast<std::size_t>(half * 3 + 1)],
                             iop[static_cast<std::size_t>(half * 3 + 2)]};
                if (std::abs(norm(c) - 1.0) > 1e-3)
                    throw FormatError("direction cosines are not unit vectors");
            }
            m.image_orientation = iop;
        } else if (e.tag == tags::ImagePositionPatient) {
            const auto d = as_doubles(v, e.tag);
            if (d.size() != 3) throw TruncatedElement("IPP must have 3 values");
            m.image_position = {d[0], d[1], d[2]};
        } else if (e.tag == tags::Rows) m.rows = as_u16(v, e.tag);
        else if (e.tag == tags::Columns) m.cols = as_u16(v, e.tag);
        else if (e.tag == tags::PixelSpacing) {
            const auto d = as_doubles(v, e.tag);
            if (d.size() != 2) throw TruncatedElement("PixelSpacing must have 2 values");
            m.pixel_spacing = {d[0], d[1]};
        } else if (e.tag == tags::SeriesNumber) m.series_number = as_int_string(v, e.tag);
        else if (e.tag == tags::InstanceNumber) m.instance_number = as_int_string(v, e.tag);
        else if (e.tag == tags::BitsAllocated) m.bits_allocated = as_u16(v, e.tag);
        else if (e.tag == tags::PixelRepresentation) m.pixel_representation = as_u16(v, e.tag);
        // everything else: skipped by length
    }

    if (m.series_uid.empty()) throw FormatError("missing SeriesInstanceUID");
    return out;
}

InstanceMeta parse_dicom_file(std::span<const std::uint8_t> bytes) {
    return parse_dicom(bytes).meta;
}

std::vector<SeriesRecord> assemble_series(std::vector<InstanceMeta> instances) {
    std::map<std::string, SeriesRecord> by_uid;
    for (auto& inst : instances) {
        auto& rec = by_uid[inst.series_uid];
        rec.series_uid = inst.series_uid;
        rec.instances.push_back(std::move(inst));
    }
    std::vector<SeriesRecord> out;
    out.reserve(by_uid.size());
    for (auto& [uid, rec] : by_uid) {
        rec.n_instances = rec.instances.size();
        out.push_back(std::move(rec));
    }
    return out;
}

StackedVolume series_to_volume(const SeriesRecord& series,
                               const std::vector<std::vector<std::uint8_t>>& pixel_payloads) {
    const auto n = series.instances.size();
    if (n == 0) throw InconsistentGeometry("series has no instances");
    if (pixel_payloads.size() != n)
        throw InconsistentGeometry("payload count differs from instance count");

    const auto& first = series.rep();
    if (first.rows <= 0 || first.cols <= 0)
        throw InconsistentGeometry("missing Rows/Columns");
    for (const auto& inst : series.instances) {
        if (inst.rows != first.rows || inst.cols != first.cols)
            throw InconsistentGeometry("instances disagree on Rows/Columns");
        if (inst.pixel_spacing.has_value() != first.pixel_spacing.has_value())
            throw InconsistentGeometry("instances disagree on PixelSpacing presence");
        if (inst.pixel_spacing &&
            (std::abs((*inst.pixel_spacing)[0] - (*first.pixel_spacing)[0]) > 1e-6 ||
             std::abs((*inst.pixel_spacing)[1] - (*first.pixel_spacing)[1]) > 1e-6))
            throw InconsistentGeometry("instances disagree on PixelSpacing");
        if (inst.image_orientation.has_value() != first.image_orientation.has_value())
            throw InconsistentGeometry("instances disagree on orientation presence");
        if (inst.image_orientation) {
            for (std::size_t i = 0; i < 6; ++i)
                if (std::abs((*inst.image_orientation)[i] - (*first.image_orientation)[i]) > 1e-6)
                    throw InconsistentGeometry("instances disagree on orientation");
        }
        if (inst.bits_allocated.value_or(16) != first.bits_allocated.value_or(16))
            throw InconsistentGeometry("instances disagree on BitsAllocated");
    }

    const int bits = first.bits_allocated.value_or(16);
    if (bits != 8 && bits != 16)
        throw InconsistentGeometry("only 8- and 16-bit pixel data is supported");
    const std::size_t bpv = static_cast<std::size_t>(bits) / 8;
    const auto rows = static_cast<std::size_t>(first.rows);
    const auto cols = static_cast<std::size_t>(first.cols);
    for (const auto& payload : pixel_payloads)
        if (payload.size() != rows * cols * bpv)
            throw InconsistentGeometry("pixel payload size does not match Rows*Columns");

    StackedVolume result;
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);

    Vec3 row_cos{1, 0, 0}, col_cos{0, 1, 0}, normal{0, 0, 1};
    if (first.image_orientation) {
        const auto& iop = *first.image_orientation;
        row_cos = {iop[0], iop[1], iop[2]};
        col_cos = {iop[3], iop[4], iop[5]};
        normal = cross(row_cos, col_cos);
        const double len = norm(normal);
        if (len < 1e-6) throw InconsistentGeometry("degenerate direction cosines");
        for (auto& c : normal) c /= len;
    }

    const bool have_positions =
        first.image_orientation &&
        std::all_of(series.instances.begin(), series.instances.end(),
                    [](const InstanceMeta& i) { return i.image_position.has_value(); });

    std::vector<double> proj(n, 0.0);
    if (have_positions) {
        for (std::size_t i = 0; i < n; ++i)
            proj[i] = dot(*series.instances[i].image_position, normal);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return proj[a] < proj[b]; });
        for (std::size_t i = 0; i + 1 < n; ++i)
            if (proj[order[i + 1]] - proj[order[i]] <= 1e-9)
                throw InconsistentGeometry("duplicate slice positions");
    } else {
        // Fall back to instance-number order; recorded in the result so the
        // pipeline can flag it in provenance.
        result.from_instance_order = true;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return series.instances[a].instance_number.value_or(static_cast<int>(a)) <
                   series.instances[b].instance_number.value_or(static_cast<int>(b));
        });
    }

    double dz = 1.0;
    bool uniform = true;
    if (have_positions && n > 1) {
        dz = (proj[order[n - 1]] - proj[order[0]]) / static_cast<double>(n - 1);
        for (std::size_t i = 0; i + 1 < n; ++i)
            if (std::abs((proj[order[i + 1]] - proj[order[i]]) - dz) > 1e-3) uniform = false;
    }
    result.slice_spacing = dz;
    result.uniform_spacing = uniform;

    const std::array<double, 2> ps = first.pixel_spacing.value_or(std::array<double, 2>{1.0, 1.0});
    Volume3D vol;
    vol.dims = {cols, rows, n};
    vol.spacing = {ps[1], ps[0], dz};  // PixelSpacing is (row, col)
    for (int r = 0; r < 3; ++r) {
        vol.direction[static_cast<std::size_t>(r * 3 + 0)] = row_cos[static_cast<std::size_t>(r)];
        vol.direction[static_cast<std::size_t>(r * 3 + 1)] = col_cos[static_cast<std::size_t>(r)];
        vol.direction[static_cast<std::size_t>(r * 3 + 2)] = normal[static_cast<std::size_t>(r)];
    }
    vol.origin = have_positions ? *series.instances[order[0]].image_position : Vec3{0, 0, 0};
    vol.voxels.resize(vol.size());

    const bool is_signed = first.pixel_representation.value_or(0) == 1;
    for (std::size_t slice = 0; slice < n; ++slice) {
        const auto& payload = pixel_payloads[order[slice]];
        for (std::size_t j = 0; j < rows; ++j)
            for (std::size_t i = 0; i < cols; ++i) {
                const std::size_t src = j * cols + i;
                float value;
                if (bits == 8) {
                    value = static_cast<float>(payload[src]);
                } else {
                    std::uint16_t raw = static_cast<std::uint16_t>(payload[2 * src] |
                                                                   (payload[2 * src + 1] << 8));
                    value = is_signed ? static_cast<float>(static_cast<std::int16_t>(raw))
                                      : static_cast<float>(raw);
                }
                vol.at(i, j, slice) = value;
            }
    }
    result.volume = std::move(vol);
    return result;
}

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& allowed,
                const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(allowed.begin(), allowed.end(), it.key()) == allowed.end())
            throw FormatError("unknown key '" + it.key() + "' in " + where);
}

}  // namespace

SessionManifest manifest_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw FormatError("manifest must be a JSON object");
    check_keys(j, {"session_id", "series"}, "manifest");
    SessionManifest out;
    if (!j.contains("session_id") || !j["session_id"].is_string())
        throw FormatError("manifest needs a string session_id");
    out.session_id = j["session_id"].get<std::string>();
    if (!j.contains("series") || !j["series"].is_array())
        throw FormatError("manifest needs a series array");

    for (const auto& s : j["series"]) {
        check_keys(s,
                   {"series_uid", "description", "image_type", "angio_flag", "mr_acq_type",
                    "iop", "n_instances", "series_number"},
                   "manifest series");
        if (!s.contains("series_uid")) throw FormatError("manifest series needs series_uid");
        if (!s.contains("n_instances")) throw FormatError("manifest series needs n_instances");

        InstanceMeta proto;
        proto.series_uid = s["series_uid"].get<std::string>();
        if (proto.series_uid.empty()) throw FormatError("series_uid must be nonempty");
        if (s.contains("description")) proto.series_description = s["description"].get<std::string>();
        if (s.contains("image_type"))
            proto.image_type = s["image_type"].get<std::vector<std::string>>();
        if (s.contains("angio_flag")) {
            const auto f = s["angio_flag"].get<std::string>();
            if (!f.empty()) proto.angio_flag = f[0];
        }
        if (s.contains("mr_acq_type")) proto.mr_acq_type = s["mr_acq_type"].get<std::string>();
        if (s.contains("iop")) {
            const auto v = s["iop"].get<std::vector<double>>();
            if (v.size() != 6) throw FormatError("iop must have 6 values");
            std::array<double, 6> iop;
            std::copy_n(v.begin(), 6, iop.begin());
            proto.image_orientation = iop;
        }
        if (s.contains("series_number")) proto.series_number = s["series_number"].get<int>();

        const auto count = s["n_instances"].get<std::size_t>();
        if (count < 1) throw FormatError("n_instances must be >= 1");
        SeriesRecord rec;
        rec.series_uid = proto.series_uid;
        for (std::size_t k = 0; k < count; ++k) {
            InstanceMeta inst = proto;
            inst.sop_uid = proto.series_uid + "." + std::to_string(k + 1);
            inst.instance_number = static_cast<int>(k + 1);
            rec.instances.push_back(std::move(inst));
        }
        rec.n_instances = count;
        out.series.push_back(std::move(rec));
    }
    return out;
}

nlohmann::json manifest_to_json(const std::string& session_id,
                                const std::vector<SeriesRecord>& series) {
    nlohmann::json j;
    j["session_id"] = session_id;
    j["series"] = nlohmann::json::array();
    for (const auto& rec : series) {
        const auto& m = rec.rep();
        nlohmann::json s;
        s["series_uid"] = rec.series_uid;
        if (m.series_description) s["description"] = *m.series_description;
        if (m.image_type) s["image_type"] = *m.image_type;
        if (m.angio_flag) s["angio_flag"] = std::string(1, *m.angio_flag);
        if (m.mr_acq_type) s["mr_acq_type"] = *m.mr_acq_type;
        if (m.image_orientation)
            s["iop"] = std::vector<double>(m.image_orientation->begin(),
                                           m.image_orientation->end());
        s["n_instances"] = rec.n_instances;
        if (m.series_number) s["series_number"] = *m.series_number;
        j["series"].push_back(std::move(s));
    }
    return j;
}

}  // namespace gliopipe
