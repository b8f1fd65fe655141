#include "emednext/nifti.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <vector>

#include "emednext/error.hpp"

namespace emednext {
namespace {

constexpr std::size_t kHeaderSize = 348;
constexpr float kSingleFileVoxOffset = 352.f;  // header + 4-byte extension flag

template <typename T>
T byteswap_scalar(T v) {
    auto bytes = std::bit_cast<std::array<std::uint8_t, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
}

void swap_header(Nifti1Header& h) {
    h.sizeof_hdr = byteswap_scalar(h.sizeof_hdr);
    h.extents = byteswap_scalar(h.extents);
    h.session_error = byteswap_scalar(h.session_error);
    for (auto& d : h.dim) d = byteswap_scalar(d);
    h.intent_p1 = byteswap_scalar(h.intent_p1);
    h.intent_p2 = byteswap_scalar(h.intent_p2);
    h.intent_p3 = byteswap_scalar(h.intent_p3);
    h.intent_code = byteswap_scalar(h.intent_code);
    h.datatype = byteswap_scalar(h.datatype);
    h.bitpix = byteswap_scalar(h.bitpix);
    h.slice_start = byteswap_scalar(h.slice_start);
    for (auto& p : h.pixdim) p = byteswap_scalar(p);
    h.vox_offset = byteswap_scalar(h.vox_offset);
    h.scl_slope = byteswap_scalar(h.scl_slope);
    h.scl_inter = byteswap_scalar(h.scl_inter);
    h.slice_end = byteswap_scalar(h.slice_end);
    h.cal_max = byteswap_scalar(h.cal_max);
    h.cal_min = byteswap_scalar(h.cal_min);
    h.slice_duration = byteswap_scalar(h.slice_duration);
    h.toffset = byteswap_scalar(h.toffset);
    h.glmax = byteswap_scalar(h.glmax);
    h.glmin = byteswap_scalar(h.glmin);
    h.qform_code = byteswap_scalar(h.qform_code);
    h.sform_code = byteswap_scalar(h.sform_code);
    h.quatern_b = byteswap_scalar(h.quatern_b);
    h.quatern_c = byteswap_scalar(h.quatern_c);
    h.quatern_d = byteswap_scalar(h.quatern_d);
    h.qoffset_x = byteswap_scalar(h.qoffset_x);
    h.qoffset_y = byteswap_scalar(h.qoffset_y);
    h.qoffset_z = byteswap_scalar(h.qoffset_z);
    for (auto& v : h.srow_x) v = byteswap_scalar(v);
    for (auto& v : h.srow_y) v = byteswap_scalar(v);
    for (auto& v : h.srow_z) v = byteswap_scalar(v);
}

// zlib's gzread reads uncompressed files transparently, so one read path
// serves both .nii and .nii.gz.
class GzReader {
public:
    explicit GzReader(const std::filesystem::path& path) {
        file_ = gzopen(path.string().c_str(), "rb");
        if (!file_) throw IoError("cannot open " + path.string());
    }
    ~GzReader() {
        if (file_) gzclose(file_);
    }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read_exact(void* dst, std::size_t n, const std::string& what) {
        auto* p = static_cast<std::uint8_t*>(dst);
        while (n > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, 1u << 30));
            const int got = gzread(file_, p, chunk);
            if (got <= 0) throw FormatError("truncated NIfTI file while reading " + what);
            p += got;
            n -= static_cast<std::size_t>(got);
        }
    }

    void skip(std::size_t n) {
        std::uint8_t scratch[4096];
        while (n > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n, sizeof scratch));
            const int got = gzread(file_, scratch, chunk);
            if (got <= 0) throw FormatError("truncated NIfTI file while skipping to voxel data");
            n -= static_cast<std::size_t>(got);
        }
    }

private:
    gzFile file_ = nullptr;
};

bool wants_gzip(const std::filesystem::path& path) {
    const std::string s = path.string();
    return s.size() >= 3 && s.compare(s.size() - 3, 3, ".gz") == 0;
}

template <typename T>
void convert_payload(const std::vector<std::uint8_t>& raw, bool swap, std::vector<float>& out) {
    const std::size_t n = raw.size() / sizeof(T);
    out.resize(n);
    const T* src = reinterpret_cast<const T*>(raw.data());
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, src + i, sizeof(T));
        if (swap) v = byteswap_scalar(v);
        out[i] = static_cast<float>(v);
    }
}

Nifti1Header make_base_header(const GridGeometry& geom, int channels, std::int16_t datatype,
                              std::int16_t bitpix) {
    Nifti1Header h{};
    h.sizeof_hdr = 348;
    h.regular = 'r';
    h.dim[0] = static_cast<std::int16_t>(channels > 1 ? 4 : 3);
    h.dim[1] = static_cast<std::int16_t>(geom.shape[0]);
    h.dim[2] = static_cast<std::int16_t>(geom.shape[1]);
    h.dim[3] = static_cast<std::int16_t>(geom.shape[2]);
    h.dim[4] = static_cast<std::int16_t>(channels > 1 ? channels : 1);
    for (int d = 5; d < 8; ++d) h.dim[d] = 1;
    h.datatype = datatype;
    h.bitpix = bitpix;
    h.pixdim[0] = 1.f;
    h.pixdim[1] = geom.spacing[0];
    h.pixdim[2] = geom.spacing[1];
    h.pixdim[3] = geom.spacing[2];
    h.pixdim[4] = 1.f;
    h.vox_offset = kSingleFileVoxOffset;
    h.scl_slope = 1.f;
    h.scl_inter = 0.f;
    h.xyzt_units = 2;  // NIFTI_UNITS_MM
    std::memcpy(h.magic, "n+1", 4);
    return h;
}

void apply_affine_block(Nifti1Header& h, const Volume& vol) {
    if (vol.has_affine) {
        std::memcpy(reinterpret_cast<std::uint8_t*>(&h) + 252, vol.nifti_affine.data(),
                    vol.nifti_affine.size());
    }
}

void write_bytes(const std::filesystem::path& path, const Nifti1Header& h, const void* payload,
                 std::size_t payload_bytes) {
    const std::uint8_t extension_flag[4] = {0, 0, 0, 0};
    if (wants_gzip(path)) {
        gzFile f = gzopen(path.string().c_str(), "wb");
        if (!f) throw IoError("cannot open " + path.string() + " for writing");
        bool ok = gzwrite(f, &h, kHeaderSize) == int(kHeaderSize) &&
                  gzwrite(f, extension_flag, 4) == 4;
        const auto* p = static_cast<const std::uint8_t*>(payload);
        std::size_t left = payload_bytes;
        while (ok && left > 0) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(left, 1u << 30));
            ok = gzwrite(f, p, chunk) == int(chunk);
            p += chunk;
            left -= chunk;
        }
        if (gzclose(f) != Z_OK || !ok) throw IoError("failed writing " + path.string());
    } else {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + path.string() + " for writing");
        f.write(reinterpret_cast<const char*>(&h), kHeaderSize);
        f.write(reinterpret_cast<const char*>(extension_flag), 4);
        f.write(static_cast<const char*>(payload), static_cast<std::streamsize>(payload_bytes));
        if (!f) throw IoError("failed writing " + path.string());
    }
}

}  // namespace

Volume read_nifti(const std::filesystem::path& path) {
    GzReader in(path);
    Nifti1Header h{};
    in.read_exact(&h, kHeaderSize, "header");

    bool swap = false;
    if (h.sizeof_hdr != 348) {
        if (byteswap_scalar(h.sizeof_hdr) == 348) {
            swap = true;
            swap_header(h);
        } else {
            throw FormatError(path.string() + ": not a NIfTI-1 file (sizeof_hdr != 348)");
        }
    }
    if (std::memcmp(h.magic, "n+1", 4) != 0) {
        if (std::memcmp(h.magic, "ni1", 4) == 0) {
            throw UnsupportedError(path.string() + ": two-file NIfTI (.hdr/.img) is not supported");
        }
        throw FormatError(path.string() + ": bad NIfTI magic bytes");
    }

    const int ndim = h.dim[0];
    if (ndim < 1 || ndim > 7) throw FormatError(path.string() + ": invalid dim[0]");
    if (ndim > 4) throw UnsupportedError(path.string() + ": more than 4 dimensions");

    GridGeometry geom;
    for (int d = 0; d < 3; ++d) {
        geom.shape[d] = d < ndim ? h.dim[d + 1] : 1;
        if (geom.shape[d] < 1) throw FormatError(path.string() + ": non-positive dimension");
        geom.spacing[d] = d < ndim && h.pixdim[d + 1] > 0.f ? h.pixdim[d + 1] : 1.f;
    }
    const int channels = ndim == 4 ? h.dim[4] : 1;
    if (channels < 1) throw FormatError(path.string() + ": non-positive channel count");

    std::size_t elem_size = 0;
    switch (h.datatype) {
        case kNiftiUint8:
        case kNiftiInt8: elem_size = 1; break;
        case kNiftiInt16:
        case kNiftiUint16: elem_size = 2; break;
        case kNiftiInt32:
        case kNiftiUint32:
        case kNiftiFloat32: elem_size = 4; break;
        case kNiftiFloat64: elem_size = 8; break;
        default:
            throw UnsupportedError(path.string() + ": unsupported NIfTI datatype " +
                                   std::to_string(h.datatype));
    }

    const std::size_t count = geom.voxel_count() * static_cast<std::size_t>(channels);
    const std::size_t offset = static_cast<std::size_t>(std::max(h.vox_offset, kSingleFileVoxOffset));
    in.skip(offset - kHeaderSize);

    std::vector<std::uint8_t> raw(count * elem_size);
    in.read_exact(raw.data(), raw.size(), "voxel data");

    Volume vol(channels, geom);
    switch (h.datatype) {
        case kNiftiUint8: convert_payload<std::uint8_t>(raw, swap, vol.data); break;
        case kNiftiInt8: convert_payload<std::int8_t>(raw, swap, vol.data); break;
        case kNiftiInt16: convert_payload<std::int16_t>(raw, swap, vol.data); break;
        case kNiftiUint16: convert_payload<std::uint16_t>(raw, swap, vol.data); break;
        case kNiftiInt32: convert_payload<std::int32_t>(raw, swap, vol.data); break;
        case kNiftiUint32: convert_payload<std::uint32_t>(raw, swap, vol.data); break;
        case kNiftiFloat32: convert_payload<float>(raw, swap, vol.data); break;
        case kNiftiFloat64: convert_payload<double>(raw, swap, vol.data); break;
        default: break;  // unreachable
    }

    // Honor intensity rescaling when present (slope 0 means "unset").
    if (h.scl_slope != 0.f && !(h.scl_slope == 1.f && h.scl_inter == 0.f)) {
        for (float& v : vol.data) v = v * h.scl_slope + h.scl_inter;
    }

    std::memcpy(vol.nifti_affine.data(), reinterpret_cast<const std::uint8_t*>(&h) + 252,
                vol.nifti_affine.size());
    vol.has_affine = true;
    return vol;
}

void write_nifti(const Volume& vol, const std::filesystem::path& path) {
    vol.geometry.validate();
    const std::size_t expect = static_cast<std::size_t>(vol.channels) * vol.geometry.voxel_count();
    if (vol.data.size() != expect) throw ShapeError("volume data size does not match its geometry");
    for (int d = 0; d < 3; ++d) {
        if (vol.geometry.shape[d] > 32767) throw UnsupportedError("dimension exceeds NIfTI-1 short range");
    }

    Nifti1Header h = make_base_header(vol.geometry, vol.channels, kNiftiFloat32, 32);
    apply_affine_block(h, vol);
    write_bytes(path, h, vol.data.data(), vol.data.size() * sizeof(float));
}

void write_nifti(const LabelMap& labels, const std::filesystem::path& path) {
    labels.validate();
    std::vector<std::int16_t> payload(labels.labels.size());
    std::transform(labels.labels.begin(), labels.labels.end(), payload.begin(),
                   [](std::uint8_t v) { return static_cast<std::int16_t>(v); });
    Nifti1Header h = make_base_header(labels.geometry, 1, kNiftiInt16, 16);
    write_bytes(path, h, payload.data(), payload.size() * sizeof(std::int16_t));
}

LabelMap read_label_nifti(const std::filesystem::path& path) {
    const Volume vol = read_nifti(path);
    if (vol.channels != 1) throw FormatError(path.string() + ": label map must be single-channel");
    LabelMap out(vol.geometry);
    for (std::size_t i = 0; i < vol.data.size(); ++i) {
        const float v = vol.data[i];
        const float r = std::nearbyint(v);
        if (std::fabs(v - r) > 1e-3f || r < 0.f || r > 3.f) {
            throw FormatError(path.string() + ": label value " + std::to_string(v) +
                              " outside {0,1,2,3}");
        }
        out.labels[i] = static_cast<std::uint8_t>(r);
    }
    return out;
}

Volume probmaps_to_volume(const ProbMaps& probs) {
    Volume vol(3, probs.geometry);
    const std::size_t n = probs.geometry.voxel_count();
    std::copy(probs.tc.begin(), probs.tc.end(), vol.data.begin());
    std::copy(probs.wt.begin(), probs.wt.end(), vol.data.begin() + n);
    std::copy(probs.et.begin(), probs.et.end(), vol.data.begin() + 2 * n);
    return vol;
}

ProbMaps volume_to_probmaps(const Volume& vol) {
    if (vol.channels != 3) throw ShapeError("probability volume must have exactly 3 channels");
    ProbMaps probs(vol.geometry);
    const std::size_t n = vol.geometry.voxel_count();
    std::copy(vol.data.begin(), vol.data.begin() + n, probs.tc.begin());
    std::copy(vol.data.begin() + n, vol.data.begin() + 2 * n, probs.wt.begin());
    std::copy(vol.data.begin() + 2 * n, vol.data.end(), probs.et.begin());
    return probs;
}

}  // namespace emednext
