#pragma once

#include <cstdint>
#include <filesystem>

#include "emednext/volume.hpp"

namespace emednext {

/// NIfTI-1 header, 348 bytes, field offsets per the published layout.
/// Single-file images only (magic "n+1\0", data at vox_offset).
struct Nifti1Header {
    std::int32_t sizeof_hdr;     // must be 348
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
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must pack to 348 bytes");

// NIfTI datatype codes handled by the reader.
enum NiftiDatatype : std::int16_t {
    kNiftiUint8 = 2,
    kNiftiInt16 = 4,
    kNiftiInt32 = 8,
    kNiftiFloat32 = 16,
    kNiftiFloat64 = 64,
    kNiftiInt8 = 256,
    kNiftiUint16 = 512,
    kNiftiUint32 = 768,
};

/// Reads a .nii or .nii.gz file (gzip detected transparently). Data is
/// converted to float32 whatever the on-disk dtype; scl_slope/scl_inter are
/// applied when set. Up to 4 dimensions; dim 4 becomes the channel axis.
/// Throws FormatError on bad magic/truncation, UnsupportedError on exotic
/// dtypes or >4 dims.
Volume read_nifti(const std::filesystem::path& path);

/// Writes a single-file NIfTI-1 image, float32 payload, pixdim from spacing.
/// Compresses when the path ends in ".gz". An affine block carried by the
/// volume is emitted verbatim; otherwise qform/sform codes are left at 0.
void write_nifti(const Volume& vol, const std::filesystem::path& path);

/// LabelMaps roundtrip as int16 so integer values stay exact.
void write_nifti(const LabelMap& labels, const std::filesystem::path& path);

/// Reads a segmentation written by write_nifti(LabelMap) or any integer-coded
/// single-channel NIfTI; values must land exactly in {0,1,2,3}.
LabelMap read_label_nifti(const std::filesystem::path& path);

/// ProbMaps serialize as a 3-channel volume in fixed (TC, WT, ET) order.
Volume probmaps_to_volume(const ProbMaps& probs);
ProbMaps volume_to_probmaps(const Volume& vol);

}  // namespace emednext
