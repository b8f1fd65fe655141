#pragma once

#include <array>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "emednext/volume.hpp"

namespace emednext {

struct PreprocessConfig {
    std::array<float, 3> target_spacing{1.f, 1.f, 1.f};
    std::array<int, 3> target_shape{160, 160, 128};
    int intensity_cap = 32767;  // int16 max; values at or above reset to zero
    bool add_foreground_channel = true;

    void validate() const;
};

/// Everything needed to map a model-space prediction back onto the original
/// grid: resample target, foreground box (inclusive, resampled space) and the
/// center pad/crop applied on top of the box.
struct CaseMeta {
    std::string case_id;
    std::array<int, 3> original_shape{};
    std::array<float, 3> original_spacing{};
    std::array<int, 3> resampled_shape{};
    std::array<float, 3> resampled_spacing{};
    std::array<int, 3> bbox_min{}, bbox_max{};
    std::array<int, 3> pad_before{}, pad_after{};
    std::array<int, 3> crop_before{}, crop_after{};
    std::vector<std::string> warnings;
};

std::string case_meta_to_json(const CaseMeta& meta);
CaseMeta case_meta_from_json(const std::string& text);

struct VoxelBox {
    std::array<int, 3> lo{}, hi{};  // inclusive bounds

    std::array<int, 3> size() const {
        return {hi[0] - lo[0] + 1, hi[1] - lo[1] + 1, hi[2] - lo[2] + 1};
    }
};

/// Truncates to integer values, then resets negatives, non-finite artifacts
/// and values >= cap to zero. Output stays float but carries
/// int16-representable values.
Volume clip_and_cast(const Volume& vol, int cap);

enum class NormalizeStatus { ok, all_zero, zero_std };

struct NormalizeResult {
    Volume volume;
    NormalizeStatus status = NormalizeStatus::ok;
};

/// Zero-mean / unit-std over the voxels that are nonzero on input; zeros stay
/// exactly zero. Degenerate channels come back flagged instead of throwing so
/// the caller can record a per-case warning.
NormalizeResult normalize_nonzero(const Volume& vol);

enum class Interp { cubic, linear, nearest };

/// Resamples to the given voxel spacing; output extent is
/// round(shape * spacing / target) per axis, minimum 1. Cubic means
/// Catmull-Rom with clamped borders. Identity spacing is a bitwise copy.
Volume resample(const Volume& vol, const std::array<float, 3>& target_spacing,
                Interp interp = Interp::cubic);

/// Resamples onto an explicit output grid (used to invert a forward resample
/// whose shape came from rounding). Equal shapes short-circuit to a copy.
Volume resample_to_shape(const Volume& vol, const std::array<int, 3>& out_shape,
                         const std::array<float, 3>& out_spacing, Interp interp);

LabelMap resample_labels_to_shape(const LabelMap& labels, const std::array<int, 3>& out_shape,
                                  const std::array<float, 3>& out_spacing);

/// Tightest box around the union of nonzero voxels across all inputs.
/// Throws EmptyForegroundError when everything is zero.
VoxelBox foreground_bbox(const std::vector<const Volume*>& vols);

struct CropPad {
    std::array<int, 3> pad_before{}, pad_after{};
    std::array<int, 3> crop_before{}, crop_after{};
};

/// Crops to the box, then symmetrically zero-pads or center-crops each axis to
/// target_shape. Odd remainders go to the high-index side.
std::pair<Volume, CropPad> crop_pad_centered(const Volume& vol, const VoxelBox& box,
                                             const std::array<int, 3>& target_shape);

LabelMap crop_pad_centered_labels(const LabelMap& labels, const VoxelBox& box,
                                  const std::array<int, 3>& target_shape);

struct StackedCase {
    Volume image;                  // 4 modality channels (+ optional foreground mask)
    std::optional<LabelMap> label; // same spatial transforms, nearest-neighbor
    CaseMeta meta;
};

/// Full per-case preprocessing: clip -> normalize -> resample -> bbox ->
/// center pad/crop, modalities ordered [FLAIR, T1, T1ce, T2]. The foreground
/// mask channel comes from the pre-normalization nonzero union and also
/// defines the bounding box.
StackedCase stack_case(const std::vector<Volume>& modalities, const std::optional<LabelMap>& label,
                       const PreprocessConfig& cfg, const std::string& case_id = {});

}  // namespace emednext
