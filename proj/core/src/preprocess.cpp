#include "emednext/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <json.hpp>

#include "emednext/error.hpp"

namespace emednext {
namespace {

using nlohmann::json;

int clamp_index(int i, int n) { return std::clamp(i, 0, n - 1); }

// Per-axis sampling table: four tap indices and weights per output index.
// Nearest/linear use a subset with the spare weights at zero so one kernel
// serves all modes.
struct AxisTable {
    std::vector<std::array<int, 4>> idx;
    std::vector<std::array<double, 4>> w;
};

AxisTable make_axis_table(int in_n, int out_n, Interp interp) {
    AxisTable t;
    t.idx.resize(out_n);
    t.w.resize(out_n);
    const double scale = static_cast<double>(in_n) / static_cast<double>(out_n);
    for (int o = 0; o < out_n; ++o) {
        const double sx = (o + 0.5) * scale - 0.5;  // center-aligned source coordinate
        auto& idx = t.idx[o];
        auto& w = t.w[o];
        idx = {0, 0, 0, 0};
        w = {0.0, 0.0, 0.0, 0.0};
        switch (interp) {
            case Interp::nearest: {
                idx[0] = clamp_index(static_cast<int>(std::floor(sx + 0.5)), in_n);
                w[0] = 1.0;
                break;
            }
            case Interp::linear: {
                const int i = static_cast<int>(std::floor(sx));
                const double f = sx - i;
                idx[0] = clamp_index(i, in_n);
                idx[1] = clamp_index(i + 1, in_n);
                w[0] = 1.0 - f;
                w[1] = f;
                break;
            }
            case Interp::cubic: {
                const int i = static_cast<int>(std::floor(sx));
                const double f = sx - i;
                const double f2 = f * f, f3 = f2 * f;
                // Catmull-Rom
                w[0] = 0.5 * (-f + 2.0 * f2 - f3);
                w[1] = 0.5 * (2.0 - 5.0 * f2 + 3.0 * f3);
                w[2] = 0.5 * (f + 4.0 * f2 - 3.0 * f3);
                w[3] = 0.5 * (-f2 + f3);
                for (int k = 0; k < 4; ++k) idx[k] = clamp_index(i - 1 + k, in_n);
                break;
            }
        }
    }
    return t;
}

std::array<float, 3> center_preserving_origin(const GridGeometry& in,
                                              const std::array<int, 3>& out_shape,
                                              const std::array<float, 3>& out_spacing) {
    std::array<float, 3> origin;
    for (int d = 0; d < 3; ++d) {
        const double in_extent = static_cast<double>(in.shape[d] - 1) * in.spacing[d];
        const double out_extent = static_cast<double>(out_shape[d] - 1) * out_spacing[d];
        origin[d] = static_cast<float>(in.origin[d] + 0.5 * (in_extent - out_extent));
    }
    return origin;
}

json to_json_array3(const std::array<int, 3>& a) { return json::array({a[0], a[1], a[2]}); }
json to_json_array3(const std::array<float, 3>& a) { return json::array({a[0], a[1], a[2]}); }

template <typename T>
std::array<T, 3> from_json_array3(const json& j, const char* key) {
    if (!j.contains(key) || !j[key].is_array() || j[key].size() != 3) {
        throw FormatError(std::string("case meta: missing or malformed key '") + key + "'");
    }
    std::array<T, 3> out;
    for (int d = 0; d < 3; ++d) out[d] = j[key][d].get<T>();
    return out;
}

}  // namespace

void PreprocessConfig::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (target_shape[d] < 1) throw ArgumentError("preprocess target shape must be positive");
        if (!(target_spacing[d] > 0.f)) throw ArgumentError("preprocess target spacing must be positive");
    }
    if (intensity_cap <= 0) throw ArgumentError("intensity cap must be positive");
}

Volume clip_and_cast(const Volume& vol, int cap) {
    if (vol.channels != 1) throw ArgumentError("clip_and_cast expects a single-channel volume");
    if (cap <= 0) throw ArgumentError("intensity cap must be positive");
    Volume out = vol;
    const float fcap = static_cast<float>(cap);
    for (float& v : out.data) {
        if (!(v > 0.f)) {  // negatives, zeros and non-finite artifacts
            v = 0.f;
            continue;
        }
        v = std::trunc(v);
        if (v >= fcap) v = 0.f;
    }
    return out;
}

NormalizeResult normalize_nonzero(const Volume& vol) {
    if (vol.channels != 1) throw ArgumentError("normalize_nonzero expects a single-channel volume");
    NormalizeResult res{vol, NormalizeStatus::ok};

    double sum = 0.0, sum_sq = 0.0;
    std::size_t n = 0;
    for (float v : vol.data) {
        if (v != 0.f) {
            sum += v;
            sum_sq += static_cast<double>(v) * v;
            ++n;
        }
    }
    if (n == 0) {
        res.status = NormalizeStatus::all_zero;
        return res;
    }
    const double mean = sum / static_cast<double>(n);
    const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
    const double sd = std::sqrt(var);

    if (sd == 0.0) {
        res.status = NormalizeStatus::zero_std;
        for (float& v : res.volume.data) {
            if (v != 0.f) v = static_cast<float>(v - mean);
        }
        return res;
    }
    for (float& v : res.volume.data) {
        if (v != 0.f) v = static_cast<float>((v - mean) / sd);
    }
    return res;
}

Volume resample_to_shape(const Volume& vol, const std::array<int, 3>& out_shape,
                         const std::array<float, 3>& out_spacing, Interp interp) {
    vol.geometry.validate();
    for (int d = 0; d < 3; ++d) {
        if (out_shape[d] < 1) throw ArgumentError("resample output shape must be positive");
        if (!(out_spacing[d] > 0.f)) throw ArgumentError("resample target spacing must be positive");
    }

    GridGeometry out_geom;
    out_geom.shape = out_shape;
    out_geom.spacing = out_spacing;
    out_geom.origin = center_preserving_origin(vol.geometry, out_shape, out_spacing);

    if (out_shape == vol.geometry.shape) {
        Volume out = vol;
        out.geometry = out_geom;
        return out;
    }

    const auto& in_shape = vol.geometry.shape;
    const AxisTable tx = make_axis_table(in_shape[0], out_shape[0], interp);
    const AxisTable ty = make_axis_table(in_shape[1], out_shape[1], interp);
    const AxisTable tz = make_axis_table(in_shape[2], out_shape[2], interp);

    Volume out(vol.channels, out_geom);
    out.nifti_affine = vol.nifti_affine;
    out.has_affine = vol.has_affine;

    const std::size_t in_plane = static_cast<std::size_t>(in_shape[0]) * in_shape[1];
    for (int c = 0; c < vol.channels; ++c) {
        const float* src = vol.channel_data(c);
        float* dst = out.channel_data(c);
        std::size_t o = 0;
        for (int z = 0; z < out_shape[2]; ++z) {
            for (int y = 0; y < out_shape[1]; ++y) {
                for (int x = 0; x < out_shape[0]; ++x, ++o) {
                    double acc = 0.0;
                    for (int kz = 0; kz < 4; ++kz) {
                        const double wz = tz.w[z][kz];
                        if (wz == 0.0) continue;
                        const std::size_t base_z = static_cast<std::size_t>(tz.idx[z][kz]) * in_plane;
                        for (int ky = 0; ky < 4; ++ky) {
                            const double wzy = wz * ty.w[y][ky];
                            if (wzy == 0.0) continue;
                            const std::size_t base_zy =
                                base_z + static_cast<std::size_t>(ty.idx[y][ky]) * in_shape[0];
                            for (int kx = 0; kx < 4; ++kx) {
                                const double wx = tx.w[x][kx];
                                if (wx == 0.0) continue;
                                acc += wzy * wx * src[base_zy + tx.idx[x][kx]];
                            }
                        }
                    }
                    dst[o] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Volume resample(const Volume& vol, const std::array<float, 3>& target_spacing, Interp interp) {
    for (int d = 0; d < 3; ++d) {
        if (!(target_spacing[d] > 0.f)) throw ArgumentError("resample target spacing must be positive");
    }
    std::array<int, 3> out_shape;
    for (int d = 0; d < 3; ++d) {
        const double exact = static_cast<double>(vol.geometry.shape[d]) *
                             static_cast<double>(vol.geometry.spacing[d]) /
                             static_cast<double>(target_spacing[d]);
        out_shape[d] = std::max(1, static_cast<int>(std::llround(exact)));
    }
    return resample_to_shape(vol, out_shape, target_spacing, interp);
}

LabelMap resample_labels_to_shape(const LabelMap& labels, const std::array<int, 3>& out_shape,
                                  const std::array<float, 3>& out_spacing) {
    Volume tmp(1, labels.geometry);
    std::transform(labels.labels.begin(), labels.labels.end(), tmp.data.begin(),
                   [](std::uint8_t v) { return static_cast<float>(v); });
    const Volume res = resample_to_shape(tmp, out_shape, out_spacing, Interp::nearest);
    LabelMap out(res.geometry);
    std::transform(res.data.begin(), res.data.end(), out.labels.begin(),
                   [](float v) { return static_cast<std::uint8_t>(v); });
    return out;
}

VoxelBox foreground_bbox(const std::vector<const Volume*>& vols) {
    if (vols.empty()) throw ArgumentError("foreground_bbox needs at least one volume");
    const GridGeometry& geom = vols.front()->geometry;
    for (const Volume* v : vols) {
        if (v->channels != 1) throw ArgumentError("foreground_bbox expects single-channel volumes");
        if (v->geometry.shape != geom.shape) throw ShapeError("foreground_bbox inputs differ in shape");
    }

    VoxelBox box;
    box.lo = {std::numeric_limits<int>::max(), std::numeric_limits<int>::max(),
              std::numeric_limits<int>::max()};
    box.hi = {-1, -1, -1};
    for (const Volume* v : vols) {
        std::size_t i = 0;
        for (int z = 0; z < geom.shape[2]; ++z) {
            for (int y = 0; y < geom.shape[1]; ++y) {
                for (int x = 0; x < geom.shape[0]; ++x, ++i) {
                    if (v->data[i] != 0.f) {
                        box.lo[0] = std::min(box.lo[0], x);
                        box.lo[1] = std::min(box.lo[1], y);
                        box.lo[2] = std::min(box.lo[2], z);
                        box.hi[0] = std::max(box.hi[0], x);
                        box.hi[1] = std::max(box.hi[1], y);
                        box.hi[2] = std::max(box.hi[2], z);
                    }
                }
            }
        }
    }
    if (box.hi[0] < 0) throw EmptyForegroundError("no nonzero voxel in any input volume");
    return box;
}

namespace {

CropPad plan_crop_pad(const VoxelBox& box, const std::array<int, 3>& target_shape) {
    CropPad cp;
    const auto size = box.size();
    for (int d = 0; d < 3; ++d) {
        if (size[d] <= target_shape[d]) {
            const int pad = target_shape[d] - size[d];
            cp.pad_before[d] = pad / 2;
            cp.pad_after[d] = pad - pad / 2;  // odd remainder lands high
        } else {
            const int crop = size[d] - target_shape[d];
            cp.crop_before[d] = crop / 2;
            cp.crop_after[d] = crop - crop / 2;
        }
    }
    return cp;
}

void check_box(const VoxelBox& box, const GridGeometry& geom) {
    for (int d = 0; d < 3; ++d) {
        if (box.lo[d] < 0 || box.hi[d] < box.lo[d] || box.hi[d] >= geom.shape[d]) {
            throw ArgumentError("bounding box is outside the volume");
        }
    }
}

// Source index on a given axis for an output index, or -1 for padding.
inline int source_index(int out, int d, const VoxelBox& box, const CropPad& cp, int content) {
    const int rel = out - cp.pad_before[d];
    if (rel < 0 || rel >= content) return -1;
    return box.lo[d] + cp.crop_before[d] + rel;
}

}  // namespace

std::pair<Volume, CropPad> crop_pad_centered(const Volume& vol, const VoxelBox& box,
                                             const std::array<int, 3>& target_shape) {
    check_box(box, vol.geometry);
    const CropPad cp = plan_crop_pad(box, target_shape);
    const auto size = box.size();

    GridGeometry out_geom;
    out_geom.shape = target_shape;
    out_geom.spacing = vol.geometry.spacing;
    out_geom.origin = vol.geometry.origin;
    Volume out(vol.channels, out_geom);
    out.nifti_affine = vol.nifti_affine;
    out.has_affine = vol.has_affine;

    std::array<int, 3> content;
    for (int d = 0; d < 3; ++d) content[d] = size[d] - cp.crop_before[d] - cp.crop_after[d];

    for (int c = 0; c < vol.channels; ++c) {
        for (int z = 0; z < target_shape[2]; ++z) {
            const int sz = source_index(z, 2, box, cp, content[2]);
            if (sz < 0) continue;
            for (int y = 0; y < target_shape[1]; ++y) {
                const int sy = source_index(y, 1, box, cp, content[1]);
                if (sy < 0) continue;
                for (int x = 0; x < target_shape[0]; ++x) {
                    const int sx = source_index(x, 0, box, cp, content[0]);
                    if (sx < 0) continue;
                    out.at(c, x, y, z) = vol.at(c, sx, sy, sz);
                }
            }
        }
    }
    return {std::move(out), cp};
}

LabelMap crop_pad_centered_labels(const LabelMap& labels, const VoxelBox& box,
                                  const std::array<int, 3>& target_shape) {
    check_box(box, labels.geometry);
    const CropPad cp = plan_crop_pad(box, target_shape);
    const auto size = box.size();
    std::array<int, 3> content;
    for (int d = 0; d < 3; ++d) content[d] = size[d] - cp.crop_before[d] - cp.crop_after[d];

    GridGeometry out_geom;
    out_geom.shape = target_shape;
    out_geom.spacing = labels.geometry.spacing;
    out_geom.origin = labels.geometry.origin;
    LabelMap out(out_geom);

    for (int z = 0; z < target_shape[2]; ++z) {
        const int sz = source_index(z, 2, box, cp, content[2]);
        if (sz < 0) continue;
        for (int y = 0; y < target_shape[1]; ++y) {
            const int sy = source_index(y, 1, box, cp, content[1]);
            if (sy < 0) continue;
            for (int x = 0; x < target_shape[0]; ++x) {
                const int sx = source_index(x, 0, box, cp, content[0]);
                if (sx < 0) continue;
                out.at(x, y, z) = labels.at(sx, sy, sz);
            }
        }
    }
    return out;
}

StackedCase stack_case(const std::vector<Volume>& modalities, const std::optional<LabelMap>& label,
                       const PreprocessConfig& cfg, const std::string& case_id) {
    cfg.validate();
    if (modalities.size() != 4) {
        throw ArgumentError("stack_case expects 4 modalities ordered [FLAIR, T1, T1ce, T2]");
    }
    static const char* kModalityNames[4] = {"flair", "t1", "t1ce", "t2"};

    const GridGeometry& geom = modalities.front().geometry;
    for (const Volume& m : modalities) {
        if (m.channels != 1) throw ArgumentError("stack_case modalities must be single-channel");
        if (m.geometry.shape != geom.shape || m.geometry.spacing != geom.spacing) {
            throw ShapeError("modalities are not co-registered (shape/spacing mismatch)");
        }
    }
    if (label && label->geometry.shape != geom.shape) {
        throw ShapeError("label geometry does not match the modalities");
    }

    CaseMeta meta;
    meta.case_id = case_id;
    meta.original_shape = geom.shape;
    meta.original_spacing = geom.spacing;
    meta.resampled_spacing = cfg.target_spacing;

    // clip, then build the aggregated foreground mask before normalization.
    std::vector<Volume> clipped;
    clipped.reserve(4);
    for (const Volume& m : modalities) clipped.push_back(clip_and_cast(m, cfg.intensity_cap));

    Volume mask(1, geom);
    for (const Volume& m : clipped) {
        for (std::size_t i = 0; i < mask.data.size(); ++i) {
            if (m.data[i] != 0.f) mask.data[i] = 1.f;
        }
    }

    std::vector<Volume> resampled;
    resampled.reserve(4);
    for (int m = 0; m < 4; ++m) {
        NormalizeResult norm = normalize_nonzero(clipped[m]);
        if (norm.status == NormalizeStatus::all_zero) {
            meta.warnings.push_back(std::string(kModalityNames[m]) + ": channel is entirely zero");
        } else if (norm.status == NormalizeStatus::zero_std) {
            meta.warnings.push_back(std::string(kModalityNames[m]) +
                                    ": zero variance over nonzero voxels, mean-centered only");
        }
        resampled.push_back(resample(norm.volume, cfg.target_spacing, Interp::cubic));
    }
    const Volume mask_res = resample(mask, cfg.target_spacing, Interp::nearest);
    meta.resampled_shape = mask_res.geometry.shape;

    const VoxelBox box = foreground_bbox({&mask_res});
    meta.bbox_min = box.lo;
    meta.bbox_max = box.hi;

    const int out_channels = cfg.add_foreground_channel ? 5 : 4;
    GridGeometry out_geom;
    out_geom.shape = cfg.target_shape;
    out_geom.spacing = cfg.target_spacing;
    Volume image(out_channels, out_geom);

    CropPad cp;
    for (int m = 0; m < 4; ++m) {
        auto [cropped, cp_m] = crop_pad_centered(resampled[m], box, cfg.target_shape);
        cp = cp_m;
        std::copy(cropped.data.begin(), cropped.data.end(),
                  image.data.begin() + static_cast<std::size_t>(m) * image.voxels_per_channel());
    }
    if (cfg.add_foreground_channel) {
        auto [mask_cropped, cp_mask] = crop_pad_centered(mask_res, box, cfg.target_shape);
        std::copy(mask_cropped.data.begin(), mask_cropped.data.end(),
                  image.data.begin() + 4 * image.voxels_per_channel());
    }
    meta.pad_before = cp.pad_before;
    meta.pad_after = cp.pad_after;
    meta.crop_before = cp.crop_before;
    meta.crop_after = cp.crop_after;

    StackedCase out{std::move(image), std::nullopt, std::move(meta)};
    if (label) {
        LabelMap res_label =
            resample_labels_to_shape(*label, out.meta.resampled_shape, cfg.target_spacing);
        out.label = crop_pad_centered_labels(res_label, box, cfg.target_shape);
    }
    return out;
}

std::string case_meta_to_json(const CaseMeta& meta) {
    json j;
    j["case_id"] = meta.case_id;
    j["original_shape"] = to_json_array3(meta.original_shape);
    j["original_spacing"] = to_json_array3(meta.original_spacing);
    j["resampled_shape"] = to_json_array3(meta.resampled_shape);
    j["resampled_spacing"] = to_json_array3(meta.resampled_spacing);
    j["bbox_min"] = to_json_array3(meta.bbox_min);
    j["bbox_max"] = to_json_array3(meta.bbox_max);
    j["pad_before"] = to_json_array3(meta.pad_before);
    j["pad_after"] = to_json_array3(meta.pad_after);
    j["crop_before"] = to_json_array3(meta.crop_before);
    j["crop_after"] = to_json_array3(meta.crop_after);
    j["warnings"] = meta.warnings;
    return j.dump(2) + "\n";
}

CaseMeta case_meta_from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw FormatError("case meta: invalid JSON");
    CaseMeta meta;
    meta.case_id = j.value("case_id", std::string{});
    meta.original_shape = from_json_array3<int>(j, "original_shape");
    meta.original_spacing = from_json_array3<float>(j, "original_spacing");
    meta.resampled_shape = from_json_array3<int>(j, "resampled_shape");
    meta.resampled_spacing = from_json_array3<float>(j, "resampled_spacing");
    meta.bbox_min = from_json_array3<int>(j, "bbox_min");
    meta.bbox_max = from_json_array3<int>(j, "bbox_max");
    meta.pad_before = from_json_array3<int>(j, "pad_before");
    meta.pad_after = from_json_array3<int>(j, "pad_after");
    meta.crop_before = from_json_array3<int>(j, "crop_before");
    meta.crop_after = from_json_array3<int>(j, "crop_after");
    if (j.contains("warnings")) meta.warnings = j["warnings"].get<std::vector<std::string>>();
    return meta;
}

}  // namespace emednext
