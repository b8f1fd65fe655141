#include "emednext/volume.hpp"

#include <cmath>
#include <sstream>

#include "emednext/error.hpp"

namespace emednext {

void GridGeometry::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (shape[d] < 1) {
            throw ArgumentError("grid shape must be >= 1 on every axis, got " + to_string());
        }
        if (!(spacing[d] > 0.f) || !std::isfinite(spacing[d])) {
            throw ArgumentError("grid spacing must be positive and finite, got " + to_string());
        }
    }
}

std::string GridGeometry::to_string() const {
    std::ostringstream os;
    os << "shape=(" << shape[0] << "," << shape[1] << "," << shape[2] << ") spacing=(" << spacing[0]
       << "," << spacing[1] << "," << spacing[2] << ")";
    return os.str();
}

Volume::Volume(int channels_, const GridGeometry& geom) : channels(channels_), geometry(geom) {
    if (channels_ < 1) throw ArgumentError("volume needs at least one channel");
    geometry.validate();
    data.assign(static_cast<std::size_t>(channels_) * geometry.voxel_count(), 0.f);
}

Volume Volume::extract_channel(int c) const {
    if (c < 0 || c >= channels) throw ArgumentError("channel index out of range");
    Volume out(1, geometry);
    const float* src = channel_data(c);
    std::copy(src, src + voxels_per_channel(), out.data.begin());
    out.nifti_affine = nifti_affine;
    out.has_affine = has_affine;
    return out;
}

void Volume::validate() const {
    geometry.validate();
    if (channels < 1) throw ArgumentError("volume needs at least one channel");
    const std::size_t expect = static_cast<std::size_t>(channels) * geometry.voxel_count();
    if (data.size() != expect) {
        throw ShapeError("volume data size " + std::to_string(data.size()) + " != channels*shape " +
                         std::to_string(expect));
    }
    for (float v : data) {
        if (!std::isfinite(v)) throw ArgumentError("volume contains a non-finite value");
    }
}

void LabelMap::validate() const {
    geometry.validate();
    if (labels.size() != geometry.voxel_count()) {
        throw ShapeError("label map size does not match its geometry");
    }
    for (std::uint8_t v : labels) {
        if (v > 3) throw ArgumentError("label value " + std::to_string(int(v)) + " outside {0,1,2,3}");
    }
}

std::vector<float>& ProbMaps::channel(int c) {
    switch (c) {
        case 0: return tc;
        case 1: return wt;
        case 2: return et;
        default: throw ArgumentError("probability channel index must be 0 (TC), 1 (WT) or 2 (ET)");
    }
}

const std::vector<float>& ProbMaps::channel(int c) const {
    return const_cast<ProbMaps*>(this)->channel(c);
}

void ProbMaps::validate() const {
    geometry.validate();
    const std::size_t n = geometry.voxel_count();
    if (tc.size() != n || wt.size() != n || et.size() != n) {
        throw ShapeError("probability channels do not match their geometry");
    }
    for (const auto* ch : {&tc, &wt, &et}) {
        for (float v : *ch) {
            if (!(v >= 0.f && v <= 1.f)) {
                throw ArgumentError("probability value outside [0,1]");
            }
        }
    }
}

}  // namespace emednext
