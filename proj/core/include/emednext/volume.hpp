#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "emednext/geometry.hpp"

namespace emednext {

/// Dense multi-channel scalar grid, float32 payload. Channel-major layout:
/// data[((c*nz + z)*ny + y)*nx + x]. Volumes are treated as immutable once a
/// pipeline stage has produced them, so they can be shared read-only across
/// workers.
struct Volume {
    int channels = 1;
    GridGeometry geometry;
    std::vector<float> data;

    // qform/sform block of a NIfTI header (bytes 252..327), carried opaquely
    // so a read/write roundtrip preserves the affine without interpreting it.
    std::array<std::uint8_t, 76> nifti_affine{};
    bool has_affine = false;

    Volume() = default;
    Volume(int channels_, const GridGeometry& geom);

    static Volume zeros(int channels, const GridGeometry& geom) { return Volume(channels, geom); }

    std::size_t index(int c, int x, int y, int z) const {
        const auto& s = geometry.shape;
        return ((static_cast<std::size_t>(c) * s[2] + z) * s[1] + y) * s[0] + x;
    }

    float& at(int c, int x, int y, int z) { return data[index(c, x, y, z)]; }
    float at(int c, int x, int y, int z) const { return data[index(c, x, y, z)]; }

    std::size_t voxels_per_channel() const { return geometry.voxel_count(); }

    /// Pointer to the start of one channel's contiguous block.
    float* channel_data(int c) { return data.data() + static_cast<std::size_t>(c) * voxels_per_channel(); }
    const float* channel_data(int c) const {
        return data.data() + static_cast<std::size_t>(c) * voxels_per_channel();
    }

    /// Copy of a single channel as its own Volume (affine carried over).
    Volume extract_channel(int c) const;

    /// Throws if data size disagrees with channels * shape or if any value is
    /// non-finite.
    void validate() const;
};

/// Integer segmentation grid over {0,1,2,3}: 0 background, 1 WT-only,
/// 2 TC, 3 ET (fused priority encoding).
struct LabelMap {
    GridGeometry geometry;
    std::vector<std::uint8_t> labels;

    LabelMap() = default;
    LabelMap(const GridGeometry& geom) : geometry(geom), labels(geom.voxel_count(), 0) {}

    std::uint8_t& at(int x, int y, int z) { return labels[geometry.index(x, y, z)]; }
    std::uint8_t at(int x, int y, int z) const { return labels[geometry.index(x, y, z)]; }

    /// Throws if any label value falls outside {0,1,2,3}.
    void validate() const;
};

/// Soft predictions for the three tumor regions, each channel in [0,1].
/// Channel order is fixed to (TC, WT, ET) throughout the toolkit.
struct ProbMaps {
    GridGeometry geometry;
    std::vector<float> tc, wt, et;

    ProbMaps() = default;
    explicit ProbMaps(const GridGeometry& geom)
        : geometry(geom),
          tc(geom.voxel_count(), 0.f),
          wt(geom.voxel_count(), 0.f),
          et(geom.voxel_count(), 0.f) {}

    std::vector<float>& channel(int c);
    const std::vector<float>& channel(int c) const;

    /// Throws if channel sizes disagree with geometry or any value leaves [0,1].
    void validate() const;
};

}  // namespace emednext
