#pragma once

#include <array>
#include <cstddef>
#include <string>

namespace emednext {

/// Axis-aligned voxel grid. Axes are ordered (x, y, z) with x fastest in
/// memory, matching the NIfTI on-disk layout; all downstream kernels
/// (convolution, connected components, distance transforms) index with the
/// same convention.
struct GridGeometry {
    std::array<int, 3> shape{1, 1, 1};           // voxels per axis
    std::array<float, 3> spacing{1.f, 1.f, 1.f}; // mm per voxel
    std::array<float, 3> origin{0.f, 0.f, 0.f};  // mm, center of voxel (0,0,0)

    std::size_t voxel_count() const {
        return static_cast<std::size_t>(shape[0]) * static_cast<std::size_t>(shape[1]) *
               static_cast<std::size_t>(shape[2]);
    }

    std::size_t index(int x, int y, int z) const {
        return (static_cast<std::size_t>(z) * shape[1] + y) * shape[0] + x;
    }

    bool operator==(const GridGeometry& other) const = default;

    /// Throws ArgumentError if any dimension is < 1 or any spacing is <= 0.
    void validate() const;

    std::string to_string() const;
};

}  // namespace emednext
