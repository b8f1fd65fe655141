#pragma once

#include <array>
#include <cstddef>
#include <vector>

namespace emednext {

/// Dense float tensor for the forward engine: channels x (x,y,z) spatial
/// extent, x fastest, same layout as Volume so patches copy straight in.
struct Tensor {
    int channels = 0;
    std::array<int, 3> extent{0, 0, 0};
    std::vector<float> values;

    Tensor() = default;
    Tensor(int c, const std::array<int, 3>& e)
        : channels(c), extent(e), values(static_cast<std::size_t>(c) * e[0] * e[1] * e[2], 0.f) {}

    static Tensor zeros(int c, const std::array<int, 3>& e) { return Tensor(c, e); }

    std::size_t spatial_size() const {
        return static_cast<std::size_t>(extent[0]) * extent[1] * extent[2];
    }
    std::size_t size() const { return values.size(); }

    std::size_t index(int c, int x, int y, int z) const {
        return ((static_cast<std::size_t>(c) * extent[2] + z) * extent[1] + y) * extent[0] + x;
    }
    float& at(int c, int x, int y, int z) { return values[index(c, x, y, z)]; }
    float at(int c, int x, int y, int z) const { return values[index(c, x, y, z)]; }

    bool same_shape(const Tensor& other) const {
        return channels == other.channels && extent == other.extent;
    }
};

}  // namespace emednext
