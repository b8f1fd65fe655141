#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "emednext/volume.hpp"

namespace emednext {

/// Class-wise cleanup parameters. Defaults are the final submission
/// thresholds (tau_tc = tau_et = 0.625, tau_wt = 0.5) with the documented
/// component filters gamma = (150, 500, 100) and eta = 0.1 per class.
struct PostprocessConfig {
    float tau_tc = 0.625f, tau_wt = 0.5f, tau_et = 0.625f;
    int gamma_tc = 150, gamma_wt = 500, gamma_et = 100;
    float eta_tc = 0.1f, eta_wt = 0.1f, eta_et = 0.1f;
    int max_components = 10;

    void validate() const;

    float tau(int cls) const;    // 0=TC, 1=WT, 2=ET
    int gamma(int cls) const;
    float eta(int cls) const;

    /// Final submission setting: additionally relaxes the ET size filter to
    /// 30 voxels.
    static PostprocessConfig final_submission();
    /// Conservative preset with 0.5 thresholds everywhere.
    static PostprocessConfig uniform_half();

    std::string to_json() const;
    static PostprocessConfig from_json(const std::string& text);
};

/// Binary mask on a grid; stored as one byte per voxel.
struct BinaryMask {
    GridGeometry geometry;
    std::vector<std::uint8_t> voxels;

    BinaryMask() = default;
    explicit BinaryMask(const GridGeometry& geom) : geometry(geom), voxels(geom.voxel_count(), 0) {}

    std::uint8_t at(int x, int y, int z) const { return voxels[geometry.index(x, y, z)]; }
    void set(int x, int y, int z, std::uint8_t v) { voxels[geometry.index(x, y, z)] = v; }
    std::size_t count() const;
};

struct ComponentStats {
    int id = 0;                 // 1-based, ordered by first voxel in scan order
    std::size_t voxel_count = 0;
    double mean_prob = 0.0;     // against the supplied probability channel
    std::array<int, 6> bbox{};  // x0,y0,z0 (min) then x1,y1,z1 (max, inclusive)
};

struct ComponentLabeling {
    std::vector<std::int32_t> labels;  // 0 = background, 1..K component ids
    std::vector<ComponentStats> stats;
};

/// 26-connected component labeling, deterministic: component ids follow the
/// first voxel encountered in x-fastest scan order. `probs` is optional and
/// feeds the per-component mean probability.
ComponentLabeling label_components_26(const BinaryMask& mask, const std::vector<float>* probs = nullptr);

/// Keeps components with voxel_count >= gamma and mean prob >= eta; if more
/// than max_components survive, keeps the largest by voxel count with ties to
/// the lower component id.
BinaryMask prune_components(const BinaryMask& mask, const std::vector<float>& probs_channel,
                            int gamma, float eta, int max_components);

/// mask_c(x) = 1 iff P_c(x) >= tau_c (inclusive). Returns {tc, wt, et}.
std::array<BinaryMask, 3> threshold_channels(const ProbMaps& probs, const PostprocessConfig& cfg);

/// Propagates ET into TC and TC into WT, re-applies the component filter per
/// class, then re-unions the surviving inner masks so ET within TC within WT
/// holds on output.
std::array<BinaryMask, 3> enforce_hierarchy(const BinaryMask& et, const BinaryMask& tc,
                                            const BinaryMask& wt, const ProbMaps& probs,
                                            const PostprocessConfig& cfg);

/// Priority fusion: 3 where ET, else 2 where TC, else 1 where WT, else 0.
LabelMap fuse_labels(const BinaryMask& et, const BinaryMask& tc, const BinaryMask& wt);

/// Threshold -> per-class prune -> hierarchy -> fusion.
LabelMap postprocess_pipeline(const ProbMaps& probs, const PostprocessConfig& cfg);

/// Region masks of a fused label map: WT = {1,2,3}, TC = {2,3}, ET = {3}.
std::array<BinaryMask, 3> region_masks(const LabelMap& labels);

}  // namespace emednext
