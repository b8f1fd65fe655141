#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "emednext/preprocess.hpp"
#include "emednext/tensor.hpp"
#include "emednext/volume.hpp"

namespace emednext {

/// A model is just a function from an input patch (C_in channels) to logits
/// with 3 channels (TC, WT, ET) at the same spatial extent.
using ForwardModel = std::function<Tensor(const Tensor&)>;

struct SlidingWindowConfig {
    std::array<int, 3> patch_shape{160, 160, 128};
    double overlap_fraction = 0.5;
    enum class Blend { uniform, gaussian };
    Blend blend = Blend::gaussian;  // sigma = patch/8 per axis
    int tta_passes = 8;             // 8 = identity + 7 flips; 7 = the flips alone

    void validate() const;
};

/// Window start offsets along one axis: stride = patch * (1 - overlap),
/// evenly redistributed so the last window ends flush with the volume.
std::vector<int> window_starts(int length, int patch, double overlap_fraction);

/// Tiles the volume with overlapping patches, converts window logits to
/// probabilities (per-channel logistic) and blends with per-voxel normalized
/// weights. Volumes smaller than the patch are zero-padded centrally and the
/// result cropped back.
ProbMaps sliding_window_predict(const Volume& vol, const ForwardModel& model,
                                const SlidingWindowConfig& cfg);

/// Averages sliding-window predictions over axis-flip combinations, each
/// un-flipped before averaging.
ProbMaps tta_predict(const Volume& vol, const ForwardModel& model, const SlidingWindowConfig& cfg);

/// Per-model class weights for the ensemble average, order (TC, WT, ET).
using ClassWeights = std::array<double, 3>;

/// Running weighted sums plus weight totals for the two-pass ensemble. The
/// disk layout per case is {tc,wt,et}.f32 raw blobs plus state.json recording
/// geometry, models seen with their weights, totals and blob hashes.
struct EnsembleAccumulator {
    GridGeometry geometry;
    std::array<std::vector<float>, 3> sums;
    std::array<double, 3> totals{0.0, 0.0, 0.0};
    std::vector<std::string> models_seen;
    std::vector<ClassWeights> model_weights;

    bool has_model(const std::string& model_id) const;
};

EnsembleAccumulator make_accumulator(const GridGeometry& geometry);

/// sums_c += w_c * probs_c, totals_c += w_c. Weights must be nonnegative.
void accumulate_model(EnsembleAccumulator& acc, const ProbMaps& probs, const ClassWeights& weights,
                      const std::string& model_id);

/// Writes blobs + state under `dir` via temp files and rename, so a completed
/// model pass is durable as a unit.
void save_accumulator(const EnsembleAccumulator& acc, const std::filesystem::path& dir);

/// Loads a persisted accumulator, verifying blob hashes against state.json.
EnsembleAccumulator load_accumulator(const std::filesystem::path& dir);

bool accumulator_exists(const std::filesystem::path& dir);

/// P_c = sums_c / totals_c voxel-wise; every class total must be positive.
ProbMaps normalize_ensemble(const EnsembleAccumulator& acc);

/// Inverse of the preprocessing geometry: removes the center pad, re-inserts
/// the content at its bounding-box position on the resampled grid, and
/// resamples back to the original spacing (linear for probabilities).
ProbMaps restore_to_original_space(const ProbMaps& probs, const CaseMeta& meta);

/// Label variant; nearest-neighbor on the way back.
LabelMap restore_to_original_space(const LabelMap& labels, const CaseMeta& meta);

}  // namespace emednext
