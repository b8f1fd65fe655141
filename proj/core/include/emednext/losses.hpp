#pragma once

#include <array>
#include <vector>

#include "emednext/tensor.hpp"

namespace emednext {

struct LossConfig {
    double alpha = 0.5;          // boundary term weight
    double focal_gamma = 2.0;
    double dice_smooth = 1e-5;
    std::vector<double> ds_weights = {1.0, 0.5, 0.25, 0.125};  // w_i = 2^-i, finest first

    void validate() const;
};

/// Predicted probabilities and per-channel binary ground truth. The three
/// tumor regions overlap (ET within TC within WT), so channels are
/// independent binary targets, not a mutually exclusive one-hot coding.
struct LossInputs {
    Tensor p;
    Tensor g;

    void validate() const;
};

/// Mean over channels of (1 - soft Dice) plus focal binary cross-entropy
/// averaged over channels and voxels. Nonnegative; ~0 for a perfect match.
double dice_focal(const LossInputs& in, const LossConfig& cfg);
Tensor dice_focal_grad(const LossInputs& in, const LossConfig& cfg);

/// Correlation of a single-channel tensor with the three 3x3x3 Sobel kernels
/// (derivative [-1,0,1] along the axis, smoothing [1,2,1] across the others).
/// Borders replicate the edge sample, so constant volumes map to exactly
/// zero. Requires every extent >= 3.
std::array<Tensor, 3> sobel_gradient_3d(const Tensor& x);

/// Whether the grid supports the Sobel stencil.
bool sobel_supported(const std::array<int, 3>& extent);

/// Sum over channels and axes of the mean squared difference between the
/// Sobel gradients of p and g.
double boundary_loss(const LossInputs& in);
Tensor boundary_loss_grad(const LossInputs& in);

/// dice_focal + alpha * boundary at one resolution level. Grids too small for
/// the Sobel stencil contribute the Dice-Focal part only.
double level_loss(const LossInputs& in, const LossConfig& cfg);
Tensor level_loss_grad(const LossInputs& in, const LossConfig& cfg);

/// Nearest-neighbor (corner-sampled) downsampling by an integer factor, used
/// to build ground truth for the auxiliary output levels.
Tensor downsample_nearest(const Tensor& g, int factor);

Tensor sigmoid(const Tensor& logits);

/// Deep-supervision total: sum_i w_i * level_loss(sigmoid(logits_i), g_i)
/// with logits_i at 1/2^i resolution and g_i the matching downsampled truth.
double total_loss(const std::vector<Tensor>& ds_logits, const Tensor& g, const LossConfig& cfg);

/// Gradient of total_loss w.r.t. each level's logits.
std::vector<Tensor> total_loss_grad(const std::vector<Tensor>& ds_logits, const Tensor& g,
                                    const LossConfig& cfg);

/// Same aggregation expressed directly on per-level probabilities, plus its
/// gradient; this is the form gradient checks probe.
double total_loss_probs(const std::vector<Tensor>& ds_probs, const Tensor& g, const LossConfig& cfg);
std::vector<Tensor> total_loss_probs_grad(const std::vector<Tensor>& ds_probs, const Tensor& g,
                                          const LossConfig& cfg);

}  // namespace emednext
