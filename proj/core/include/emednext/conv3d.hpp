#pragma once

#include <vector>

#include "emednext/tensor.hpp"

namespace emednext {

/// Direct (non-FFT) 3D convolution. Kernels are 3x3x3 or 1x1x1, zero padding
/// keeps the spatial size at stride 1, stride 2 halves each axis with ceil
/// division. groups is 1 (dense) or C_in (depthwise). Weight layout is
/// [out][in/groups][kz][ky][kx], x fastest.
Tensor conv3d_direct(const Tensor& input, const std::vector<float>& weight,
                     const std::vector<float>& bias, int out_channels, int kernel, int stride,
                     int groups);

struct Conv3dGrads {
    Tensor input;
    std::vector<float> weight;
    std::vector<float> bias;
};

Conv3dGrads conv3d_backward(const Tensor& input, const std::vector<float>& weight,
                            const Tensor& grad_out, int out_channels, int kernel, int stride,
                            int groups);

/// Transposed 2x2x2 stride-2 convolution; doubles each spatial axis. Weight
/// layout is [in][out][kz][ky][kx].
Tensor conv_transpose3d_2x2(const Tensor& input, const std::vector<float>& weight,
                            const std::vector<float>& bias, int out_channels);

Conv3dGrads conv_transpose3d_2x2_backward(const Tensor& input, const std::vector<float>& weight,
                                          const Tensor& grad_out, int out_channels);

/// Per-channel normalization over the spatial extent (group norm with one
/// group per channel), batch-size-1 deterministic.
struct NormStats {
    std::vector<float> mean;
    std::vector<float> inv_std;
};

constexpr float kNormEps = 1e-5f;

Tensor instance_norm(const Tensor& input, const std::vector<float>& gamma,
                     const std::vector<float>& beta, NormStats* stats = nullptr);

struct NormGrads {
    Tensor input;
    std::vector<float> gamma;
    std::vector<float> beta;
};

NormGrads instance_norm_backward(const Tensor& input, const NormStats& stats,
                                 const std::vector<float>& gamma, const Tensor& grad_out);

/// Exact (erf-based) GELU.
Tensor gelu(const Tensor& input);
Tensor gelu_backward(const Tensor& input, const Tensor& grad_out);

Tensor concat_channels(const Tensor& a, const Tensor& b);

}  // namespace emednext
