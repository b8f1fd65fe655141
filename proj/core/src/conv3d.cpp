#include "emednext/conv3d.hpp"

#include <cmath>

#include "emednext/error.hpp"

namespace emednext {
namespace {

struct ConvDims {
    int in_pg;        // input channels per group
    int out_pg;       // output channels per group
    int pad;          // symmetric zero padding
    std::array<int, 3> out_extent;
};

ConvDims check_conv(const Tensor& input, std::size_t weight_size, int out_channels, int kernel,
                    int stride, int groups) {
    if (kernel != 1 && kernel != 3) throw ArgumentError("conv3d kernel must be 1 or 3");
    if (stride != 1 && stride != 2) throw ArgumentError("conv3d stride must be 1 or 2");
    if (groups != 1 && groups != input.channels) {
        throw ShapeError("conv3d groups must be 1 or C_in");
    }
    if (input.channels % groups != 0 || out_channels % groups != 0) {
        throw ShapeError("conv3d channels not divisible by groups");
    }
    ConvDims d;
    d.in_pg = input.channels / groups;
    d.out_pg = out_channels / groups;
    d.pad = kernel / 2;
    const std::size_t expect = static_cast<std::size_t>(out_channels) * d.in_pg * kernel * kernel * kernel;
    if (weight_size != expect) {
        throw ShapeError("conv3d weight size " + std::to_string(weight_size) + " != expected " +
                         std::to_string(expect));
    }
    for (int a = 0; a < 3; ++a) {
        d.out_extent[a] = stride == 1 ? input.extent[a] : (input.extent[a] + 1) / 2;
    }
    return d;
}

}  // namespace

Tensor conv3d_direct(const Tensor& input, const std::vector<float>& weight,
                     const std::vector<float>& bias, int out_channels, int kernel, int stride,
                     int groups) {
    const ConvDims d = check_conv(input, weight.size(), out_channels, kernel, stride, groups);
    if (bias.size() != static_cast<std::size_t>(out_channels)) throw ShapeError("conv3d bias size mismatch");

    Tensor out(out_channels, d.out_extent);
    const auto& ie = input.extent;
    const int k3 = kernel * kernel * kernel;

    for (int oc = 0; oc < out_channels; ++oc) {
        const int g = oc / d.out_pg;
        const std::size_t w_oc = static_cast<std::size_t>(oc) * d.in_pg * k3;
        std::size_t o = out.index(oc, 0, 0, 0);
        for (int z = 0; z < d.out_extent[2]; ++z) {
            for (int y = 0; y < d.out_extent[1]; ++y) {
                for (int x = 0; x < d.out_extent[0]; ++x, ++o) {
                    double acc = bias[oc];
                    for (int i = 0; i < d.in_pg; ++i) {
                        const int ic = g * d.in_pg + i;
                        const std::size_t w_ic = w_oc + static_cast<std::size_t>(i) * k3;
                        for (int kz = 0; kz < kernel; ++kz) {
                            const int iz = z * stride + kz - d.pad;
                            if (iz < 0 || iz >= ie[2]) continue;
                            for (int ky = 0; ky < kernel; ++ky) {
                                const int iy = y * stride + ky - d.pad;
                                if (iy < 0 || iy >= ie[1]) continue;
                                for (int kx = 0; kx < kernel; ++kx) {
                                    const int ix = x * stride + kx - d.pad;
                                    if (ix < 0 || ix >= ie[0]) continue;
                                    acc += static_cast<double>(weight[w_ic + (kz * kernel + ky) * kernel + kx]) *
                                           input.at(ic, ix, iy, iz);
                                }
                            }
                        }
                    }
                    out.values[o] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Conv3dGrads conv3d_backward(const Tensor& input, const std::vector<float>& weight,
                            const Tensor& grad_out, int out_channels, int kernel, int stride,
                            int groups) {
    const ConvDims d = check_conv(input, weight.size(), out_channels, kernel, stride, groups);
    if (grad_out.channels != out_channels || grad_out.extent != d.out_extent) {
        throw ShapeError("conv3d_backward grad_out shape mismatch");
    }

    std::vector<double> gw(weight.size(), 0.0), gb(out_channels, 0.0);
    std::vector<double> gx(input.size(), 0.0);
    const auto& ie = input.extent;
    const int k3 = kernel * kernel * kernel;

    for (int oc = 0; oc < out_channels; ++oc) {
        const int g = oc / d.out_pg;
        const std::size_t w_oc = static_cast<std::size_t>(oc) * d.in_pg * k3;
        std::size_t o = grad_out.index(oc, 0, 0, 0);
        for (int z = 0; z < d.out_extent[2]; ++z) {
            for (int y = 0; y < d.out_extent[1]; ++y) {
                for (int x = 0; x < d.out_extent[0]; ++x, ++o) {
                    const double go = grad_out.values[o];
                    if (go == 0.0) continue;
                    gb[oc] += go;
                    for (int i = 0; i < d.in_pg; ++i) {
                        const int ic = g * d.in_pg + i;
                        const std::size_t w_ic = w_oc + static_cast<std::size_t>(i) * k3;
                        for (int kz = 0; kz < kernel; ++kz) {
                            const int iz = z * stride + kz - d.pad;
                            if (iz < 0 || iz >= ie[2]) continue;
                            for (int ky = 0; ky < kernel; ++ky) {
                                const int iy = y * stride + ky - d.pad;
                                if (iy < 0 || iy >= ie[1]) continue;
                                for (int kx = 0; kx < kernel; ++kx) {
                                    const int ix = x * stride + kx - d.pad;
                                    if (ix < 0 || ix >= ie[0]) continue;
                                    const std::size_t wi = w_ic + (kz * kernel + ky) * kernel + kx;
                                    const std::size_t xi = input.index(ic, ix, iy, iz);
                                    gw[wi] += go * input.values[xi];
                                    gx[xi] += go * weight[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    Conv3dGrads grads;
    grads.input = Tensor(input.channels, input.extent);
    for (std::size_t i = 0; i < gx.size(); ++i) grads.input.values[i] = static_cast<float>(gx[i]);
    grads.weight.assign(gw.begin(), gw.end());
    grads.bias.assign(gb.begin(), gb.end());
    return grads;
}

Tensor conv_transpose3d_2x2(const Tensor& input, const std::vector<float>& weight,
                            const std::vector<float>& bias, int out_channels) {
    const std::size_t expect = static_cast<std::size_t>(input.channels) * out_channels * 8;
    if (weight.size() != expect) throw ShapeError("transposed conv weight size mismatch");
    if (bias.size() != static_cast<std::size_t>(out_channels)) throw ShapeError("transposed conv bias size mismatch");

    Tensor out(out_channels, {input.extent[0] * 2, input.extent[1] * 2, input.extent[2] * 2});
    // Stride equals kernel, so each output voxel has exactly one source tap.
    for (int oc = 0; oc < out_channels; ++oc) {
        std::size_t o = out.index(oc, 0, 0, 0);
        for (int z = 0; z < out.extent[2]; ++z) {
            const int iz = z / 2, kz = z % 2;
            for (int y = 0; y < out.extent[1]; ++y) {
                const int iy = y / 2, ky = y % 2;
                for (int x = 0; x < out.extent[0]; ++x, ++o) {
                    const int ix = x / 2, kx = x % 2;
                    double acc = bias[oc];
                    for (int ic = 0; ic < input.channels; ++ic) {
                        const std::size_t wi =
                            ((static_cast<std::size_t>(ic) * out_channels + oc) * 2 + kz) * 4 + ky * 2 + kx;
                        acc += static_cast<double>(weight[wi]) * input.at(ic, ix, iy, iz);
                    }
                    out.values[o] = static_cast<float>(acc);
                }
            }
        }
    }
    return out;
}

Conv3dGrads conv_transpose3d_2x2_backward(const Tensor& input, const std::vector<float>& weight,
                                          const Tensor& grad_out, int out_channels) {
    const std::size_t expect = static_cast<std::size_t>(input.channels) * out_channels * 8;
    if (weight.size() != expect) throw ShapeError("transposed conv weight size mismatch");
    if (grad_out.channels != out_channels ||
        grad_out.extent != std::array<int, 3>{input.extent[0] * 2, input.extent[1] * 2,
                                              input.extent[2] * 2}) {
        throw ShapeError("transposed conv grad_out shape mismatch");
    }

    std::vector<double> gw(weight.size(), 0.0), gb(out_channels, 0.0);
    std::vector<double> gx(input.size(), 0.0);

    for (int oc = 0; oc < out_channels; ++oc) {
        std::size_t o = grad_out.index(oc, 0, 0, 0);
        for (int z = 0; z < grad_out.extent[2]; ++z) {
            const int iz = z / 2, kz = z % 2;
            for (int y = 0; y < grad_out.extent[1]; ++y) {
                const int iy = y / 2, ky = y % 2;
                for (int x = 0; x < grad_out.extent[0]; ++x, ++o) {
                    const int ix = x / 2, kx = x % 2;
                    const double go = grad_out.values[o];
                    if (go == 0.0) continue;
                    gb[oc] += go;
                    for (int ic = 0; ic < input.channels; ++ic) {
                        const std::size_t wi =
                            ((static_cast<std::size_t>(ic) * out_channels + oc) * 2 + kz) * 4 + ky * 2 + kx;
                        const std::size_t xi = input.index(ic, ix, iy, iz);
                        gw[wi] += go * input.values[xi];
                        gx[xi] += go * weight[wi];
                    }
                }
            }
        }
    }

    Conv3dGrads grads;
    grads.input = Tensor(input.channels, input.extent);
    for (std::size_t i = 0; i < gx.size(); ++i) grads.input.values[i] = static_cast<float>(gx[i]);
    grads.weight.assign(gw.begin(), gw.end());
    grads.bias.assign(gb.begin(), gb.end());
    return grads;
}

Tensor instance_norm(const Tensor& input, const std::vector<float>& gamma,
                     const std::vector<float>& beta, NormStats* stats) {
    if (gamma.size() != static_cast<std::size_t>(input.channels) || beta.size() != gamma.size()) {
        throw ShapeError("instance_norm parameter size mismatch");
    }
    const std::size_t n = input.spatial_size();
    Tensor out(input.channels, input.extent);
    if (stats) {
        stats->mean.assign(input.channels, 0.f);
        stats->inv_std.assign(input.channels, 0.f);
    }
    for (int c = 0; c < input.channels; ++c) {
        const float* src = input.values.data() + c * n;
        float* dst = out.values.data() + c * n;
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum += src[i];
            sum_sq += static_cast<double>(src[i]) * src[i];
        }
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
        const double inv_std = 1.0 / std::sqrt(var + kNormEps);
        for (std::size_t i = 0; i < n; ++i) {
            dst[i] = static_cast<float>(gamma[c] * ((src[i] - mean) * inv_std) + beta[c]);
        }
        if (stats) {
            stats->mean[c] = static_cast<float>(mean);
            stats->inv_std[c] = static_cast<float>(inv_std);
        }
    }
    return out;
}

NormGrads instance_norm_backward(const Tensor& input, const NormStats& stats,
                                 const std::vector<float>& gamma, const Tensor& grad_out) {
    if (!input.same_shape(grad_out)) throw ShapeError("instance_norm_backward shape mismatch");
    const std::size_t n = input.spatial_size();
    NormGrads grads;
    grads.input = Tensor(input.channels, input.extent);
    grads.gamma.assign(input.channels, 0.f);
    grads.beta.assign(input.channels, 0.f);

    for (int c = 0; c < input.channels; ++c) {
        const float* x = input.values.data() + c * n;
        const float* go = grad_out.values.data() + c * n;
        float* gx = grads.input.values.data() + c * n;
        const double mean = stats.mean[c];
        const double inv_std = stats.inv_std[c];

        double sum_go = 0.0, sum_go_xhat = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double xhat = (x[i] - mean) * inv_std;
            sum_go += go[i];
            sum_go_xhat += go[i] * xhat;
        }
        grads.beta[c] = static_cast<float>(sum_go);
        grads.gamma[c] = static_cast<float>(sum_go_xhat);

        const double mean_go = sum_go / static_cast<double>(n);
        const double mean_go_xhat = sum_go_xhat / static_cast<double>(n);
        const double scale = gamma[c] * inv_std;
        for (std::size_t i = 0; i < n; ++i) {
            const double xhat = (x[i] - mean) * inv_std;
            gx[i] = static_cast<float>(scale * (go[i] - mean_go - xhat * mean_go_xhat));
        }
    }
    return grads;
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

Tensor gelu(const Tensor& input) {
    Tensor out(input.channels, input.extent);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double x = input.values[i];
        out.values[i] = static_cast<float>(x * 0.5 * (1.0 + std::erf(x * kInvSqrt2)));
    }
    return out;
}

Tensor gelu_backward(const Tensor& input, const Tensor& grad_out) {
    if (!input.same_shape(grad_out)) throw ShapeError("gelu_backward shape mismatch");
    Tensor gx(input.channels, input.extent);
    for (std::size_t i = 0; i < input.size(); ++i) {
        const double x = input.values[i];
        const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
        gx.values[i] = static_cast<float>(grad_out.values[i] * (cdf + x * pdf));
    }
    return gx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    if (a.extent != b.extent) throw ShapeError("concat_channels extent mismatch");
    Tensor out(a.channels + b.channels, a.extent);
    std::copy(a.values.begin(), a.values.end(), out.values.begin());
    std::copy(b.values.begin(), b.values.end(), out.values.begin() + a.values.size());
    return out;
}

}  // namespace emednext
