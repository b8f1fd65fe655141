#include "emednext/losses.hpp"

#include <cmath>

#include "emednext/error.hpp"

namespace emednext {
namespace {

constexpr double kLogEps = 1e-7;  // probability clamp for the focal log terms

double clamp01_eps(double p) { return std::min(std::max(p, kLogEps), 1.0 - kLogEps); }

inline int clamp_idx(int i, int n) { return i < 0 ? 0 : (i >= n ? n - 1 : i); }

// Correlation with one separable Sobel kernel; axis selects the derivative
// direction. Borders replicate the edge sample so constants map to exactly
// zero everywhere. Double precision throughout: the boundary term feeds
// gradient checks.
std::vector<double> sobel_axis_d(const float* x, const std::array<int, 3>& e, int axis) {
    static const int deriv[3] = {-1, 0, 1};
    static const int smooth[3] = {1, 2, 1};
    std::vector<double> out(static_cast<std::size_t>(e[0]) * e[1] * e[2], 0.0);
    auto at = [&](int xx, int yy, int zz) {
        return static_cast<double>(x[(static_cast<std::size_t>(zz) * e[1] + yy) * e[0] + xx]);
    };
    std::size_t o = 0;
    for (int z = 0; z < e[2]; ++z) {
        for (int y = 0; y < e[1]; ++y) {
            for (int x0 = 0; x0 < e[0]; ++x0, ++o) {
                double acc = 0.0;
                for (int dz = -1; dz <= 1; ++dz) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int off[3] = {dx, dy, dz};
                            double w = 1.0;
                            for (int a = 0; a < 3; ++a) {
                                w *= a == axis ? deriv[off[a] + 1] : smooth[off[a] + 1];
                            }
                            if (w == 0.0) continue;
                            acc += w * at(clamp_idx(x0 + dx, e[0]), clamp_idx(y + dy, e[1]),
                                          clamp_idx(z + dz, e[2]));
                        }
                    }
                }
                out[o] = acc;
            }
        }
    }
    return out;
}

// Adjoint of the clamped correlation: scatter each output grad back through
// the taps it read, clamping the target index like the forward did.
std::vector<double> sobel_axis_adjoint_d(const std::vector<double>& g, const std::array<int, 3>& e,
                                         int axis) {
    static const int deriv[3] = {-1, 0, 1};
    static const int smooth[3] = {1, 2, 1};
    std::vector<double> out(g.size(), 0.0);
    auto idx = [&](int xx, int yy, int zz) {
        return (static_cast<std::size_t>(zz) * e[1] + yy) * e[0] + xx;
    };
    std::size_t o = 0;
    for (int z = 0; z < e[2]; ++z) {
        for (int y = 0; y < e[1]; ++y) {
            for (int x0 = 0; x0 < e[0]; ++x0, ++o) {
                const double go = g[o];
                if (go == 0.0) continue;
                for (int dz = -1; dz <= 1; ++dz) {
                    for (int dy = -1; dy <= 1; ++dy) {
                        for (int dx = -1; dx <= 1; ++dx) {
                            const int off[3] = {dx, dy, dz};
                            double w = 1.0;
                            for (int a = 0; a < 3; ++a) {
                                w *= a == axis ? deriv[off[a] + 1] : smooth[off[a] + 1];
                            }
                            if (w == 0.0) continue;
                            out[idx(clamp_idx(x0 + dx, e[0]), clamp_idx(y + dy, e[1]),
                                    clamp_idx(z + dz, e[2]))] += w * go;
                        }
                    }
                }
            }
        }
    }
    return out;
}

}  // namespace

void LossConfig::validate() const {
    if (!(alpha >= 0.0)) throw ArgumentError("loss alpha must be >= 0");
    if (!(focal_gamma >= 0.0)) throw ArgumentError("focal gamma must be >= 0");
    if (!(dice_smooth > 0.0)) throw ArgumentError("dice smooth term must be > 0");
    if (ds_weights.empty()) throw ArgumentError("ds_weights must not be empty");
    for (std::size_t i = 0; i + 1 < ds_weights.size(); ++i) {
        if (std::fabs(ds_weights[i + 1] - 0.5 * ds_weights[i]) > 1e-12) {
            throw ArgumentError("ds_weights must halve level by level");
        }
    }
}

void LossInputs::validate() const {
    if (!p.same_shape(g)) throw ShapeError("loss prediction/target shape mismatch");
    if (p.channels < 1 || p.spatial_size() == 0) throw ArgumentError("loss inputs are empty");
    for (float v : p.values) {
        if (!(v >= 0.f && v <= 1.f)) throw ArgumentError("predicted probability outside [0,1]");
    }
    for (float v : g.values) {
        if (v != 0.f && v != 1.f) throw ArgumentError("ground truth must be binary per channel");
    }
}

double dice_focal(const LossInputs& in, const LossConfig& cfg) {
    in.validate();
    cfg.validate();
    const int C = in.p.channels;
    const std::size_t n = in.p.spatial_size();

    double dice_term = 0.0;
    for (int c = 0; c < C; ++c) {
        const float* p = in.p.values.data() + c * n;
        const float* g = in.g.values.data() + c * n;
        double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inter += static_cast<double>(p[i]) * g[i];
            sum_p += p[i];
            sum_g += g[i];
        }
        const double dice = (2.0 * inter + cfg.dice_smooth) / (sum_p + sum_g + cfg.dice_smooth);
        dice_term += 1.0 - dice;
    }
    dice_term /= C;

    double focal = 0.0;
    for (std::size_t i = 0; i < in.p.values.size(); ++i) {
        const double p = clamp01_eps(in.p.values[i]);
        const double g = in.g.values[i];
        if (g != 0.0) {
            focal -= std::pow(1.0 - p, cfg.focal_gamma) * std::log(p);
        } else {
            focal -= std::pow(p, cfg.focal_gamma) * std::log(1.0 - p);
        }
    }
    focal /= static_cast<double>(in.p.values.size());

    return dice_term + focal;
}

Tensor dice_focal_grad(const LossInputs& in, const LossConfig& cfg) {
    in.validate();
    cfg.validate();
    const int C = in.p.channels;
    const std::size_t n = in.p.spatial_size();
    const double total = static_cast<double>(in.p.values.size());
    Tensor grad(C, in.p.extent);

    for (int c = 0; c < C; ++c) {
        const float* p = in.p.values.data() + c * n;
        const float* g = in.g.values.data() + c * n;
        float* gr = grad.values.data() + c * n;

        double inter = 0.0, sum_p = 0.0, sum_g = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            inter += static_cast<double>(p[i]) * g[i];
            sum_p += p[i];
            sum_g += g[i];
        }
        const double num = 2.0 * inter + cfg.dice_smooth;
        const double den = sum_p + sum_g + cfg.dice_smooth;

        for (std::size_t i = 0; i < n; ++i) {
            // d/dp_i of (1 - dice_c)/C
            const double d_dice = -(2.0 * g[i] * den - num) / (den * den) / C;

            const double pc = clamp01_eps(p[i]);
            double d_focal;
            if (g[i] != 0.f) {
                d_focal = cfg.focal_gamma * std::pow(1.0 - pc, cfg.focal_gamma - 1.0) * std::log(pc) -
                          std::pow(1.0 - pc, cfg.focal_gamma) / pc;
            } else {
                d_focal = -cfg.focal_gamma * std::pow(pc, cfg.focal_gamma - 1.0) * std::log(1.0 - pc) +
                          std::pow(pc, cfg.focal_gamma) / (1.0 - pc);
            }
            gr[i] = static_cast<float>(d_dice + d_focal / total);
        }
    }
    return grad;
}

bool sobel_supported(const std::array<int, 3>& extent) {
    return extent[0] >= 3 && extent[1] >= 3 && extent[2] >= 3;
}

std::array<Tensor, 3> sobel_gradient_3d(const Tensor& x) {
    if (x.channels != 1) throw ArgumentError("sobel_gradient_3d expects a single channel");
    if (!sobel_supported(x.extent)) {
        throw ArgumentError("sobel_gradient_3d needs every extent >= 3");
    }
    std::array<Tensor, 3> out{Tensor(1, x.extent), Tensor(1, x.extent), Tensor(1, x.extent)};
    for (int axis = 0; axis < 3; ++axis) {
        const auto vals = sobel_axis_d(x.values.data(), x.extent, axis);
        for (std::size_t i = 0; i < vals.size(); ++i) {
            out[axis].values[i] = static_cast<float>(vals[i]);
        }
    }
    return out;
}

double boundary_loss(const LossInputs& in) {
    in.validate();
    if (!sobel_supported(in.p.extent)) throw ArgumentError("boundary_loss needs every extent >= 3");
    const std::size_t n = in.p.spatial_size();
    double loss = 0.0;
    for (int c = 0; c < in.p.channels; ++c) {
        const float* pc = in.p.values.data() + c * n;
        const float* gc = in.g.values.data() + c * n;
        for (int axis = 0; axis < 3; ++axis) {
            const auto sp = sobel_axis_d(pc, in.p.extent, axis);
            const auto sg = sobel_axis_d(gc, in.p.extent, axis);
            double acc = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                const double d = sp[i] - sg[i];
                acc += d * d;
            }
            loss += acc / static_cast<double>(n);
        }
    }
    return loss;
}

Tensor boundary_loss_grad(const LossInputs& in) {
    in.validate();
    if (!sobel_supported(in.p.extent)) throw ArgumentError("boundary_loss needs every extent >= 3");
    const std::size_t n = in.p.spatial_size();
    Tensor grad(in.p.channels, in.p.extent);
    for (int c = 0; c < in.p.channels; ++c) {
        const float* pc = in.p.values.data() + c * n;
        const float* gc = in.g.values.data() + c * n;
        std::vector<double> acc(n, 0.0);
        for (int axis = 0; axis < 3; ++axis) {
            auto sp = sobel_axis_d(pc, in.p.extent, axis);
            const auto sg = sobel_axis_d(gc, in.p.extent, axis);
            for (std::size_t i = 0; i < n; ++i) sp[i] -= sg[i];
            const auto back = sobel_axis_adjoint_d(sp, in.p.extent, axis);
            const double scale = 2.0 / static_cast<double>(n);
            for (std::size_t i = 0; i < n; ++i) acc[i] += scale * back[i];
        }
        float* gr = grad.values.data() + c * n;
        for (std::size_t i = 0; i < n; ++i) gr[i] = static_cast<float>(acc[i]);
    }
    return grad;
}

double level_loss(const LossInputs& in, const LossConfig& cfg) {
    double loss = dice_focal(in, cfg);
    if (cfg.alpha > 0.0 && sobel_supported(in.p.extent)) {
        loss += cfg.alpha * boundary_loss(in);
    }
    return loss;
}

Tensor level_loss_grad(const LossInputs& in, const LossConfig& cfg) {
    Tensor grad = dice_focal_grad(in, cfg);
    if (cfg.alpha > 0.0 && sobel_supported(in.p.extent)) {
        const Tensor bg = boundary_loss_grad(in);
        for (std::size_t i = 0; i < grad.values.size(); ++i) {
            grad.values[i] += static_cast<float>(cfg.alpha * bg.values[i]);
        }
    }
    return grad;
}

Tensor downsample_nearest(const Tensor& g, int factor) {
    if (factor < 1) throw ArgumentError("downsample factor must be >= 1");
    if (factor == 1) return g;
    for (int a = 0; a < 3; ++a) {
        if (g.extent[a] % factor != 0) throw ShapeError("extent not divisible by downsample factor");
    }
    Tensor out(g.channels, {g.extent[0] / factor, g.extent[1] / factor, g.extent[2] / factor});
    for (int c = 0; c < g.channels; ++c) {
        for (int z = 0; z < out.extent[2]; ++z) {
            for (int y = 0; y < out.extent[1]; ++y) {
                for (int x = 0; x < out.extent[0]; ++x) {
                    out.at(c, x, y, z) = g.at(c, x * factor, y * factor, z * factor);
                }
            }
        }
    }
    return out;
}

Tensor sigmoid(const Tensor& logits) {
    Tensor out(logits.channels, logits.extent);
    for (std::size_t i = 0; i < logits.values.size(); ++i) {
        out.values[i] = static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(logits.values[i]))));
    }
    return out;
}

namespace {

void check_levels(const std::vector<Tensor>& levels, const Tensor& g, const LossConfig& cfg) {
    if (levels.empty()) throw ArgumentError("total_loss needs at least one output level");
    if (levels.size() > cfg.ds_weights.size()) {
        throw ArgumentError("more output levels than deep-supervision weights");
    }
    for (std::size_t i = 0; i < levels.size(); ++i) {
        const int f = 1 << i;
        if (levels[i].channels != g.channels) throw ShapeError("output level channel mismatch");
        for (int a = 0; a < 3; ++a) {
            if (levels[i].extent[a] * f != g.extent[a]) {
                throw ShapeError("output level " + std::to_string(i) +
                                 " is not at 1/2^i of the ground-truth resolution");
            }
        }
    }
}

}  // namespace

double total_loss_probs(const std::vector<Tensor>& ds_probs, const Tensor& g, const LossConfig& cfg) {
    cfg.validate();
    check_levels(ds_probs, g, cfg);
    double total = 0.0;
    for (std::size_t i = 0; i < ds_probs.size(); ++i) {
        LossInputs in{ds_probs[i], downsample_nearest(g, 1 << i)};
        total += cfg.ds_weights[i] * level_loss(in, cfg);
    }
    return total;
}

std::vector<Tensor> total_loss_probs_grad(const std::vector<Tensor>& ds_probs, const Tensor& g,
                                          const LossConfig& cfg) {
    cfg.validate();
    check_levels(ds_probs, g, cfg);
    std::vector<Tensor> grads;
    grads.reserve(ds_probs.size());
    for (std::size_t i = 0; i < ds_probs.size(); ++i) {
        LossInputs in{ds_probs[i], downsample_nearest(g, 1 << i)};
        Tensor grad = level_loss_grad(in, cfg);
        for (float& v : grad.values) v = static_cast<float>(v * cfg.ds_weights[i]);
        grads.push_back(std::move(grad));
    }
    return grads;
}

double total_loss(const std::vector<Tensor>& ds_logits, const Tensor& g, const LossConfig& cfg) {
    std::vector<Tensor> probs;
    probs.reserve(ds_logits.size());
    for (const Tensor& logits : ds_logits) probs.push_back(sigmoid(logits));
    return total_loss_probs(probs, g, cfg);
}

std::vector<Tensor> total_loss_grad(const std::vector<Tensor>& ds_logits, const Tensor& g,
                                    const LossConfig& cfg) {
    std::vector<Tensor> probs;
    probs.reserve(ds_logits.size());
    for (const Tensor& logits : ds_logits) probs.push_back(sigmoid(logits));
    std::vector<Tensor> grads = total_loss_probs_grad(probs, g, cfg);
    for (std::size_t i = 0; i < grads.size(); ++i) {
        for (std::size_t j = 0; j < grads[i].values.size(); ++j) {
            const double p = probs[i].values[j];
            grads[i].values[j] = static_cast<float>(grads[i].values[j] * p * (1.0 - p));
        }
    }
    return grads;
}

}  // namespace emednext
