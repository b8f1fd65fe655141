#include "support/model_ref.hpp"

#include <cmath>
#include <stdexcept>

namespace emednext::testing {
namespace {

const std::vector<float>& pvals(const ModelParams& params, const std::string& name) {
    return params.find(name).values;
}

DTensor ref_conv3d(const DTensor& x, const std::vector<float>& w, const std::vector<float>& b,
                   int out_c, int k, int stride, int groups) {
    const int pad = k / 2;
    const int in_pg = x.channels / groups;
    const int out_pg = out_c / groups;
    std::array<int, 3> oe;
    for (int a = 0; a < 3; ++a) oe[a] = stride == 1 ? x.extent[a] : (x.extent[a] + 1) / 2;
    DTensor out(out_c, oe);
    for (int oc = 0; oc < out_c; ++oc) {
        for (int oz = 0; oz < oe[2]; ++oz) {
            for (int oy = 0; oy < oe[1]; ++oy) {
                for (int ox = 0; ox < oe[0]; ++ox) {
                    double acc = b[oc];
                    for (int i = 0; i < in_pg; ++i) {
                        const int ic = (oc / out_pg) * in_pg + i;
                        for (int kz = 0; kz < k; ++kz) {
                            const int iz = oz * stride + kz - pad;
                            if (iz < 0 || iz >= x.extent[2]) continue;
                            for (int ky = 0; ky < k; ++ky) {
                                const int iy = oy * stride + ky - pad;
                                if (iy < 0 || iy >= x.extent[1]) continue;
                                for (int kx = 0; kx < k; ++kx) {
                                    const int ix = ox * stride + kx - pad;
                                    if (ix < 0 || ix >= x.extent[0]) continue;
                                    const std::size_t wi =
                                        ((static_cast<std::size_t>(oc) * in_pg + i) * k + kz) * k * k +
                                        static_cast<std::size_t>(ky) * k + kx;
                                    acc += static_cast<double>(w[wi]) * x.at(ic, ix, iy, iz);
                                }
                            }
                        }
                    }
                    out.at(oc, ox, oy, oz) = acc;
                }
            }
        }
    }
    return out;
}

DTensor ref_conv_transpose(const DTensor& x, const std::vector<float>& w,
                           const std::vector<float>& b, int out_c) {
    DTensor out(out_c, {x.extent[0] * 2, x.extent[1] * 2, x.extent[2] * 2});
    for (int oc = 0; oc < out_c; ++oc) {
        for (int z = 0; z < out.extent[2]; ++z) {
            for (int y = 0; y < out.extent[1]; ++y) {
                for (int xx = 0; xx < out.extent[0]; ++xx) {
                    double acc = b[oc];
                    for (int ic = 0; ic < x.channels; ++ic) {
                        const std::size_t wi =
                            ((static_cast<std::size_t>(ic) * out_c + oc) * 2 + z % 2) * 4 +
                            (y % 2) * 2 + xx % 2;
                        acc += static_cast<double>(w[wi]) * x.at(ic, xx / 2, y / 2, z / 2);
                    }
                    out.at(oc, xx, y, z) = acc;
                }
            }
        }
    }
    return out;
}

DTensor ref_norm(const DTensor& x, const std::vector<float>& gamma, const std::vector<float>& beta) {
    const std::size_t n = x.spatial_size();
    DTensor out(x.channels, x.extent);
    for (int c = 0; c < x.channels; ++c) {
        const double* src = x.values.data() + c * n;
        double* dst = out.values.data() + c * n;
        double sum = 0.0, sum_sq = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            sum += src[i];
            sum_sq += src[i] * src[i];
        }
        const double mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sum_sq / static_cast<double>(n) - mean * mean);
        const double inv_std = 1.0 / std::sqrt(var + static_cast<double>(kNormEps));
        for (std::size_t i = 0; i < n; ++i) {
            dst[i] = gamma[c] * ((src[i] - mean) * inv_std) + beta[c];
        }
    }
    return out;
}

DTensor ref_gelu(const DTensor& x) {
    DTensor out(x.channels, x.extent);
    for (std::size_t i = 0; i < x.values.size(); ++i) {
        const double v = x.values[i];
        out.values[i] = v * 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
    }
    return out;
}

DTensor ref_concat(const DTensor& a, const DTensor& b) {
    DTensor out(a.channels + b.channels, a.extent);
    std::copy(a.values.begin(), a.values.end(), out.values.begin());
    std::copy(b.values.begin(), b.values.end(), out.values.begin() + a.values.size());
    return out;
}

}  // namespace

DTensor to_dtensor(const Tensor& t) {
    DTensor out(t.channels, t.extent);
    for (std::size_t i = 0; i < t.values.size(); ++i) out.values[i] = t.values[i];
    return out;
}

DTensor ref_block_forward(const DTensor& x, const BlockConfig& cfg, const ModelParams& params,
                          const std::string& prefix) {
    const int c = cfg.channels;
    const int expanded = c * cfg.expansion_ratio;
    DTensor t = ref_conv3d(x, pvals(params, prefix + ".dw.weight"), pvals(params, prefix + ".dw.bias"),
                           c, 3, 1, c);
    t = ref_norm(t, pvals(params, prefix + ".norm.gamma"), pvals(params, prefix + ".norm.beta"));
    t = ref_conv3d(t, pvals(params, prefix + ".expand.weight"), pvals(params, prefix + ".expand.bias"),
                   expanded, 1, 1, 1);
    t = ref_gelu(t);
    t = ref_conv3d(t, pvals(params, prefix + ".compress.weight"),
                   pvals(params, prefix + ".compress.bias"), c, 1, 1, 1);
    DTensor out = x;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += t.values[i];
    return out;
}

std::vector<DTensor> ref_model_forward(const DTensor& x, const ModelConfig& cfg,
                                       const ModelParams& params) {
    const int S = cfg.num_stages;
    DTensor cur = ref_conv3d(x, pvals(params, "stem.weight"), pvals(params, "stem.bias"),
                             cfg.stage_channels(0), 3, 1, 1);
    std::vector<DTensor> skips(S - 1);
    for (int s = 0; s < S; ++s) {
        const BlockConfig bc{cfg.stage_channels(s), cfg.expansion_ratios[s]};
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            cur = ref_block_forward(cur, bc, params,
                                    "enc" + std::to_string(s) + ".block" + std::to_string(b));
        }
        if (s < S - 1) {
            skips[s] = cur;
            const std::string d = "down" + std::to_string(s);
            cur = ref_conv3d(cur, pvals(params, d + ".weight"), pvals(params, d + ".bias"),
                             cfg.stage_channels(s + 1), 3, 2, 1);
        }
    }

    const int n_out = cfg.num_outputs();
    std::vector<DTensor> outputs(n_out);
    if (n_out == S) {
        const std::string h = "head" + std::to_string(S - 1);
        outputs[S - 1] = ref_conv3d(cur, pvals(params, h + ".weight"), pvals(params, h + ".bias"),
                                    cfg.num_classes, 1, 1, 1);
    }
    for (int s = S - 2; s >= 0; --s) {
        const int c = cfg.stage_channels(s);
        const std::string u = "up" + std::to_string(s);
        DTensor up = ref_conv_transpose(cur, pvals(params, u + ".weight"), pvals(params, u + ".bias"), c);
        DTensor cat = ref_concat(up, skips[s]);
        const std::string f = "fuse" + std::to_string(s);
        cur = ref_conv3d(cat, pvals(params, f + ".weight"), pvals(params, f + ".bias"), c, 1, 1, 1);
        const BlockConfig bc{c, cfg.expansion_ratios[s]};
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            cur = ref_block_forward(cur, bc, params,
                                    "dec" + std::to_string(s) + ".block" + std::to_string(b));
        }
        if (s < n_out && s <= 3) {
            const std::string h = "head" + std::to_string(s);
            outputs[s] = ref_conv3d(cur, pvals(params, h + ".weight"), pvals(params, h + ".bias"),
                                    cfg.num_classes, 1, 1, 1);
        }
    }
    return outputs;
}

}  // namespace emednext::testing
