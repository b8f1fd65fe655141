#include "emednext/inference.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "emednext/error.hpp"
#include "emednext/hash.hpp"

namespace emednext {
namespace {

using nlohmann::json;

constexpr const char* kChannelNames[3] = {"tc", "wt", "et"};

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Volume flip_volume(const Volume& vol, unsigned axes_mask) {
    if (axes_mask == 0) return vol;
    const auto& s = vol.geometry.shape;
    Volume out(vol.channels, vol.geometry);
    out.nifti_affine = vol.nifti_affine;
    out.has_affine = vol.has_affine;
    for (int c = 0; c < vol.channels; ++c) {
        for (int z = 0; z < s[2]; ++z) {
            const int zz = (axes_mask & 4u) ? s[2] - 1 - z : z;
            for (int y = 0; y < s[1]; ++y) {
                const int yy = (axes_mask & 2u) ? s[1] - 1 - y : y;
                for (int x = 0; x < s[0]; ++x) {
                    const int xx = (axes_mask & 1u) ? s[0] - 1 - x : x;
                    out.at(c, x, y, z) = vol.at(c, xx, yy, zz);
                }
            }
        }
    }
    return out;
}

std::vector<float> flip_channel(const std::vector<float>& data, const std::array<int, 3>& s,
                                unsigned axes_mask) {
    if (axes_mask == 0) return data;
    std::vector<float> out(data.size());
    std::size_t i = 0;
    for (int z = 0; z < s[2]; ++z) {
        const int zz = (axes_mask & 4u) ? s[2] - 1 - z : z;
        for (int y = 0; y < s[1]; ++y) {
            const int yy = (axes_mask & 2u) ? s[1] - 1 - y : y;
            for (int x = 0; x < s[0]; ++x, ++i) {
                const int xx = (axes_mask & 1u) ? s[0] - 1 - x : x;
                out[i] = data[(static_cast<std::size_t>(zz) * s[1] + yy) * s[0] + xx];
            }
        }
    }
    return out;
}

}  // namespace

void SlidingWindowConfig::validate() const {
    for (int d = 0; d < 3; ++d) {
        if (patch_shape[d] < 1) throw ConfigError("sliding-window patch shape must be positive");
    }
    if (!(overlap_fraction >= 0.0 && overlap_fraction < 1.0)) {
        throw ConfigError("overlap fraction must lie in [0,1)");
    }
    if (tta_passes != 7 && tta_passes != 8) {
        throw ConfigError("tta_passes must be 7 (flips only) or 8 (identity + flips)");
    }
}

std::vector<int> window_starts(int length, int patch, double overlap_fraction) {
    if (patch > length) throw ConfigError("patch larger than the (padded) volume");
    if (patch == length) return {0};
    const int stride = std::max(1, static_cast<int>(std::llround(patch * (1.0 - overlap_fraction))));
    const int span = length - patch;
    const int num = (span + stride - 1) / stride + 1;
    std::vector<int> starts(num);
    for (int i = 0; i < num; ++i) {
        starts[i] = static_cast<int>(std::llround(static_cast<double>(i) * span / (num - 1)));
    }
    return starts;
}

ProbMaps sliding_window_predict(const Volume& vol, const ForwardModel& model,
                                const SlidingWindowConfig& cfg) {
    cfg.validate();
    vol.geometry.validate();

    const auto& shape = vol.geometry.shape;
    std::array<int, 3> padded_shape, pad_lo;
    for (int d = 0; d < 3; ++d) {
        padded_shape[d] = std::max(shape[d], cfg.patch_shape[d]);
        pad_lo[d] = (padded_shape[d] - shape[d]) / 2;
    }

    const Volume* work = &vol;
    Volume padded;
    if (padded_shape != shape) {
        GridGeometry g = vol.geometry;
        g.shape = padded_shape;
        padded = Volume(vol.channels, g);
        for (int c = 0; c < vol.channels; ++c) {
            for (int z = 0; z < shape[2]; ++z) {
                for (int y = 0; y < shape[1]; ++y) {
                    for (int x = 0; x < shape[0]; ++x) {
                        padded.at(c, x + pad_lo[0], y + pad_lo[1], z + pad_lo[2]) = vol.at(c, x, y, z);
                    }
                }
            }
        }
        work = &padded;
    }

    const auto sx = window_starts(padded_shape[0], cfg.patch_shape[0], cfg.overlap_fraction);
    const auto sy = window_starts(padded_shape[1], cfg.patch_shape[1], cfg.overlap_fraction);
    const auto sz = window_starts(padded_shape[2], cfg.patch_shape[2], cfg.overlap_fraction);

    // Per-voxel blend weight within a patch.
    const auto& ps = cfg.patch_shape;
    const std::size_t patch_n = static_cast<std::size_t>(ps[0]) * ps[1] * ps[2];
    std::vector<double> blend(patch_n, 1.0);
    if (cfg.blend == SlidingWindowConfig::Blend::gaussian) {
        std::array<std::vector<double>, 3> axis_w;
        for (int d = 0; d < 3; ++d) {
            axis_w[d].resize(ps[d]);
            const double center = (ps[d] - 1) / 2.0;
            const double sigma = ps[d] / 8.0;
            for (int i = 0; i < ps[d]; ++i) {
                const double t = (i - center) / sigma;
                axis_w[d][i] = std::exp(-0.5 * t * t);
            }
        }
        std::size_t i = 0;
        for (int z = 0; z < ps[2]; ++z) {
            for (int y = 0; y < ps[1]; ++y) {
                for (int x = 0; x < ps[0]; ++x, ++i) {
                    blend[i] = axis_w[0][x] * axis_w[1][y] * axis_w[2][z];
                }
            }
        }
    }

    const std::size_t n = static_cast<std::size_t>(padded_shape[0]) * padded_shape[1] * padded_shape[2];
    std::array<std::vector<double>, 3> acc;
    for (auto& a : acc) a.assign(n, 0.0);
    std::vector<double> wsum(n, 0.0);

    Tensor patch(vol.channels, ps);
    for (int z0 : sz) {
        for (int y0 : sy) {
            for (int x0 : sx) {
                for (int c = 0; c < vol.channels; ++c) {
                    for (int z = 0; z < ps[2]; ++z) {
                        for (int y = 0; y < ps[1]; ++y) {
                            for (int x = 0; x < ps[0]; ++x) {
                                patch.at(c, x, y, z) = work->at(c, x0 + x, y0 + y, z0 + z);
                            }
                        }
                    }
                }
                const Tensor logits = model(patch);
                if (logits.channels != 3 || logits.extent != ps) {
                    throw ShapeError("model must emit 3-channel logits at the patch extent");
                }
                for (int cls = 0; cls < 3; ++cls) {
                    std::size_t pi = 0;
                    const float* lp = logits.values.data() + static_cast<std::size_t>(cls) * patch_n;
                    for (int z = 0; z < ps[2]; ++z) {
                        const std::size_t gz = static_cast<std::size_t>(z0 + z) * padded_shape[1];
                        for (int y = 0; y < ps[1]; ++y) {
                            const std::size_t gzy = (gz + y0 + y) * padded_shape[0] + x0;
                            for (int x = 0; x < ps[0]; ++x, ++pi) {
                                acc[cls][gzy + x] += blend[pi] * logistic(lp[pi]);
                            }
                        }
                    }
                }
                std::size_t pi = 0;
                for (int z = 0; z < ps[2]; ++z) {
                    const std::size_t gz = static_cast<std::size_t>(z0 + z) * padded_shape[1];
                    for (int y = 0; y < ps[1]; ++y) {
                        const std::size_t gzy = (gz + y0 + y) * padded_shape[0] + x0;
                        for (int x = 0; x < ps[0]; ++x, ++pi) wsum[gzy + x] += blend[pi];
                    }
                }
            }
        }
    }

    ProbMaps out(vol.geometry);
    for (int cls = 0; cls < 3; ++cls) {
        auto& ch = out.channel(cls);
        std::size_t oi = 0;
        for (int z = 0; z < shape[2]; ++z) {
            const std::size_t gz = static_cast<std::size_t>(z + pad_lo[2]) * padded_shape[1];
            for (int y = 0; y < shape[1]; ++y) {
                const std::size_t gzy = (gz + y + pad_lo[1]) * padded_shape[0] + pad_lo[0];
                for (int x = 0; x < shape[0]; ++x, ++oi) {
                    const double v = acc[cls][gzy + x] / wsum[gzy + x];
                    ch[oi] = static_cast<float>(std::clamp(v, 0.0, 1.0));
                }
            }
        }
    }
    return out;
}

ProbMaps tta_predict(const Volume& vol, const ForwardModel& model, const SlidingWindowConfig& cfg) {
    cfg.validate();
    const unsigned first = cfg.tta_passes == 8 ? 0u : 1u;
    const std::size_t n = vol.geometry.voxel_count();

    std::array<std::vector<double>, 3> acc;
    for (auto& a : acc) a.assign(n, 0.0);
    int passes = 0;
    for (unsigned mask = first; mask <= 7u; ++mask, ++passes) {
        const Volume flipped = flip_volume(vol, mask);
        const ProbMaps pred = sliding_window_predict(flipped, model, cfg);
        for (int cls = 0; cls < 3; ++cls) {
            const std::vector<float> restored =
                flip_channel(pred.channel(cls), vol.geometry.shape, mask);
            for (std::size_t i = 0; i < n; ++i) acc[cls][i] += restored[i];
        }
    }

    ProbMaps out(vol.geometry);
    for (int cls = 0; cls < 3; ++cls) {
        auto& ch = out.channel(cls);
        for (std::size_t i = 0; i < n; ++i) {
            ch[i] = static_cast<float>(std::clamp(acc[cls][i] / passes, 0.0, 1.0));
        }
    }
    return out;
}

bool EnsembleAccumulator::has_model(const std::string& model_id) const {
    return std::find(models_seen.begin(), models_seen.end(), model_id) != models_seen.end();
}

EnsembleAccumulator make_accumulator(const GridGeometry& geometry) {
    geometry.validate();
    EnsembleAccumulator acc;
    acc.geometry = geometry;
    for (auto& s : acc.sums) s.assign(geometry.voxel_count(), 0.f);
    return acc;
}

void accumulate_model(EnsembleAccumulator& acc, const ProbMaps& probs, const ClassWeights& weights,
                      const std::string& model_id) {
    if (probs.geometry.shape != acc.geometry.shape) {
        throw ShapeError("probabilities do not match the accumulator geometry");
    }
    for (double w : weights) {
        if (!(w >= 0.0)) throw ArgumentError("ensemble weights must be nonnegative");
    }
    if (acc.has_model(model_id)) throw ArgumentError("model " + model_id + " already accumulated");

    for (int cls = 0; cls < 3; ++cls) {
        const double w = weights[cls];
        if (w == 0.0) continue;  // class contribution disabled for this model
        auto& sum = acc.sums[cls];
        const auto& ch = probs.channel(cls);
        for (std::size_t i = 0; i < sum.size(); ++i) {
            sum[i] = static_cast<float>(static_cast<double>(sum[i]) + w * ch[i]);
        }
    }
    for (int cls = 0; cls < 3; ++cls) acc.totals[cls] += weights[cls];
    acc.models_seen.push_back(model_id);
    acc.model_weights.push_back(weights);
}

void save_accumulator(const EnsembleAccumulator& acc, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    json state;
    state["geometry"]["shape"] = acc.geometry.shape;
    state["geometry"]["spacing"] = acc.geometry.spacing;
    state["totals"] = acc.totals;
    state["models"] = json::array();
    for (std::size_t m = 0; m < acc.models_seen.size(); ++m) {
        state["models"].push_back({{"id", acc.models_seen[m]}, {"weights", acc.model_weights[m]}});
    }
    for (int cls = 0; cls < 3; ++cls) {
        const auto path = dir / (std::string(kChannelNames[cls]) + ".f32");
        const auto tmp = dir / (std::string(kChannelNames[cls]) + ".f32.tmp");
        {
            std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
            if (!f) throw IoError("cannot write " + tmp.string());
            f.write(reinterpret_cast<const char*>(acc.sums[cls].data()),
                    static_cast<std::streamsize>(acc.sums[cls].size() * sizeof(float)));
            if (!f) throw IoError("failed writing " + tmp.string());
        }
        state["blob_hash"][kChannelNames[cls]] =
            hash_to_hex(fnv1a64(acc.sums[cls].data(), acc.sums[cls].size() * sizeof(float)));
        std::filesystem::rename(tmp, path);
    }
    const auto state_tmp = dir / "state.json.tmp";
    {
        std::ofstream f(state_tmp);
        if (!f) throw IoError("cannot write " + state_tmp.string());
        f << state.dump(2) << "\n";
    }
    std::filesystem::rename(state_tmp, dir / "state.json");
}

bool accumulator_exists(const std::filesystem::path& dir) {
    return std::filesystem::exists(dir / "state.json");
}

EnsembleAccumulator load_accumulator(const std::filesystem::path& dir) {
    std::ifstream f(dir / "state.json");
    if (!f) throw IoError("cannot open " + (dir / "state.json").string());
    json state = json::parse(f, nullptr, /*allow_exceptions=*/false);
    if (state.is_discarded()) throw FormatError(dir.string() + ": corrupt accumulator state");

    EnsembleAccumulator acc;
    try {
        const auto shape = state.at("geometry").at("shape").get<std::array<int, 3>>();
        const auto spacing = state.at("geometry").at("spacing").get<std::array<float, 3>>();
        acc.geometry.shape = shape;
        acc.geometry.spacing = spacing;
        acc.totals = state.at("totals").get<std::array<double, 3>>();
        for (const auto& m : state.at("models")) {
            acc.models_seen.push_back(m.at("id").get<std::string>());
            acc.model_weights.push_back(m.at("weights").get<ClassWeights>());
        }
    } catch (const json::exception& e) {
        throw FormatError(dir.string() + ": corrupt accumulator state: " + e.what());
    }
    acc.geometry.validate();

    const std::size_t n = acc.geometry.voxel_count();
    for (int cls = 0; cls < 3; ++cls) {
        const auto path = dir / (std::string(kChannelNames[cls]) + ".f32");
        std::ifstream blob(path, std::ios::binary);
        if (!blob) throw IoError("cannot open " + path.string());
        acc.sums[cls].assign(n, 0.f);
        blob.read(reinterpret_cast<char*>(acc.sums[cls].data()),
                  static_cast<std::streamsize>(n * sizeof(float)));
        if (blob.gcount() != static_cast<std::streamsize>(n * sizeof(float))) {
            throw FormatError(path.string() + ": truncated accumulator blob");
        }
        const std::string expect = state["blob_hash"].value(kChannelNames[cls], std::string{});
        const std::string got =
            hash_to_hex(fnv1a64(acc.sums[cls].data(), acc.sums[cls].size() * sizeof(float)));
        if (expect != got) {
            throw FormatError(dir.string() +
                              ": accumulator blob/state mismatch (interrupted mid-pass?); "
                              "delete the directory to restart this case");
        }
    }
    return acc;
}

ProbMaps normalize_ensemble(const EnsembleAccumulator& acc) {
    for (int cls = 0; cls < 3; ++cls) {
        if (!(acc.totals[cls] > 0.0)) {
            throw ArgumentError(std::string("ensemble weight total for ") + kChannelNames[cls] +
                                " is zero; every class needs positive total weight");
        }
    }
    ProbMaps out(acc.geometry);
    for (int cls = 0; cls < 3; ++cls) {
        auto& ch = out.channel(cls);
        const auto& sum = acc.sums[cls];
        const double inv = 1.0 / acc.totals[cls];
        for (std::size_t i = 0; i < ch.size(); ++i) {
            ch[i] = static_cast<float>(std::clamp(sum[i] * inv, 0.0, 1.0));
        }
    }
    return out;
}

namespace {

struct RestoreGeometry {
    std::array<int, 3> content;       // voxels surviving the center crop
    std::array<int, 3> target_start;  // where content lands on the resampled grid
};

RestoreGeometry check_restore(const std::array<int, 3>& model_shape, const CaseMeta& meta) {
    RestoreGeometry rg;
    for (int d = 0; d < 3; ++d) {
        const int box = meta.bbox_max[d] - meta.bbox_min[d] + 1;
        if (box < 1 || meta.bbox_min[d] < 0 || meta.bbox_max[d] >= meta.resampled_shape[d]) {
            throw ArgumentError("case meta bounding box is inconsistent with the resampled grid");
        }
        rg.content[d] = box - meta.crop_before[d] - meta.crop_after[d];
        const int expect = rg.content[d] + meta.pad_before[d] + meta.pad_after[d];
        if (rg.content[d] < 1 || expect != model_shape[d]) {
            throw ArgumentError("case meta does not match the model-space shape");
        }
        rg.target_start[d] = meta.bbox_min[d] + meta.crop_before[d];
    }
    return rg;
}

}  // namespace

ProbMaps restore_to_original_space(const ProbMaps& probs, const CaseMeta& meta) {
    const RestoreGeometry rg = check_restore(probs.geometry.shape, meta);

    GridGeometry res_geom;
    res_geom.shape = meta.resampled_shape;
    res_geom.spacing = meta.resampled_spacing;
    Volume staged(3, res_geom);

    for (int cls = 0; cls < 3; ++cls) {
        const auto& ch = probs.channel(cls);
        for (int z = 0; z < rg.content[2]; ++z) {
            for (int y = 0; y < rg.content[1]; ++y) {
                for (int x = 0; x < rg.content[0]; ++x) {
                    const std::size_t src = probs.geometry.index(
                        x + meta.pad_before[0], y + meta.pad_before[1], z + meta.pad_before[2]);
                    staged.at(cls, rg.target_start[0] + x, rg.target_start[1] + y,
                              rg.target_start[2] + z) = ch[src];
                }
            }
        }
    }

    const Volume restored =
        resample_to_shape(staged, meta.original_shape, meta.original_spacing, Interp::linear);
    ProbMaps out(restored.geometry);
    const std::size_t n = restored.geometry.voxel_count();
    for (int cls = 0; cls < 3; ++cls) {
        auto& ch = out.channel(cls);
        const float* src = restored.channel_data(cls);
        for (std::size_t i = 0; i < n; ++i) ch[i] = std::clamp(src[i], 0.f, 1.f);
    }
    return out;
}

LabelMap restore_to_original_space(const LabelMap& labels, const CaseMeta& meta) {
    const RestoreGeometry rg = check_restore(labels.geometry.shape, meta);

    GridGeometry res_geom;
    res_geom.shape = meta.resampled_shape;
    res_geom.spacing = meta.resampled_spacing;
    LabelMap staged(res_geom);

    for (int z = 0; z < rg.content[2]; ++z) {
        for (int y = 0; y < rg.content[1]; ++y) {
            for (int x = 0; x < rg.content[0]; ++x) {
                staged.at(rg.target_start[0] + x, rg.target_start[1] + y, rg.target_start[2] + z) =
                    labels.at(x + meta.pad_before[0], y + meta.pad_before[1], z + meta.pad_before[2]);
            }
        }
    }
    return resample_labels_to_shape(staged, meta.original_shape, meta.original_spacing);
}

}  // namespace emednext
