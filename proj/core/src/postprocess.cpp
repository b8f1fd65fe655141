#include "emednext/postprocess.hpp"

#include <algorithm>
#include <numeric>

#include <json.hpp>

#include "emednext/error.hpp"

namespace emednext {
namespace {

using nlohmann::json;

void check_same_grid(const GridGeometry& a, const GridGeometry& b, const char* what) {
    if (a.shape != b.shape) throw ShapeError(std::string(what) + ": grid shape mismatch");
}

BinaryMask mask_union(const BinaryMask& a, const BinaryMask& b) {
    check_same_grid(a.geometry, b.geometry, "mask union");
    BinaryMask out = a;
    for (std::size_t i = 0; i < out.voxels.size(); ++i) {
        if (b.voxels[i]) out.voxels[i] = 1;
    }
    return out;
}

}  // namespace

std::size_t BinaryMask::count() const {
    return static_cast<std::size_t>(std::count(voxels.begin(), voxels.end(), std::uint8_t(1)));
}

void PostprocessConfig::validate() const {
    for (float t : {tau_tc, tau_wt, tau_et}) {
        if (!(t > 0.f && t < 1.f)) throw ArgumentError("thresholds must lie in (0,1)");
    }
    for (int g : {gamma_tc, gamma_wt, gamma_et}) {
        if (g < 1) throw ArgumentError("component size filters must be >= 1");
    }
    for (float e : {eta_tc, eta_wt, eta_et}) {
        if (!(e >= 0.f && e <= 1.f)) throw ArgumentError("mean-probability filters must lie in [0,1]");
    }
    if (max_components < 1) throw ArgumentError("max_components must be >= 1");
}

float PostprocessConfig::tau(int cls) const {
    switch (cls) {
        case 0: return tau_tc;
        case 1: return tau_wt;
        case 2: return tau_et;
        default: throw ArgumentError("class index must be 0 (TC), 1 (WT) or 2 (ET)");
    }
}

int PostprocessConfig::gamma(int cls) const {
    switch (cls) {
        case 0: return gamma_tc;
        case 1: return gamma_wt;
        case 2: return gamma_et;
        default: throw ArgumentError("class index must be 0 (TC), 1 (WT) or 2 (ET)");
    }
}

float PostprocessConfig::eta(int cls) const {
    switch (cls) {
        case 0: return eta_tc;
        case 1: return eta_wt;
        case 2: return eta_et;
        default: throw ArgumentError("class index must be 0 (TC), 1 (WT) or 2 (ET)");
    }
}

PostprocessConfig PostprocessConfig::final_submission() {
    PostprocessConfig cfg;
    cfg.gamma_et = 30;
    return cfg;
}

PostprocessConfig PostprocessConfig::uniform_half() {
    PostprocessConfig cfg;
    cfg.tau_tc = cfg.tau_wt = cfg.tau_et = 0.5f;
    return cfg;
}

std::string PostprocessConfig::to_json() const {
    json j;
    j["tau_tc"] = tau_tc;
    j["tau_wt"] = tau_wt;
    j["tau_et"] = tau_et;
    j["gamma_tc"] = gamma_tc;
    j["gamma_wt"] = gamma_wt;
    j["gamma_et"] = gamma_et;
    j["eta_tc"] = eta_tc;
    j["eta_wt"] = eta_wt;
    j["eta_et"] = eta_et;
    j["max_components"] = max_components;
    return j.dump(2) + "\n";
}

PostprocessConfig PostprocessConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw FormatError("postprocess config: invalid JSON");
    PostprocessConfig cfg;
    cfg.tau_tc = j.value("tau_tc", cfg.tau_tc);
    cfg.tau_wt = j.value("tau_wt", cfg.tau_wt);
    cfg.tau_et = j.value("tau_et", cfg.tau_et);
    cfg.gamma_tc = j.value("gamma_tc", cfg.gamma_tc);
    cfg.gamma_wt = j.value("gamma_wt", cfg.gamma_wt);
    cfg.gamma_et = j.value("gamma_et", cfg.gamma_et);
    cfg.eta_tc = j.value("eta_tc", cfg.eta_tc);
    cfg.eta_wt = j.value("eta_wt", cfg.eta_wt);
    cfg.eta_et = j.value("eta_et", cfg.eta_et);
    cfg.max_components = j.value("max_components", cfg.max_components);
    cfg.validate();
    return cfg;
}

ComponentLabeling label_components_26(const BinaryMask& mask, const std::vector<float>* probs) {
    const auto& shape = mask.geometry.shape;
    const std::size_t n = mask.geometry.voxel_count();
    if (probs && probs->size() != n) throw ShapeError("probability channel size mismatch");

    ComponentLabeling out;
    out.labels.assign(n, 0);

    std::vector<std::size_t> stack;
    std::int32_t next_id = 0;

    for (std::size_t seed = 0; seed < n; ++seed) {
        if (!mask.voxels[seed] || out.labels[seed] != 0) continue;
        ++next_id;
        ComponentStats stats;
        stats.id = next_id;
        const int sx = static_cast<int>(seed % shape[0]);
        const int sy = static_cast<int>((seed / shape[0]) % shape[1]);
        const int sz = static_cast<int>(seed / (static_cast<std::size_t>(shape[0]) * shape[1]));
        stats.bbox = {sx, sy, sz, sx, sy, sz};

        double prob_sum = 0.0;
        stack.clear();
        stack.push_back(seed);
        out.labels[seed] = next_id;
        while (!stack.empty()) {
            const std::size_t cur = stack.back();
            stack.pop_back();
            ++stats.voxel_count;
            if (probs) prob_sum += (*probs)[cur];

            const int x = static_cast<int>(cur % shape[0]);
            const int y = static_cast<int>((cur / shape[0]) % shape[1]);
            const int z = static_cast<int>(cur / (static_cast<std::size_t>(shape[0]) * shape[1]));
            stats.bbox[0] = std::min(stats.bbox[0], x);
            stats.bbox[1] = std::min(stats.bbox[1], y);
            stats.bbox[2] = std::min(stats.bbox[2], z);
            stats.bbox[3] = std::max(stats.bbox[3], x);
            stats.bbox[4] = std::max(stats.bbox[4], y);
            stats.bbox[5] = std::max(stats.bbox[5], z);

            for (int dz = -1; dz <= 1; ++dz) {
                const int zz = z + dz;
                if (zz < 0 || zz >= shape[2]) continue;
                for (int dy = -1; dy <= 1; ++dy) {
                    const int yy = y + dy;
                    if (yy < 0 || yy >= shape[1]) continue;
                    for (int dx = -1; dx <= 1; ++dx) {
                        if (dx == 0 && dy == 0 && dz == 0) continue;
                        const int xx = x + dx;
                        if (xx < 0 || xx >= shape[0]) continue;
                        const std::size_t ni = mask.geometry.index(xx, yy, zz);
                        if (mask.voxels[ni] && out.labels[ni] == 0) {
                            out.labels[ni] = next_id;
                            stack.push_back(ni);
                        }
                    }
                }
            }
        }
        if (probs && stats.voxel_count > 0) {
            stats.mean_prob = prob_sum / static_cast<double>(stats.voxel_count);
        }
        out.stats.push_back(stats);
    }
    return out;
}

BinaryMask prune_components(const BinaryMask& mask, const std::vector<float>& probs_channel,
                            int gamma, float eta, int max_components) {
    const ComponentLabeling cc = label_components_26(mask, &probs_channel);

    std::vector<const ComponentStats*> passing;
    for (const auto& s : cc.stats) {
        if (s.voxel_count >= static_cast<std::size_t>(gamma) && s.mean_prob >= eta) {
            passing.push_back(&s);
        }
    }
    if (passing.size() > static_cast<std::size_t>(max_components)) {
        std::sort(passing.begin(), passing.end(), [](const ComponentStats* a, const ComponentStats* b) {
            if (a->voxel_count != b->voxel_count) return a->voxel_count > b->voxel_count;
            return a->id < b->id;  // scan-order tie break
        });
        passing.resize(max_components);
    }

    std::vector<std::uint8_t> keep(cc.stats.size() + 1, 0);
    for (const ComponentStats* s : passing) keep[s->id] = 1;

    BinaryMask out(mask.geometry);
    for (std::size_t i = 0; i < out.voxels.size(); ++i) {
        out.voxels[i] = keep[cc.labels[i]];
    }
    return out;
}

std::array<BinaryMask, 3> threshold_channels(const ProbMaps& probs, const PostprocessConfig& cfg) {
    cfg.validate();
    std::array<BinaryMask, 3> masks{BinaryMask(probs.geometry), BinaryMask(probs.geometry),
                                    BinaryMask(probs.geometry)};
    for (int cls = 0; cls < 3; ++cls) {
        const auto& channel = probs.channel(cls);
        const float tau = cfg.tau(cls);
        for (std::size_t i = 0; i < channel.size(); ++i) {
            masks[cls].voxels[i] = channel[i] >= tau ? 1 : 0;
        }
    }
    return masks;
}

std::array<BinaryMask, 3> enforce_hierarchy(const BinaryMask& et, const BinaryMask& tc,
                                            const BinaryMask& wt, const ProbMaps& probs,
                                            const PostprocessConfig& cfg) {
    check_same_grid(et.geometry, tc.geometry, "enforce_hierarchy");
    check_same_grid(et.geometry, wt.geometry, "enforce_hierarchy");
    check_same_grid(et.geometry, probs.geometry, "enforce_hierarchy");

    const BinaryMask tc_prop = mask_union(tc, et);
    const BinaryMask wt_prop = mask_union(wt, tc_prop);

    // Re-filter on the propagated supports, then re-union the surviving inner
    // masks: a literal re-application could drop a superset component that
    // still contains accepted ET/TC voxels.
    BinaryMask et_out = prune_components(et, probs.et, cfg.gamma_et, cfg.eta_et, cfg.max_components);
    BinaryMask tc_out = mask_union(
        prune_components(tc_prop, probs.tc, cfg.gamma_tc, cfg.eta_tc, cfg.max_components), et_out);
    BinaryMask wt_out = mask_union(
        prune_components(wt_prop, probs.wt, cfg.gamma_wt, cfg.eta_wt, cfg.max_components), tc_out);
    return {std::move(et_out), std::move(tc_out), std::move(wt_out)};
}

LabelMap fuse_labels(const BinaryMask& et, const BinaryMask& tc, const BinaryMask& wt) {
    check_same_grid(et.geometry, tc.geometry, "fuse_labels");
    check_same_grid(et.geometry, wt.geometry, "fuse_labels");
    LabelMap out(et.geometry);
    for (std::size_t i = 0; i < out.labels.size(); ++i) {
        if (et.voxels[i]) {
            out.labels[i] = 3;
        } else if (tc.voxels[i]) {
            out.labels[i] = 2;
        } else if (wt.voxels[i]) {
            out.labels[i] = 1;
        }
    }
    return out;
}

LabelMap postprocess_pipeline(const ProbMaps& probs, const PostprocessConfig& cfg) {
    cfg.validate();
    auto masks = threshold_channels(probs, cfg);
    BinaryMask tc = prune_components(masks[0], probs.tc, cfg.gamma_tc, cfg.eta_tc, cfg.max_components);
    BinaryMask wt = prune_components(masks[1], probs.wt, cfg.gamma_wt, cfg.eta_wt, cfg.max_components);
    BinaryMask et = prune_components(masks[2], probs.et, cfg.gamma_et, cfg.eta_et, cfg.max_components);
    auto nested = enforce_hierarchy(et, tc, wt, probs, cfg);
    return fuse_labels(nested[0], nested[1], nested[2]);
}

std::array<BinaryMask, 3> region_masks(const LabelMap& labels) {
    std::array<BinaryMask, 3> masks{BinaryMask(labels.geometry), BinaryMask(labels.geometry),
                                    BinaryMask(labels.geometry)};
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        const std::uint8_t v = labels.labels[i];
        if (v >= 2) masks[0].voxels[i] = 1;  // TC = {2,3}
        if (v >= 1) masks[1].voxels[i] = 1;  // WT = {1,2,3}
        if (v == 3) masks[2].voxels[i] = 1;  // ET = {3}
    }
    return masks;
}

}  // namespace emednext
