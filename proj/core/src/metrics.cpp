#include "emednext/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "emednext/error.hpp"

namespace emednext {
namespace {

using nlohmann::json;

constexpr double kFar = 1e20;  // sentinel for "no site on this grid"

void check_geometry(const GridGeometry& a, const GridGeometry& b) {
    if (a.shape != b.shape || a.spacing != b.spacing) {
        throw ShapeError("metric inputs must share shape and spacing");
    }
}

// 1D lower-envelope squared distance transform with sample positions i*s.
void edt_1d(const double* f, int n, double s, double* out, int* v, double* z) {
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        const double qs = q * s;
        double sep;
        for (;;) {
            const double vs = v[k] * s;
            sep = ((f[q] + qs * qs) - (f[v[k]] + vs * vs)) / (2.0 * qs - 2.0 * vs);
            if (sep > z[k]) break;
            --k;
        }
        ++k;
        v[k] = q;
        z[k] = sep;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        const double qs = q * s;
        while (z[k + 1] < qs) ++k;
        const double d = qs - v[k] * s;
        out[q] = d * d + f[v[k]];
    }
}

}  // namespace

BinaryMask surface_voxels(const BinaryMask& mask) {
    const auto& shape = mask.geometry.shape;
    BinaryMask out(mask.geometry);
    for (int z = 0; z < shape[2]; ++z) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int x = 0; x < shape[0]; ++x) {
                if (!mask.at(x, y, z)) continue;
                const bool boundary =
                    x == 0 || !mask.at(x - 1, y, z) || x == shape[0] - 1 || !mask.at(x + 1, y, z) ||
                    y == 0 || !mask.at(x, y - 1, z) || y == shape[1] - 1 || !mask.at(x, y + 1, z) ||
                    z == 0 || !mask.at(x, y, z - 1) || z == shape[2] - 1 || !mask.at(x, y, z + 1);
                if (boundary) out.set(x, y, z, 1);
            }
        }
    }
    return out;
}

std::vector<double> squared_distance_transform(const BinaryMask& sites,
                                               const std::array<float, 3>& spacing) {
    const auto& shape = sites.geometry.shape;
    const std::size_t n = sites.geometry.voxel_count();
    std::vector<double> dist(n);
    for (std::size_t i = 0; i < n; ++i) dist[i] = sites.voxels[i] ? 0.0 : kFar;

    const int max_n = std::max({shape[0], shape[1], shape[2]});
    std::vector<double> f(max_n), out(max_n), z(max_n + 1);
    std::vector<int> v(max_n);

    // x pass
    for (int zz = 0; zz < shape[2]; ++zz) {
        for (int yy = 0; yy < shape[1]; ++yy) {
            const std::size_t base = sites.geometry.index(0, yy, zz);
            for (int x = 0; x < shape[0]; ++x) f[x] = dist[base + x];
            edt_1d(f.data(), shape[0], spacing[0], out.data(), v.data(), z.data());
            for (int x = 0; x < shape[0]; ++x) dist[base + x] = out[x];
        }
    }
    // y pass
    for (int zz = 0; zz < shape[2]; ++zz) {
        for (int x = 0; x < shape[0]; ++x) {
            const std::size_t base = sites.geometry.index(x, 0, zz);
            for (int y = 0; y < shape[1]; ++y) f[y] = dist[base + static_cast<std::size_t>(y) * shape[0]];
            edt_1d(f.data(), shape[1], spacing[1], out.data(), v.data(), z.data());
            for (int y = 0; y < shape[1]; ++y) dist[base + static_cast<std::size_t>(y) * shape[0]] = out[y];
        }
    }
    // z pass
    const std::size_t plane = static_cast<std::size_t>(shape[0]) * shape[1];
    for (int yy = 0; yy < shape[1]; ++yy) {
        for (int x = 0; x < shape[0]; ++x) {
            const std::size_t base = sites.geometry.index(x, yy, 0);
            for (int zz = 0; zz < shape[2]; ++zz) f[zz] = dist[base + static_cast<std::size_t>(zz) * plane];
            edt_1d(f.data(), shape[2], spacing[2], out.data(), v.data(), z.data());
            for (int zz = 0; zz < shape[2]; ++zz) dist[base + static_cast<std::size_t>(zz) * plane] = out[zz];
        }
    }
    return dist;
}

double dice(const BinaryMask& pred, const BinaryMask& gt) {
    check_geometry(pred.geometry, gt.geometry);
    std::size_t inter = 0, p = 0, g = 0;
    for (std::size_t i = 0; i < pred.voxels.size(); ++i) {
        p += pred.voxels[i];
        g += gt.voxels[i];
        inter += pred.voxels[i] & gt.voxels[i];
    }
    if (p + g == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(p + g);
}

double nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm,
           const std::array<float, 3>& spacing) {
    check_geometry(pred.geometry, gt.geometry);
    if (!(tolerance_mm > 0.0)) throw ArgumentError("NSD tolerance must be positive");
    const std::size_t np = pred.count(), ng = gt.count();
    if (np == 0 && ng == 0) return 1.0;
    if (np == 0 || ng == 0) return 0.0;

    const BinaryMask sp = surface_voxels(pred);
    const BinaryMask sg = surface_voxels(gt);
    const std::vector<double> dist_to_gt = squared_distance_transform(sg, spacing);
    const std::vector<double> dist_to_pred = squared_distance_transform(sp, spacing);

    const double tol_sq = tolerance_mm * tolerance_mm;
    std::size_t surf_p = 0, surf_g = 0, close_p = 0, close_g = 0;
    for (std::size_t i = 0; i < sp.voxels.size(); ++i) {
        if (sp.voxels[i]) {
            ++surf_p;
            if (dist_to_gt[i] <= tol_sq) ++close_p;
        }
        if (sg.voxels[i]) {
            ++surf_g;
            if (dist_to_pred[i] <= tol_sq) ++close_g;
        }
    }
    return static_cast<double>(close_p + close_g) / static_cast<double>(surf_p + surf_g);
}

namespace {

double component_metric(const BinaryMask& pred_union, const BinaryMask& lesion, LesionMetric metric,
                        const LesionwiseConfig& cfg, const std::array<float, 3>& spacing) {
    return metric == LesionMetric::dice ? dice(pred_union, lesion)
                                        : nsd(pred_union, lesion, cfg.tolerance_mm, spacing);
}

}  // namespace

double lesionwise(const BinaryMask& pred, const BinaryMask& gt, LesionMetric metric,
                  const LesionwiseConfig& cfg, const std::array<float, 3>& spacing) {
    check_geometry(pred.geometry, gt.geometry);
    if (cfg.dilation_vox < 0) throw ArgumentError("lesion dilation must be >= 0");

    const ComponentLabeling cc_gt = label_components_26(gt);
    const ComponentLabeling cc_pred = label_components_26(pred);
    if (cc_gt.stats.empty() && cc_pred.stats.empty()) return 1.0;

    const auto& shape = gt.geometry.shape;
    const int r = cfg.dilation_vox;

    // matched[gt_id][pred_id], 1-based ids
    std::vector<std::vector<std::uint8_t>> matched(
        cc_gt.stats.size() + 1, std::vector<std::uint8_t>(cc_pred.stats.size() + 1, 0));
    std::vector<std::uint8_t> pred_matched(cc_pred.stats.size() + 1, 0);

    std::size_t i = 0;
    for (int z = 0; z < shape[2]; ++z) {
        for (int y = 0; y < shape[1]; ++y) {
            for (int x = 0; x < shape[0]; ++x, ++i) {
                const std::int32_t g = cc_gt.labels[i];
                if (g == 0) continue;
                // Chebyshev ball of radius r around each lesion voxel.
                for (int dz = -r; dz <= r; ++dz) {
                    const int zz = z + dz;
                    if (zz < 0 || zz >= shape[2]) continue;
                    for (int dy = -r; dy <= r; ++dy) {
                        const int yy = y + dy;
                        if (yy < 0 || yy >= shape[1]) continue;
                        for (int dx = -r; dx <= r; ++dx) {
                            const int xx = x + dx;
                            if (xx < 0 || xx >= shape[0]) continue;
                            const std::int32_t p = cc_pred.labels[gt.geometry.index(xx, yy, zz)];
                            if (p != 0) {
                                matched[g][p] = 1;
                                pred_matched[p] = 1;
                            }
                        }
                    }
                }
            }
        }
    }

    double score_sum = 0.0;
    std::size_t score_count = 0;

    for (std::size_t g = 1; g <= cc_gt.stats.size(); ++g) {
        bool any = false;
        for (std::size_t p = 1; p <= cc_pred.stats.size(); ++p) any = any || matched[g][p];
        ++score_count;
        if (!any) continue;  // missed lesion scores zero

        BinaryMask lesion(gt.geometry), pred_union(gt.geometry);
        for (std::size_t idx = 0; idx < cc_gt.labels.size(); ++idx) {
            if (cc_gt.labels[idx] == static_cast<std::int32_t>(g)) lesion.voxels[idx] = 1;
            const std::int32_t p = cc_pred.labels[idx];
            if (p != 0 && matched[g][p]) pred_union.voxels[idx] = 1;
        }
        score_sum += component_metric(pred_union, lesion, metric, cfg, spacing);
    }

    // false-positive components each add a zero score
    for (std::size_t p = 1; p <= cc_pred.stats.size(); ++p) {
        if (!pred_matched[p]) ++score_count;
    }

    return score_count == 0 ? 1.0 : score_sum / static_cast<double>(score_count);
}

CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt, const LesionwiseConfig& lw_cfg,
                          const std::string& case_id) {
    pred.validate();
    gt.validate();
    check_geometry(pred.geometry, gt.geometry);
    const auto& spacing = gt.geometry.spacing;

    const auto pred_masks = region_masks(pred);  // tc, wt, et
    const auto gt_masks = region_masks(gt);

    CaseMetrics row;
    row.case_id = case_id;
    // report order wt, tc, et; region_masks order is tc, wt, et
    const int region_of_report[3] = {1, 0, 2};
    for (int k = 0; k < 3; ++k) {
        const int r = region_of_report[k];
        const BinaryMask& p = pred_masks[r];
        const BinaryMask& g = gt_masks[r];
        ClassMetrics& m = row.per_class[k];
        m.dice = dice(p, g);
        m.nsd05 = nsd(p, g, 0.5, spacing);
        m.nsd10 = nsd(p, g, 1.0, spacing);
        LesionwiseConfig c05 = lw_cfg;
        c05.tolerance_mm = 0.5;
        LesionwiseConfig c10 = lw_cfg;
        c10.tolerance_mm = 1.0;
        m.lw_dice = lesionwise(p, g, LesionMetric::dice, lw_cfg, spacing);
        m.lw_nsd05 = lesionwise(p, g, LesionMetric::nsd, c05, spacing);
        m.lw_nsd10 = lesionwise(p, g, LesionMetric::nsd, c10, spacing);
    }
    return row;
}

CohortReport aggregate_cohort(std::vector<CaseMetrics> cases) {
    CohortReport report;
    report.cases = std::move(cases);
    if (report.cases.empty()) return report;
    for (int k = 0; k < 3; ++k) {
        ClassMetrics& m = report.means[k];
        for (const auto& c : report.cases) {
            m.dice += c.per_class[k].dice;
            m.nsd05 += c.per_class[k].nsd05;
            m.nsd10 += c.per_class[k].nsd10;
            m.lw_dice += c.per_class[k].lw_dice;
            m.lw_nsd05 += c.per_class[k].lw_nsd05;
            m.lw_nsd10 += c.per_class[k].lw_nsd10;
        }
        const double n = static_cast<double>(report.cases.size());
        m.dice /= n;
        m.nsd05 /= n;
        m.nsd10 /= n;
        m.lw_dice /= n;
        m.lw_nsd05 /= n;
        m.lw_nsd10 /= n;
    }
    return report;
}

namespace {

json class_metrics_to_json(const ClassMetrics& m) {
    return json{{"dice", m.dice},       {"nsd05", m.nsd05},       {"nsd10", m.nsd10},
                {"lw_dice", m.lw_dice}, {"lw_nsd05", m.lw_nsd05}, {"lw_nsd10", m.lw_nsd10}};
}

}  // namespace

std::string report_to_json(const CohortReport& report) {
    json j;
    j["cases"] = json::array();
    for (const auto& c : report.cases) {
        json row;
        row["case_id"] = c.case_id;
        for (int k = 0; k < 3; ++k) row[kReportClasses[k]] = class_metrics_to_json(c.per_class[k]);
        j["cases"].push_back(std::move(row));
    }
    for (int k = 0; k < 3; ++k) {
        j["cohort_means"][kReportClasses[k]] = class_metrics_to_json(report.means[k]);
    }
    return j.dump(2) + "\n";
}

std::string report_to_csv(const CohortReport& report) {
    std::ostringstream os;
    os << "case_id,class,dice,nsd05,nsd10,lw_dice,lw_nsd05,lw_nsd10\n";
    os.precision(9);
    auto emit = [&os](const std::string& id, const char* cls, const ClassMetrics& m) {
        os << id << ',' << cls << ',' << m.dice << ',' << m.nsd05 << ',' << m.nsd10 << ','
           << m.lw_dice << ',' << m.lw_nsd05 << ',' << m.lw_nsd10 << '\n';
    };
    for (const auto& c : report.cases) {
        for (int k = 0; k < 3; ++k) emit(c.case_id, kReportClasses[k], c.per_class[k]);
    }
    for (int k = 0; k < 3; ++k) emit("cohort_mean", kReportClasses[k], report.means[k]);
    return os.str();
}

}  // namespace emednext
