#pragma once

#include <array>
#include <string>
#include <vector>

#include "emednext/postprocess.hpp"
#include "emednext/volume.hpp"

namespace emednext {

/// Surface voxels: mask voxels with at least one 6-neighbor outside the mask
/// (grid borders count as outside).
BinaryMask surface_voxels(const BinaryMask& mask);

/// Exact squared Euclidean distance (mm^2, center to center) from every voxel
/// to the nearest set voxel of `sites`, via the separable lower-envelope
/// transform. Voxels with no site anywhere keep a huge sentinel value.
std::vector<double> squared_distance_transform(const BinaryMask& sites,
                                               const std::array<float, 3>& spacing);

/// 2|P and G| / (|P| + |G|); 1.0 when both masks are empty.
double dice(const BinaryMask& pred, const BinaryMask& gt);

/// Normalized surface dice at a distance tolerance in mm. Both empty -> 1.0,
/// exactly one empty -> 0.0.
double nsd(const BinaryMask& pred, const BinaryMask& gt, double tolerance_mm,
           const std::array<float, 3>& spacing);

enum class LesionMetric { dice, nsd };

struct LesionwiseConfig {
    int dilation_vox = 1;        // Chebyshev (26-neighborhood) dilation radius for matching
    double tolerance_mm = 1.0;   // used by the NSD variant
};

/// Lesion-wise scoring: ground-truth lesions are 26-components; a predicted
/// component matches a lesion when it touches the lesion dilated by
/// dilation_vox. Each lesion scores the metric between the union of its
/// matched components and itself; unmatched lesions and unmatched predicted
/// components each add a zero. Result is the mean of all scores.
double lesionwise(const BinaryMask& pred, const BinaryMask& gt, LesionMetric metric,
                  const LesionwiseConfig& cfg, const std::array<float, 3>& spacing);

struct ClassMetrics {
    double dice = 0.0;
    double nsd05 = 0.0;
    double nsd10 = 0.0;
    double lw_dice = 0.0;
    double lw_nsd05 = 0.0;
    double lw_nsd10 = 0.0;
};

// Report class order, matching the region nesting from outermost in.
inline constexpr std::array<const char*, 3> kReportClasses = {"wt", "tc", "et"};

struct CaseMetrics {
    std::string case_id;
    std::array<ClassMetrics, 3> per_class;  // wt, tc, et
};

struct CohortReport {
    std::vector<CaseMetrics> cases;
    std::array<ClassMetrics, 3> means;
};

/// All six metrics per region class for one prediction/ground-truth pair on
/// the same grid.
CaseMetrics evaluate_case(const LabelMap& pred, const LabelMap& gt,
                          const LesionwiseConfig& lw_cfg = {}, const std::string& case_id = {});

CohortReport aggregate_cohort(std::vector<CaseMetrics> cases);

std::string report_to_json(const CohortReport& report);
std::string report_to_csv(const CohortReport& report);

}  // namespace emednext
