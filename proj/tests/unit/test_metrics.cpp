#include <doctest.h>

#include <cmath>

#include "emednext/error.hpp"
#include "emednext/metrics.hpp"
#include "support/oracles.hpp"
#include "support/test_rng.hpp"

using namespace emednext;
using namespace emednext::testing;

namespace {

GridGeometry grid(std::array<int, 3> shape, std::array<float, 3> spacing = {1.f, 1.f, 1.f}) {
    GridGeometry geom;
    geom.shape = shape;
    geom.spacing = spacing;
    return geom;
}

BinaryMask random_mask(const GridGeometry& geom, std::uint64_t seed, double density) {
    BinaryMask mask(geom);
    TestRng rng(seed);
    for (auto& v : mask.voxels) v = rng.bernoulli(density) ? 1 : 0;
    return mask;
}

void fill_box(BinaryMask& mask, std::array<int, 3> lo, std::array<int, 3> hi) {
    for (int z = lo[2]; z <= hi[2]; ++z) {
        for (int y = lo[1]; y <= hi[1]; ++y) {
            for (int x = lo[0]; x <= hi[0]; ++x) mask.set(x, y, z, 1);
        }
    }
}

}  // namespace

TEST_CASE("dice basics") {
    const GridGeometry geom = grid({8, 8, 8});
    BinaryMask a(geom), b(geom);
    SUBCASE("equal nonempty masks score 1") {
        fill_box(a, {1, 1, 1}, {4, 4, 4});
        CHECK(dice(a, a) == 1.0);
    }
    SUBCASE("disjoint nonempty masks score 0") {
        fill_box(a, {0, 0, 0}, {1, 1, 1});
        fill_box(b, {5, 5, 5}, {7, 7, 7});
        CHECK(dice(a, b) == 0.0);
    }
    SUBCASE("|P|=4, |G|=4, overlap 2 scores 0.5") {
        fill_box(a, {0, 0, 0}, {3, 0, 0});
        fill_box(b, {2, 0, 0}, {5, 0, 0});
        CHECK(dice(a, b) == 0.5);
    }
    SUBCASE("both empty scores 1 by convention") { CHECK(dice(a, b) == 1.0); }
    SUBCASE("symmetry") {
        fill_box(a, {0, 0, 0}, {3, 3, 3});
        fill_box(b, {2, 2, 2}, {6, 6, 6});
        CHECK(dice(a, b) == dice(b, a));
    }
}

TEST_CASE("squared distance transform is exact against brute force") {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
        const std::array<float, 3> spacing =
            seed % 2 ? std::array<float, 3>{1.f, 1.f, 1.f} : std::array<float, 3>{0.7f, 1.1f, 2.0f};
        const GridGeometry geom = grid({11, 9, 7}, spacing);
        BinaryMask sites = random_mask(geom, seed + 5, 0.08);
        if (sites.count() == 0) sites.set(3, 3, 3, 1);

        const auto ours = squared_distance_transform(sites, spacing);
        const auto ref = brute_force_sq_distances(sites, spacing);
        for (std::size_t i = 0; i < ours.size(); ++i) {
            CHECK(ours[i] == doctest::Approx(ref[i]).epsilon(1e-9));
        }
    }
}

TEST_CASE("surface voxels use 6-neighborhood exteriority") {
    const GridGeometry geom = grid({6, 6, 6});
    BinaryMask mask(geom);
    fill_box(mask, {1, 1, 1}, {4, 4, 4});
    const BinaryMask surf = surface_voxels(mask);
    CHECK(surf.at(1, 1, 1) == 1);   // corner of the cube
    CHECK(surf.at(2, 2, 1) == 1);   // face voxel
    CHECK(surf.at(2, 2, 2) == 0);   // interior
    CHECK(surf.at(0, 0, 0) == 0);   // background
    const auto ref = brute_force_surface(mask);
    CHECK(surf.voxels == ref);
}

TEST_CASE("nsd basics and empty-mask conventions") {
    const GridGeometry geom = grid({10, 10, 10});
    BinaryMask a(geom), b(geom);
    SUBCASE("pred equals gt scores 1") {
        fill_box(a, {2, 2, 2}, {6, 6, 6});
        CHECK(nsd(a, a, 1.0, geom.spacing) == 1.0);
    }
    SUBCASE("both empty -> 1, one empty -> 0") {
        CHECK(nsd(a, b, 1.0, geom.spacing) == 1.0);
        fill_box(b, {2, 2, 2}, {3, 3, 3});
        CHECK(nsd(a, b, 1.0, geom.spacing) == 0.0);
        CHECK(nsd(b, a, 1.0, geom.spacing) == 0.0);
    }
}

TEST_CASE("a cube shifted by one voxel has NSD 1.0 at 1.0 mm tolerance") {
    const GridGeometry geom = grid({12, 12, 12});
    BinaryMask a(geom), b(geom);
    fill_box(a, {2, 2, 2}, {6, 6, 6});
    fill_box(b, {3, 2, 2}, {7, 6, 6});  // +1 along x
    CHECK(nsd(a, b, 1.0, geom.spacing) == 1.0);

    const double at_half = nsd(a, b, 0.5, geom.spacing);
    const double ref = brute_force_nsd(a, b, 0.5, geom.spacing);
    CHECK(at_half == doctest::Approx(ref).epsilon(1e-9));
    CHECK(at_half < 1.0);
}

TEST_CASE("nsd matches the all-pairs oracle on random small masks") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const std::array<float, 3> spacing =
            seed % 2 ? std::array<float, 3>{1.f, 1.f, 1.f} : std::array<float, 3>{0.9f, 0.9f, 1.2f};
        const GridGeometry geom = grid({12, 10, 9}, spacing);
        BinaryMask a = random_mask(geom, seed * 3 + 1, 0.15);
        BinaryMask b = random_mask(geom, seed * 3 + 2, 0.15);
        if (a.count() == 0) a.set(1, 1, 1, 1);
        if (b.count() == 0) b.set(2, 2, 2, 1);
        for (double tol : {0.5, 1.0, 1.7}) {
            CHECK(nsd(a, b, tol, spacing) ==
                  doctest::Approx(brute_force_nsd(a, b, tol, spacing)).epsilon(1e-6));
        }
    }
}

TEST_CASE("nsd is monotone non-decreasing in the tolerance") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const GridGeometry geom = grid({14, 12, 10});
        BinaryMask a = random_mask(geom, seed + 11, 0.12);
        BinaryMask b = random_mask(geom, seed + 55, 0.12);
        if (a.count() == 0) a.set(1, 1, 1, 1);
        if (b.count() == 0) b.set(2, 2, 2, 1);
        double prev = -1.0;
        for (double tol : {0.3, 0.5, 0.8, 1.0, 1.5, 2.5}) {
            const double v = nsd(a, b, tol, geom.spacing);
            CHECK(v >= prev);
            prev = v;
        }
    }
}

TEST_CASE("nsd is symmetric") {
    const GridGeometry geom = grid({10, 10, 8});
    BinaryMask a = random_mask(geom, 31, 0.2);
    BinaryMask b = random_mask(geom, 32, 0.2);
    a.set(0, 0, 0, 1);
    b.set(9, 9, 7, 1);
    CHECK(nsd(a, b, 1.0, geom.spacing) == nsd(b, a, 1.0, geom.spacing));
}

TEST_CASE("lesionwise scoring") {
    const GridGeometry geom = grid({20, 20, 8});
    const LesionwiseConfig cfg;

    SUBCASE("single lesion, perfect prediction") {
        BinaryMask gt(geom);
        fill_box(gt, {4, 4, 2}, {8, 8, 5});
        CHECK(lesionwise(gt, gt, LesionMetric::dice, cfg, geom.spacing) == 1.0);
        CHECK(lesionwise(gt, gt, LesionMetric::nsd, cfg, geom.spacing) == 1.0);
    }
    SUBCASE("one perfect lesion plus one false positive scores 0.5") {
        BinaryMask gt(geom), pred(geom);
        fill_box(gt, {4, 4, 2}, {8, 8, 5});
        fill_box(pred, {4, 4, 2}, {8, 8, 5});
        fill_box(pred, {15, 15, 2}, {17, 17, 4});  // far from the lesion
        CHECK(lesionwise(pred, gt, LesionMetric::dice, cfg, geom.spacing) == 0.5);
    }
    SUBCASE("two lesions, one perfect and one missed, scores 0.5") {
        BinaryMask gt(geom), pred(geom);
        fill_box(gt, {2, 2, 2}, {5, 5, 4});
        fill_box(gt, {14, 14, 2}, {17, 17, 4});
        fill_box(pred, {2, 2, 2}, {5, 5, 4});
        // hand enumeration: scores {1 (matched perfect), 0 (missed)} -> 0.5
        CHECK(lesionwise(pred, gt, LesionMetric::dice, cfg, geom.spacing) == 0.5);
    }
    SUBCASE("both empty scores 1; empty gt with predictions scores 0") {
        BinaryMask gt(geom), pred(geom);
        CHECK(lesionwise(pred, gt, LesionMetric::dice, cfg, geom.spacing) == 1.0);
        fill_box(pred, {2, 2, 2}, {4, 4, 4});
        CHECK(lesionwise(pred, gt, LesionMetric::dice, cfg, geom.spacing) == 0.0);
    }
    SUBCASE("matching respects the dilation radius") {
        // prediction = the lesion itself plus a separate fragment; if the
        // fragment lies within the dilated lesion it joins the match (one
        // score), otherwise it counts as a false positive (extra zero).
        BinaryMask gt(geom);
        fill_box(gt, {5, 5, 3}, {7, 7, 5});

        BinaryMask with_near = gt;
        fill_box(with_near, {8, 8, 6}, {9, 9, 7});  // corner-adjacent: matched
        const double near_score = lesionwise(with_near, gt, LesionMetric::dice, cfg, geom.spacing);
        CHECK(near_score > 0.6);   // one slightly-diluted dice score
        CHECK(near_score < 1.0);

        BinaryMask with_far = gt;
        fill_box(with_far, {11, 11, 2}, {12, 12, 3});  // beyond the dilation: FP
        const double far_score = lesionwise(with_far, gt, LesionMetric::dice, cfg, geom.spacing);
        CHECK(far_score == 0.5);  // mean of {1.0, 0.0}
    }
    SUBCASE("lesion-wise is not symmetric in general") {
        BinaryMask gt(geom), pred(geom);
        // one gt lesion, predicted as two fragments both touching it
        fill_box(gt, {4, 4, 2}, {11, 6, 4});
        fill_box(pred, {4, 4, 2}, {6, 6, 4});
        fill_box(pred, {9, 4, 2}, {11, 6, 4});  // separated from the first fragment
        const double forward = lesionwise(pred, gt, LesionMetric::dice, cfg, geom.spacing);
        const double backward = lesionwise(gt, pred, LesionMetric::dice, cfg, geom.spacing);
        CHECK(forward != backward);
    }
}

TEST_CASE("evaluate_case on identical maps returns all ones") {
    const GridGeometry geom = grid({16, 16, 12});
    LabelMap labels(geom);
    for (int z = 3; z < 9; ++z) {
        for (int y = 3; y < 9; ++y) {
            for (int x = 3; x < 9; ++x) {
                const int r = std::max({std::abs(x - 6), std::abs(y - 6), std::abs(z - 6)});
                labels.at(x, y, z) = r <= 1 ? 3 : r <= 2 ? 2 : 1;
            }
        }
    }
    const CaseMetrics row = evaluate_case(labels, labels, {}, "self");
    for (const auto& m : row.per_class) {
        CHECK(m.dice == 1.0);
        CHECK(m.nsd05 == 1.0);
        CHECK(m.nsd10 == 1.0);
        CHECK(m.lw_dice == 1.0);
        CHECK(m.lw_nsd05 == 1.0);
        CHECK(m.lw_nsd10 == 1.0);
    }
}

TEST_CASE("evaluate_case with empty prediction against nonempty gt is all zeros") {
    const GridGeometry geom = grid({12, 12, 12});
    LabelMap pred(geom), gt(geom);
    for (int z = 4; z < 8; ++z) {
        for (int y = 4; y < 8; ++y) {
            for (int x = 4; x < 8; ++x) gt.at(x, y, z) = 2;
        }
    }
    const CaseMetrics row = evaluate_case(pred, gt, {}, "empty");
    // gt has TC and WT content (label 2), no ET: ET is empty in both -> 1.0
    CHECK(row.per_class[0].dice == 0.0);  // wt
    CHECK(row.per_class[1].dice == 0.0);  // tc
    CHECK(row.per_class[2].dice == 1.0);  // et empty/empty
    CHECK(row.per_class[0].nsd05 == 0.0);
    CHECK(row.per_class[0].lw_dice == 0.0);
}

TEST_CASE("dice and nsd reject mismatched grids") {
    BinaryMask a(grid({4, 4, 4}));
    BinaryMask b(grid({5, 4, 4}));
    CHECK_THROWS_AS(dice(a, b), ShapeError);
    CHECK_THROWS_AS(nsd(a, b, 1.0, {1.f, 1.f, 1.f}), ShapeError);
    BinaryMask c(grid({4, 4, 4}, {2.f, 1.f, 1.f}));  // same shape, different spacing
    CHECK_THROWS_AS(nsd(a, c, 1.0, {1.f, 1.f, 1.f}), ShapeError);
}

TEST_CASE("evaluate_case rejects mismatched grids and bad labels") {
    LabelMap a(grid({4, 4, 4}));
    LabelMap b(grid({5, 4, 4}));
    CHECK_THROWS_AS(evaluate_case(a, b), ShapeError);

    LabelMap bad(grid({4, 4, 4}));
    bad.labels[0] = 7;
    LabelMap ok(grid({4, 4, 4}));
    CHECK_THROWS_AS(evaluate_case(bad, ok), ArgumentError);
}

TEST_CASE("region masks derived from labels are nested by construction") {
    const GridGeometry geom = grid({6, 6, 6});
    LabelMap labels(geom);
    TestRng rng(71);
    for (auto& v : labels.labels) v = static_cast<std::uint8_t>(rng.uniform_int(0, 3));
    const auto masks = region_masks(labels);  // tc, wt, et
    for (std::size_t i = 0; i < labels.labels.size(); ++i) {
        CHECK(masks[2].voxels[i] <= masks[0].voxels[i]);  // et within tc
        CHECK(masks[0].voxels[i] <= masks[1].voxels[i]);  // tc within wt
    }
}

TEST_CASE("reports serialize to JSON and CSV with cohort means") {
    CaseMetrics a;
    a.case_id = "case-a";
    for (auto& m : a.per_class) m = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    CaseMetrics b;
    b.case_id = "case-b";
    for (auto& m : b.per_class) m = {0.5, 0.0, 0.0, 0.5, 0.0, 0.0};

    const CohortReport report = aggregate_cohort({a, b});
    CHECK(report.means[0].dice == doctest::Approx(0.75));
    CHECK(report.means[2].lw_dice == doctest::Approx(0.75));

    const std::string csv = report_to_csv(report);
    CHECK(csv.find("case_id,class,dice,nsd05,nsd10,lw_dice,lw_nsd05,lw_nsd10") == 0);
    CHECK(csv.find("case-a,wt,") != std::string::npos);
    CHECK(csv.find("case-b,et,") != std::string::npos);
    CHECK(csv.find("cohort_mean,tc,") != std::string::npos);

    const std::string json_text = report_to_json(report);
    CHECK(json_text.find("\"cohort_means\"") != std::string::npos);
    CHECK(json_text.find("\"case-a\"") != std::string::npos);
}
