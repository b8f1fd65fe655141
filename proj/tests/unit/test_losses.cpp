#include <doctest.h>

#include <cmath>

#include "emednext/error.hpp"
#include "emednext/losses.hpp"
#include "support/oracles.hpp"
#include "support/test_rng.hpp"

using namespace emednext;
using namespace emednext::testing;

namespace {

Tensor random_probs(int channels, std::array<int, 3> extent, std::uint64_t seed) {
    Tensor t(channels, extent);
    TestRng rng(seed);
    for (float& v : t.values) v = static_cast<float>(rng.uniform(0.05, 0.95));
    return t;
}

Tensor random_binary(int channels, std::array<int, 3> extent, std::uint64_t seed, double p = 0.4) {
    Tensor t(channels, extent);
    TestRng rng(seed);
    for (float& v : t.values) v = rng.bernoulli(p) ? 1.f : 0.f;
    return t;
}

}  // namespace

TEST_CASE("dice_focal is ~0 for a perfect prediction") {
    Tensor g = random_binary(3, {6, 6, 6}, 1);
    LossInputs in{g, g};
    const double loss = dice_focal(in, LossConfig{});
    CHECK(loss >= 0.0);
    CHECK(loss < 2e-5);  // only the smooth term and the log clamp remain
}

TEST_CASE("dice_focal single-voxel closed forms") {
    // p = 0.5 against g = 1 on one voxel: focal = (1-0.5)^2 * -log(0.5),
    // dice = (2*0.5+s)/(0.5+1+s).
    Tensor p(1, {1, 1, 1}), g(1, {1, 1, 1});
    p.values[0] = 0.5f;
    g.values[0] = 1.f;
    LossConfig cfg;
    const double focal = 0.25 * -std::log(0.5);
    const double dice_term = 1.0 - (2.0 * 0.5 + cfg.dice_smooth) / (0.5 + 1.0 + cfg.dice_smooth);
    CHECK(dice_focal({p, g}, cfg) == doctest::Approx(focal + dice_term).epsilon(1e-9));
}

TEST_CASE("dice_focal on an inverted voxel pair matches the hand formula") {
    // Two voxels, p = 1-g: per channel sum_pg = 0, sum_p = 1, sum_g = 1.
    Tensor p(1, {2, 1, 1}), g(1, {2, 1, 1});
    g.values = {1.f, 0.f};
    p.values = {0.f, 1.f};
    LossConfig cfg;
    const double s = cfg.dice_smooth;
    const double dice_term = 1.0 - s / (2.0 + s);
    // focal on clamped probabilities: each voxel contributes (1-eps)^2*-log(eps)
    const double eps = 1e-7;
    const double focal = std::pow(1.0 - eps, 2.0) * -std::log(eps);
    CHECK(dice_focal({p, g}, cfg) == doctest::Approx(dice_term + focal).epsilon(1e-6));
}

TEST_CASE("sobel of a constant volume is identically zero") {
    Tensor x(1, {5, 5, 5});
    std::fill(x.values.begin(), x.values.end(), 3.7f);
    const auto grads = sobel_gradient_3d(x);
    for (const auto& g : grads) {
        for (float v : g.values) CHECK(v == 0.f);
    }
}

TEST_CASE("sobel of the ramp f=x gives 32 inside and 0 across") {
    Tensor x(1, {7, 7, 7});
    for (int z = 0; z < 7; ++z) {
        for (int y = 0; y < 7; ++y) {
            for (int xx = 0; xx < 7; ++xx) x.at(0, xx, y, z) = static_cast<float>(xx);
        }
    }
    const auto grads = sobel_gradient_3d(x);
    CHECK(grads[0].at(0, 3, 3, 3) == 32.f);  // 2 * (1+2+1) * (1+2+1)
    CHECK(grads[1].at(0, 3, 3, 3) == 0.f);
    CHECK(grads[2].at(0, 3, 3, 3) == 0.f);
}

TEST_CASE("sobel mirror symmetry along the derivative axis") {
    Tensor x(1, {6, 5, 5});
    TestRng rng(9);
    for (float& v : x.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    Tensor mirrored(1, x.extent);
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 5; ++y) {
            for (int xx = 0; xx < 6; ++xx) mirrored.at(0, xx, y, z) = x.at(0, 5 - xx, y, z);
        }
    }
    const auto g = sobel_gradient_3d(x);
    const auto gm = sobel_gradient_3d(mirrored);
    for (int z = 0; z < 5; ++z) {
        for (int y = 0; y < 5; ++y) {
            for (int xx = 0; xx < 6; ++xx) {
                CHECK(gm[0].at(0, xx, y, z) == doctest::Approx(-g[0].at(0, 5 - xx, y, z)));
                CHECK(gm[1].at(0, xx, y, z) == doctest::Approx(g[1].at(0, 5 - xx, y, z)));
                CHECK(gm[2].at(0, xx, y, z) == doctest::Approx(g[2].at(0, 5 - xx, y, z)));
            }
        }
    }
}

TEST_CASE("sobel rejects too-small volumes") {
    Tensor x(1, {2, 5, 5});
    CHECK_THROWS_AS(sobel_gradient_3d(x), ArgumentError);
}

TEST_CASE("boundary_loss is zero iff gradients agree") {
    Tensor g = random_binary(2, {5, 5, 5}, 3);
    CHECK(boundary_loss({g, g}) == 0.0);
}

TEST_CASE("boundary_loss equals a direct kernel-sum evaluation on a shifted cube") {
    Tensor g(1, {8, 8, 8}), p(1, {8, 8, 8});
    for (int z = 2; z < 5; ++z) {
        for (int y = 2; y < 5; ++y) {
            for (int x = 2; x < 5; ++x) {
                g.at(0, x, y, z) = 1.f;
                p.at(0, x + 1, y, z) = 1.f;  // shifted one voxel along x
            }
        }
    }
    const double ours = boundary_loss({p, g});

    // direct evaluation with its own correlation loops (edge-replicated)
    static const int dw[3] = {-1, 0, 1};
    static const int sw[3] = {1, 2, 1};
    auto clamp8 = [](int i) { return i < 0 ? 0 : (i > 7 ? 7 : i); };
    double direct = 0.0;
    for (int axis = 0; axis < 3; ++axis) {
        double acc = 0.0;
        for (int z = 0; z < 8; ++z) {
            for (int y = 0; y < 8; ++y) {
                for (int x = 0; x < 8; ++x) {
                    double sp = 0.0, sg = 0.0;
                    for (int dz = -1; dz <= 1; ++dz) {
                        for (int dy = -1; dy <= 1; ++dy) {
                            for (int dx = -1; dx <= 1; ++dx) {
                                const int xx = clamp8(x + dx), yy = clamp8(y + dy), zz = clamp8(z + dz);
                                const int off[3] = {dx, dy, dz};
                                double w = 1.0;
                                for (int a = 0; a < 3; ++a) w *= a == axis ? dw[off[a] + 1] : sw[off[a] + 1];
                                sp += w * p.at(0, xx, yy, zz);
                                sg += w * g.at(0, xx, yy, zz);
                            }
                        }
                    }
                    acc += (sp - sg) * (sp - sg);
                }
            }
        }
        direct += acc / 512.0;
    }
    CHECK(ours == doctest::Approx(direct).epsilon(1e-9));
}

TEST_CASE("boundary_loss scales quadratically with the residual") {
    Tensor g(1, {6, 6, 6});
    Tensor d(1, {6, 6, 6});
    TestRng rng(12);
    for (std::size_t i = 0; i < g.values.size(); ++i) {
        g.values[i] = rng.bernoulli(0.3) ? 1.f : 0.f;
        d.values[i] = static_cast<float>(rng.uniform(0.0, 0.2));
    }
    // exact residual doubling: p = g + r and p = g + 2r, kept inside [0,1]
    Tensor r(1, {6, 6, 6});
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        r.values[i] = g.values[i] == 0.f ? 0.25f * d.values[i] : -0.25f * d.values[i];
    }
    Tensor q1 = g, q2 = g;
    for (std::size_t i = 0; i < r.values.size(); ++i) {
        q1.values[i] = g.values[i] + r.values[i];
        q2.values[i] = g.values[i] + 2.f * r.values[i];
    }
    const double l1 = boundary_loss({q1, g});
    const double l2 = boundary_loss({q2, g});
    CHECK(l2 == doctest::Approx(4.0 * l1).epsilon(1e-4));
}

TEST_CASE("sobel kills constants: shifting p and g together changes nothing") {
    Tensor a(1, {5, 5, 5}), b(1, {5, 5, 5});
    TestRng rng(14);
    for (std::size_t i = 0; i < a.values.size(); ++i) {
        a.values[i] = static_cast<float>(rng.uniform(0.1, 0.4));
        b.values[i] = a.values[i] + 0.3f;
    }
    const auto ga = sobel_gradient_3d(a);
    const auto gb = sobel_gradient_3d(b);
    for (int axis = 0; axis < 3; ++axis) {
        for (std::size_t i = 0; i < ga[axis].values.size(); ++i) {
            CHECK(gb[axis].values[i] == doctest::Approx(ga[axis].values[i]).epsilon(1e-4));
        }
    }
}

TEST_CASE("total_loss with a single output equals dice_focal + 0.5*boundary") {
    Tensor logits(2, {6, 6, 6});
    Tensor g = random_binary(2, {6, 6, 6}, 15);
    TestRng rng(16);
    for (float& v : logits.values) v = static_cast<float>(rng.uniform(-2.0, 2.0));

    LossConfig cfg;
    const double total = total_loss({logits}, g, cfg);
    const Tensor p = sigmoid(logits);
    const double expect = dice_focal({p, g}, cfg) + 0.5 * boundary_loss({p, g});
    CHECK(total == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("total_loss of perfect outputs at four levels is ~0") {
    Tensor g = random_binary(3, {16, 16, 8}, 17, 0.3);
    std::vector<Tensor> logits;
    for (int level = 0; level < 4; ++level) {
        const Tensor gl = downsample_nearest(g, 1 << level);
        Tensor l(3, gl.extent);
        for (std::size_t i = 0; i < l.values.size(); ++i) {
            l.values[i] = gl.values[i] > 0.f ? 30.f : -30.f;  // saturated sigmoid
        }
        logits.push_back(std::move(l));
    }
    CHECK(total_loss(logits, g, LossConfig{}) < 1e-4);
}

TEST_CASE("total_loss equals the independently weighted per-level sum") {
    Tensor g = random_binary(3, {16, 16, 8}, 18, 0.35);
    std::vector<Tensor> logits;
    TestRng rng(19);
    for (int level = 0; level < 4; ++level) {
        Tensor l(3, {16 >> level, 16 >> level, 8 >> level});
        for (float& v : l.values) v = static_cast<float>(rng.uniform(-3.0, 3.0));
        logits.push_back(std::move(l));
    }
    LossConfig cfg;
    double expect = 0.0;
    for (int level = 0; level < 4; ++level) {
        const Tensor p = sigmoid(logits[level]);
        const Tensor gl = downsample_nearest(g, 1 << level);
        double lvl = dice_focal({p, gl}, cfg);
        if (sobel_supported(p.extent)) lvl += cfg.alpha * boundary_loss({p, gl});
        expect += cfg.ds_weights[level] * lvl;
    }
    CHECK(total_loss(logits, g, cfg) == doctest::Approx(expect).epsilon(1e-12));
    CHECK(cfg.ds_weights == std::vector<double>{1.0, 0.5, 0.25, 0.125});
}

TEST_CASE("total_loss rejects more levels than weights and wrong resolutions") {
    Tensor g = random_binary(1, {8, 8, 8}, 30);
    std::vector<Tensor> too_many;
    for (int level = 0; level < 5; ++level) {
        too_many.emplace_back(1, std::array<int, 3>{8 >> std::min(level, 3), 8 >> std::min(level, 3),
                                                    8 >> std::min(level, 3)});
    }
    CHECK_THROWS_AS(total_loss(too_many, g, LossConfig{}), ArgumentError);

    std::vector<Tensor> wrong_res{Tensor(1, {8, 8, 8}), Tensor(1, {8, 8, 8})};  // level 1 not halved
    CHECK_THROWS_AS(total_loss(wrong_res, g, LossConfig{}), ShapeError);
}

TEST_CASE("loss config validation") {
    LossConfig cfg;
    cfg.ds_weights = {1.0, 0.6};
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = LossConfig{};
    cfg.alpha = -0.1;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = LossConfig{};
    CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("loss input validation rejects shape and range violations") {
    Tensor p = random_probs(1, {3, 3, 3}, 20);
    Tensor g = random_binary(1, {3, 3, 3}, 21);
    SUBCASE("shape mismatch") {
        Tensor g2 = random_binary(1, {4, 3, 3}, 22);
        CHECK_THROWS_AS(dice_focal({p, g2}, LossConfig{}), ShapeError);
    }
    SUBCASE("probability out of range") {
        Tensor bad = p;
        bad.values[0] = 1.5f;
        CHECK_THROWS_AS(dice_focal({bad, g}, LossConfig{}), ArgumentError);
    }
    SUBCASE("non-binary ground truth") {
        Tensor bad = g;
        bad.values[0] = 0.5f;
        CHECK_THROWS_AS(dice_focal({p, bad}, LossConfig{}), ArgumentError);
    }
}

TEST_CASE("dice_focal gradient matches central finite differences") {
    Tensor p = random_probs(2, {4, 4, 4}, 23);
    Tensor g = random_binary(2, {4, 4, 4}, 24);
    LossConfig cfg;
    const Tensor grad = dice_focal_grad({p, g}, cfg);

    TestRng pick(25);
    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t i = pick.next() % p.values.size();
        const double fd = central_difference(
            [&] { return dice_focal({p, g}, cfg); }, p.values[i], 1e-4f);
        CHECK(grad_close(grad.values[i], fd, 1e-3, 1e-7));
    }
}

TEST_CASE("boundary_loss gradient matches central finite differences") {
    Tensor p = random_probs(1, {5, 5, 5}, 26);
    Tensor g = random_binary(1, {5, 5, 5}, 27);
    const Tensor grad = boundary_loss_grad({p, g});

    TestRng pick(28);
    for (int trial = 0; trial < 24; ++trial) {
        const std::size_t i = pick.next() % p.values.size();
        const double fd = central_difference(
            [&] { return boundary_loss({p, g}); }, p.values[i], 1e-4f);
        CHECK(grad_close(grad.values[i], fd, 1e-3, 1e-7));
    }
}
