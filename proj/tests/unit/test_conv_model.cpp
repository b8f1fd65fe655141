#include <doctest.h>

#include <cmath>
#include <fstream>

#include "emednext/error.hpp"
#include "emednext/losses.hpp"
#include "emednext/model.hpp"
#include "support/model_ref.hpp"
#include "support/oracles.hpp"
#include "support/temp_dir.hpp"
#include "support/test_rng.hpp"

using namespace emednext;
using namespace emednext::testing;

namespace {

Tensor random_tensor(int channels, std::array<int, 3> extent, std::uint64_t seed,
                     double lo = -1.0, double hi = 1.0) {
    Tensor t(channels, extent);
    TestRng rng(seed);
    for (float& v : t.values) v = static_cast<float>(rng.uniform(lo, hi));
    return t;
}

std::vector<float> random_values(std::size_t n, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    TestRng rng(seed);
    std::vector<float> out(n);
    for (float& v : out) v = static_cast<float>(rng.uniform(lo, hi));
    return out;
}

ModelConfig tiny_config() {
    ModelConfig cfg;
    cfg.in_channels = 2;
    cfg.base_channels = 2;
    cfg.num_stages = 2;
    cfg.blocks_per_stage = {1, 1};
    cfg.expansion_ratios = {2, 2};
    return cfg;
}

}  // namespace

TEST_CASE("conv3d 1x1x1 identity weight reproduces the input") {
    const Tensor x = random_tensor(3, {5, 4, 3}, 1);
    std::vector<float> w(3 * 3, 0.f);
    for (int c = 0; c < 3; ++c) w[c * 3 + c] = 1.f;  // identity mixing matrix
    const std::vector<float> b(3, 0.f);
    const Tensor y = conv3d_direct(x, w, b, 3, 1, 1, 1);
    CHECK(y.values == x.values);
}

TEST_CASE("all-ones depthwise 3^3 kernel on a constant-1 input gives 27 inside") {
    const int n = 6;
    Tensor x(2, {n, n, n});
    std::fill(x.values.begin(), x.values.end(), 1.f);
    const std::vector<float> w(2 * 27, 1.f);
    const std::vector<float> b(2, 0.f);
    const Tensor y = conv3d_direct(x, w, b, 2, 3, 1, 2);
    CHECK(y.at(0, 2, 2, 2) == 27.f);
    CHECK(y.at(1, 3, 3, 3) == 27.f);
    CHECK(y.at(0, 0, 0, 0) == 8.f);  // corner sees 2x2x2 support
}

TEST_CASE("conv3d matches the nested-loop oracle on random inputs") {
    const Tensor x = random_tensor(4, {8, 8, 8}, 7);

    struct Case {
        int out_c, kernel, stride, groups;
    };
    for (const Case c : {Case{6, 3, 1, 1}, Case{4, 3, 1, 4}, Case{6, 3, 2, 1}, Case{5, 1, 1, 1},
                         Case{4, 1, 2, 4}}) {
        const std::size_t wn = static_cast<std::size_t>(c.out_c) * (4 / c.groups) * c.kernel *
                               c.kernel * c.kernel;
        const auto w = random_values(wn, 100 + c.out_c + c.kernel + c.stride);
        const auto b = random_values(c.out_c, 200 + c.out_c);
        const Tensor ours = conv3d_direct(x, w, b, c.out_c, c.kernel, c.stride, c.groups);
        const Tensor ref = naive_conv3d(x, w, b, c.out_c, c.kernel, c.stride, c.groups);
        REQUIRE(ours.extent == ref.extent);
        for (std::size_t i = 0; i < ours.values.size(); ++i) {
            CHECK(std::fabs(ours.values[i] - ref.values[i]) < 1e-5);
        }
    }
}

TEST_CASE("conv3d stride 2 halves each axis with ceil division") {
    const Tensor x = random_tensor(1, {5, 6, 7}, 3);
    const auto w = random_values(27, 4);
    const std::vector<float> b(1, 0.f);
    const Tensor y = conv3d_direct(x, w, b, 1, 3, 2, 1);
    CHECK(y.extent == std::array<int, 3>{3, 3, 4});
}

TEST_CASE("conv3d rejects channel/group mismatches") {
    const Tensor x = random_tensor(4, {4, 4, 4}, 5);
    const auto w = random_values(4 * 27, 6);
    const std::vector<float> b(4, 0.f);
    CHECK_THROWS_AS(conv3d_direct(x, w, b, 4, 3, 1, 3), ShapeError);
    CHECK_THROWS_AS(conv3d_direct(x, w, b, 6, 3, 1, 4), ShapeError);  // wrong weight size
}

TEST_CASE("transposed 2x2x2 conv doubles each axis and has a correct backward") {
    const Tensor x = random_tensor(2, {3, 2, 2}, 11);
    const auto w = random_values(2 * 2 * 8, 12);
    const auto b = random_values(2, 13);
    const Tensor y = conv_transpose3d_2x2(x, w, b, 2);
    CHECK(y.extent == std::array<int, 3>{6, 4, 4});

    // finite-difference check of a weighted-sum readout
    const auto readout_w = random_values(y.values.size(), 14);
    auto readout = [&](const Tensor& out) {
        double acc = 0.0;
        for (std::size_t i = 0; i < out.values.size(); ++i) {
            acc += static_cast<double>(readout_w[i]) * out.values[i];
        }
        return acc;
    };
    Tensor grad_out(2, y.extent);
    std::copy(readout_w.begin(), readout_w.end(), grad_out.values.begin());
    const Conv3dGrads grads = conv_transpose3d_2x2_backward(x, w, grad_out, 2);

    std::vector<float> w_mut = w;
    TestRng pick(15);
    for (int trial = 0; trial < 10; ++trial) {
        const std::size_t i = pick.next() % w_mut.size();
        const double fd = central_difference(
            [&] { return readout(conv_transpose3d_2x2(x, w_mut, b, 2)); }, w_mut[i], 1e-3f);
        CHECK(grad_close(grads.weight[i], fd, 1e-3, 1e-6));
    }
}

TEST_CASE("mednext_block with zero parameters is the identity") {
    BlockConfig bc{2, 4};
    ModelParams params;
    params.add("blk.dw.weight", {2, 1, 3, 3, 3});
    params.add("blk.dw.bias", {2});
    params.add("blk.norm.gamma", {2});
    params.add("blk.norm.beta", {2});
    params.add("blk.expand.weight", {8, 2, 1, 1, 1});
    params.add("blk.expand.bias", {8});
    params.add("blk.compress.weight", {2, 8, 1, 1, 1});
    params.add("blk.compress.bias", {2});

    const Tensor x = random_tensor(2, {4, 4, 4}, 21);
    const Tensor y = mednext_block(x, bc, params, "blk");
    CHECK(y.values == x.values);
}

TEST_CASE("mednext_block expansion uses C*R intermediate channels") {
    BlockConfig bc{2, 4};
    ModelParams params;
    params.add("blk.dw.weight", {2, 1, 3, 3, 3});
    params.add("blk.dw.bias", {2});
    params.add("blk.norm.gamma", {2});
    params.add("blk.norm.beta", {2});
    params.add("blk.expand.weight", {8, 2, 1, 1, 1});
    params.add("blk.expand.bias", {8});
    params.add("blk.compress.weight", {2, 8, 1, 1, 1});
    params.add("blk.compress.bias", {2});
    TestRng rng(23);
    for (auto& t : params.tensors) {
        for (float& v : t.values) v = static_cast<float>(rng.uniform(-0.5, 0.5));
    }

    BlockTape tape;
    const Tensor x = random_tensor(2, {4, 4, 4}, 22);
    mednext_block(x, bc, params, "blk", &tape);
    CHECK(tape.expand_out.channels == 8);
    CHECK(tape.expand_out.extent == x.extent);
}

TEST_CASE("mednext_block gradients match central finite differences") {
    BlockConfig bc{2, 2};
    ModelParams params;
    params.add("blk.dw.weight", {2, 1, 3, 3, 3});
    params.add("blk.dw.bias", {2});
    params.add("blk.norm.gamma", {2});
    params.add("blk.norm.beta", {2});
    params.add("blk.expand.weight", {4, 2, 1, 1, 1});
    params.add("blk.expand.bias", {4});
    params.add("blk.compress.weight", {2, 4, 1, 1, 1});
    params.add("blk.compress.bias", {2});
    TestRng init(31);
    for (auto& t : params.tensors) {
        for (float& v : t.values) v = static_cast<float>(init.uniform(-0.4, 0.4));
    }
    // keep the norm in a healthy regime
    for (float& v : params.find("blk.norm.gamma").values) v = 1.f;

    const Tensor x = random_tensor(2, {4, 4, 4}, 32);
    const DTensor dx = to_dtensor(x);
    const auto readout_w = random_values(x.values.size(), 33);
    // FD runs against the double-precision reference so the differences are
    // accurate well below the tolerance being checked.
    auto loss_of = [&](const ModelParams& p) {
        const DTensor y = ref_block_forward(dx, bc, p, "blk");
        double acc = 0.0;
        for (std::size_t i = 0; i < y.values.size(); ++i) {
            acc += static_cast<double>(readout_w[i]) * y.values[i];
        }
        return acc;
    };

    BlockTape tape;
    mednext_block(x, bc, params, "blk", &tape);
    Tensor grad_out(2, x.extent);
    std::copy(readout_w.begin(), readout_w.end(), grad_out.values.begin());
    ModelParams grads = params;  // same layout, zeroed
    for (auto& t : grads.tensors) std::fill(t.values.begin(), t.values.end(), 0.f);
    mednext_block_backward(bc, params, "blk", tape, grad_out, grads);

    ModelParams mut = params;
    TestRng pick(34);
    int checked = 0;
    for (auto& t : mut.tensors) {
        for (int trial = 0; trial < 3; ++trial) {
            const std::size_t i = pick.next() % t.values.size();
            const double fd = central_difference([&] { return loss_of(mut); }, t.values[i], 1e-3f);
            const double analytic = grads.find(t.name).values[i];
            INFO(t.name << "[" << i << "] analytic=" << analytic << " fd=" << fd);
            CHECK(grad_close(analytic, fd, 1e-3, 1e-6));
            ++checked;
        }
    }
    CHECK(checked >= 24);
}

TEST_CASE("model_forward emits four halving-resolution outputs for 4 stages") {
    ModelConfig cfg;
    cfg.in_channels = 5;
    cfg.base_channels = 2;
    cfg.num_stages = 4;
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.expansion_ratios = {2, 2, 2, 2};
    ModelParams params = build_params(cfg);
    init_params(params, cfg, 77);

    const Tensor x = random_tensor(5, {32, 32, 16}, 41);
    const auto outputs = model_forward(x, cfg, params);
    REQUIRE(outputs.size() == 4);
    CHECK(outputs[0].channels == 3);
    CHECK(outputs[0].extent == std::array<int, 3>{32, 32, 16});
    CHECK(outputs[1].extent == std::array<int, 3>{16, 16, 8});
    CHECK(outputs[2].extent == std::array<int, 3>{8, 8, 4});
    CHECK(outputs[3].extent == std::array<int, 3>{4, 4, 2});
}

TEST_CASE("model_forward accepts the full 160x160x128 geometry") {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.base_channels = 1;
    cfg.num_stages = 4;
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.expansion_ratios = {1, 1, 1, 1};
    ModelParams params = build_params(cfg);  // zero weights keep it cheap

    const Tensor x(1, {160, 160, 128});
    const auto outputs = model_forward(x, cfg, params);
    CHECK(outputs.size() == 4);
    CHECK(outputs[0].extent == std::array<int, 3>{160, 160, 128});
    CHECK(outputs[3].extent == std::array<int, 3>{20, 20, 16});
}

TEST_CASE("model_forward rejects indivisible spatial dims") {
    ModelConfig cfg;
    cfg.in_channels = 1;
    cfg.base_channels = 1;
    cfg.num_stages = 4;
    cfg.blocks_per_stage = {1, 1, 1, 1};
    cfg.expansion_ratios = {1, 1, 1, 1};
    const ModelParams params = build_params(cfg);
    const Tensor x(1, {30, 32, 16});  // 30 % 8 != 0
    CHECK_THROWS_AS(model_forward(x, cfg, params), ConfigError);
}

TEST_CASE("doubling all weights changes logits but not shapes") {
    ModelConfig cfg = tiny_config();
    ModelParams params = build_params(cfg);
    init_params(params, cfg, 5);
    const Tensor x = random_tensor(2, {8, 8, 4}, 51);

    const auto out1 = model_forward(x, cfg, params);
    ModelParams doubled = params;
    for (auto& t : doubled.tensors) {
        for (float& v : t.values) v *= 2.f;
    }
    const auto out2 = model_forward(x, cfg, doubled);
    REQUIRE(out1.size() == out2.size());
    bool any_diff = false;
    for (std::size_t l = 0; l < out1.size(); ++l) {
        CHECK(out1[l].extent == out2[l].extent);
        if (out1[l].values != out2[l].values) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("whole-model gradients match finite differences on a toy config") {
    ModelConfig cfg = tiny_config();
    ModelParams params = build_params(cfg);
    init_params(params, cfg, 1234);
    REQUIRE(params.total_parameters() <= 1000);

    const Tensor x = random_tensor(2, {4, 4, 2}, 61, -0.5, 0.5);
    const DTensor dx = to_dtensor(x);

    // smooth scalar loss: sum of randomly weighted sigmoids over every output
    std::vector<std::vector<float>> readout;
    {
        TestRng rw(62);
        const auto probe = model_forward(x, cfg, params);
        for (const auto& level : probe) {
            std::vector<float> w(level.values.size());
            for (float& v : w) v = static_cast<float>(rw.uniform(-1.0, 1.0));
            readout.push_back(std::move(w));
        }
    }
    auto ref_loss = [&](const ModelParams& p) {
        const auto levels = ref_model_forward(dx, cfg, p);
        double acc = 0.0;
        for (std::size_t l = 0; l < levels.size(); ++l) {
            for (std::size_t i = 0; i < levels[l].values.size(); ++i) {
                acc += readout[l][i] / (1.0 + std::exp(-levels[l].values[i]));
            }
        }
        return acc;
    };

    ModelTape tape;
    const auto outputs = model_forward(x, cfg, params, &tape);
    std::vector<Tensor> grad_logits;
    for (std::size_t l = 0; l < outputs.size(); ++l) {
        Tensor gl(outputs[l].channels, outputs[l].extent);
        for (std::size_t i = 0; i < gl.values.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(outputs[l].values[i])));
            gl.values[i] = static_cast<float>(readout[l][i] * s * (1.0 - s));
        }
        grad_logits.push_back(std::move(gl));
    }
    const ModelParams grads = model_backward(cfg, params, tape, grad_logits);

    ModelParams mut = params;
    TestRng pick(63);
    std::size_t checked = 0, passed = 0;
    for (auto& t : mut.tensors) {
        for (int trial = 0; trial < 2; ++trial) {
            const std::size_t i = pick.next() % t.values.size();
            const double fd = central_difference([&] { return ref_loss(mut); }, t.values[i], 1e-3f);
            const double analytic = grads.find(t.name).values[i];
            INFO(t.name << "[" << i << "] analytic=" << analytic << " fd=" << fd);
            if (grad_close(analytic, fd, 1e-3, 1e-6)) ++passed;
            ++checked;
        }
    }
    CHECK(passed == checked);
}

TEST_CASE("plan_freeze partitions parameters and reports fractions") {
    ModelConfig cfg;
    cfg.in_channels = 5;
    cfg.base_channels = 8;
    cfg.num_stages = 4;
    cfg.blocks_per_stage = {2, 2, 2, 2};
    cfg.expansion_ratios = {2, 2, 2, 2};
    const ModelParams params = build_params(cfg);

    SUBCASE("freeze everything, unfreeze nothing") {
        FreezePlan plan;
        plan.freeze_encoder = true;
        plan.unfreeze_last_k_decoder_blocks = 0;
        plan.unfreeze_heads = false;
        const FreezeResult res = plan_freeze(cfg, params, plan);
        CHECK(res.trainable.empty());
        CHECK(res.trainable_fraction == 0.0);
    }
    SUBCASE("unfreeze all groups") {
        FreezePlan plan;
        plan.freeze_encoder = false;
        plan.unfreeze_last_k_decoder_blocks = cfg.total_decoder_blocks();
        plan.unfreeze_heads = true;
        const FreezeResult res = plan_freeze(cfg, params, plan);
        CHECK(res.trainable.size() == params.tensors.size());
        CHECK(res.trainable_fraction == 1.0);
    }
    SUBCASE("k beyond the decoder depth is rejected") {
        FreezePlan plan;
        plan.unfreeze_last_k_decoder_blocks = cfg.total_decoder_blocks() + 1;
        CHECK_THROWS_AS(plan_freeze(cfg, params, plan), ArgumentError);
    }
    SUBCASE("trainable and frozen partition the parameter names") {
        FreezePlan plan;
        plan.freeze_encoder = true;
        plan.unfreeze_last_k_decoder_blocks = 3;
        plan.unfreeze_heads = true;
        plan.unfreeze_deepest_encoder_stages = 2;
        const FreezeResult res = plan_freeze(cfg, params, plan);
        std::size_t trainable_count = 0;
        for (const auto& t : params.tensors) {
            trainable_count += res.trainable.count(t.name);
        }
        CHECK(trainable_count == res.trainable.size());  // every trainable name exists
        CHECK(res.trainable.size() < params.tensors.size());
        CHECK(res.trainable_fraction > 0.0);
        CHECK(res.trainable_fraction < 1.0);
    }
}

TEST_CASE("plan_freeze fraction matches an independent name-by-name count") {
    ModelConfig cfg;
    cfg.in_channels = 5;
    cfg.base_channels = 8;
    cfg.num_stages = 4;
    cfg.blocks_per_stage = {1, 2, 2, 1};
    cfg.expansion_ratios = {2, 2, 2, 2};
    const ModelParams params = build_params(cfg);

    FreezePlan plan;
    plan.freeze_encoder = true;
    plan.unfreeze_last_k_decoder_blocks = 2;
    plan.unfreeze_heads = true;
    plan.unfreeze_deepest_encoder_stages = 0;
    const FreezeResult res = plan_freeze(cfg, params, plan);

    // Independent count: with k=2 and decoder stages (2,1,0) holding
    // (2,1,1)... stage order deepest-first is dec2(x2), dec1(x2), dec0(x1);
    // blocks_per_stage = {1,2,2,1} means dec0 has 1 block, dec1 2, dec2 2.
    // Forward order: dec2.b0, dec2.b1, dec1.b0, dec1.b1, dec0.b0 -> the last
    // two are dec1.block1 and dec0.block0. Plus all up*/fuse* and heads.
    std::size_t expected = 0;
    for (const auto& t : params.tensors) {
        const bool up = t.name.starts_with("up") || t.name.starts_with("fuse");
        const bool head = t.name.starts_with("head");
        const bool tail_block =
            t.name.starts_with("dec1.block1.") || t.name.starts_with("dec0.block0.");
        if (up || head || tail_block) expected += t.size();
    }
    const double expected_fraction =
        static_cast<double>(expected) / static_cast<double>(params.total_parameters());
    CHECK(res.trainable_fraction == doctest::Approx(expected_fraction).epsilon(1e-12));
}

TEST_CASE("model save/load roundtrips parameters bit-exactly") {
    TempDir tmp("model");
    ModelConfig cfg = tiny_config();
    ModelParams params = build_params(cfg);
    init_params(params, cfg, 99);

    save_model(tmp.path() / "m", cfg, params);
    const LoadedModel loaded = load_model(tmp.path() / "m");
    CHECK(loaded.config.num_stages == cfg.num_stages);
    REQUIRE(loaded.params.tensors.size() == params.tensors.size());
    for (std::size_t i = 0; i < params.tensors.size(); ++i) {
        CHECK(loaded.params.tensors[i].name == params.tensors[i].name);
        CHECK(loaded.params.tensors[i].values == params.tensors[i].values);
    }
}

TEST_CASE("model loading rejects corrupt directories") {
    TempDir tmp("model");
    ModelConfig cfg = tiny_config();
    ModelParams params = build_params(cfg);
    init_params(params, cfg, 7);
    save_model(tmp.path() / "m", cfg, params);

    SUBCASE("manifest truncated") {
        std::ofstream f(tmp.path() / "m" / "manifest.json", std::ios::trunc);
        f << "{\"tensors\": []}";
        f.close();
        CHECK_THROWS_AS(load_model(tmp.path() / "m"), FormatError);
    }
    SUBCASE("blob truncated") {
        std::filesystem::resize_file(tmp.path() / "m" / "stem.weight.f32", 8);
        CHECK_THROWS_AS(load_model(tmp.path() / "m"), FormatError);
    }
    SUBCASE("manifest not JSON") {
        std::ofstream f(tmp.path() / "m" / "manifest.json", std::ios::trunc);
        f << "not json";
        f.close();
        CHECK_THROWS_AS(load_model(tmp.path() / "m"), FormatError);
    }
}

TEST_CASE("init_params is deterministic in the seed") {
    ModelConfig cfg = tiny_config();
    ModelParams a = build_params(cfg), b = build_params(cfg), c = build_params(cfg);
    init_params(a, cfg, 42);
    init_params(b, cfg, 42);
    init_params(c, cfg, 43);
    bool differs_across_seeds = false;
    for (std::size_t i = 0; i < a.tensors.size(); ++i) {
        CHECK(a.tensors[i].values == b.tensors[i].values);
        if (a.tensors[i].values != c.tensors[i].values) differs_across_seeds = true;
    }
    CHECK(differs_across_seeds);
}
