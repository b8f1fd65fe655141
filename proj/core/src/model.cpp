#include "emednext/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "emednext/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "parameter blobs are raw little-endian float32");

namespace emednext {
namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ull;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

double unit_real(std::uint64_t& state) {
    return static_cast<double>(splitmix64(state) >> 11) * (1.0 / 9007199254740992.0);
}

void add_block_params(ModelParams& params, const std::string& prefix, int channels, int ratio) {
    const int expanded = channels * ratio;
    params.add(prefix + ".dw.weight", {channels, 1, 3, 3, 3});
    params.add(prefix + ".dw.bias", {channels});
    params.add(prefix + ".norm.gamma", {channels});
    params.add(prefix + ".norm.beta", {channels});
    params.add(prefix + ".expand.weight", {expanded, channels, 1, 1, 1});
    params.add(prefix + ".expand.bias", {expanded});
    params.add(prefix + ".compress.weight", {channels, expanded, 1, 1, 1});
    params.add(prefix + ".compress.bias", {channels});
}

void accumulate(ModelParams& grads, const std::string& name, const std::vector<float>& delta) {
    auto& t = grads.find(name);
    if (t.values.size() != delta.size()) throw ShapeError("gradient size mismatch for " + name);
    for (std::size_t i = 0; i < delta.size(); ++i) t.values[i] += delta[i];
}

Tensor add_tensors(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw ShapeError("tensor add shape mismatch");
    Tensor out = a;
    for (std::size_t i = 0; i < out.values.size(); ++i) out.values[i] += b.values[i];
    return out;
}

// Splits a concat grad back into its two channel ranges.
std::pair<Tensor, Tensor> split_channels(const Tensor& g, int first_channels) {
    Tensor a(first_channels, g.extent);
    Tensor b(g.channels - first_channels, g.extent);
    std::copy(g.values.begin(), g.values.begin() + a.values.size(), a.values.begin());
    std::copy(g.values.begin() + a.values.size(), g.values.end(), b.values.begin());
    return {std::move(a), std::move(b)};
}

}  // namespace

void BlockConfig::validate() const {
    if (channels < 1 || expansion_ratio < 1) {
        throw ArgumentError("block channels and expansion ratio must be >= 1");
    }
}

void ModelConfig::validate() const {
    if (num_stages < 2) throw ArgumentError("model needs at least 2 stages");
    if (in_channels < 1 || base_channels < 1 || num_classes < 1) {
        throw ArgumentError("model channel counts must be >= 1");
    }
    if (blocks_per_stage.size() != static_cast<std::size_t>(num_stages) ||
        expansion_ratios.size() != static_cast<std::size_t>(num_stages)) {
        throw ArgumentError("blocks_per_stage/expansion_ratios must list one entry per stage");
    }
    for (int b : blocks_per_stage) {
        if (b < 1) throw ArgumentError("every stage needs at least one block");
    }
    for (int r : expansion_ratios) {
        if (r < 1) throw ArgumentError("expansion ratios must be >= 1");
    }
}

int ModelConfig::total_decoder_blocks() const {
    int total = 0;
    for (int s = 0; s <= num_stages - 2; ++s) total += blocks_per_stage[s];
    return total;
}

std::string ModelConfig::to_json() const {
    json j;
    j["in_channels"] = in_channels;
    j["base_channels"] = base_channels;
    j["num_stages"] = num_stages;
    j["blocks_per_stage"] = blocks_per_stage;
    j["expansion_ratios"] = expansion_ratios;
    j["num_classes"] = num_classes;
    return j.dump(2) + "\n";
}

ModelConfig ModelConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw FormatError("model config: invalid JSON");
    ModelConfig cfg;
    try {
        cfg.in_channels = j.at("in_channels").get<int>();
        cfg.base_channels = j.at("base_channels").get<int>();
        cfg.num_stages = j.at("num_stages").get<int>();
        cfg.blocks_per_stage = j.at("blocks_per_stage").get<std::vector<int>>();
        cfg.expansion_ratios = j.at("expansion_ratios").get<std::vector<int>>();
        cfg.num_classes = j.value("num_classes", 3);
    } catch (const json::exception& e) {
        throw FormatError(std::string("model config: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

ParamTensor& ModelParams::add(const std::string& name, std::vector<int> shape) {
    if (by_name.count(name)) throw ArgumentError("duplicate parameter name " + name);
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    by_name[name] = tensors.size();
    tensors.push_back(ParamTensor{name, std::move(shape), std::vector<float>(n, 0.f)});
    return tensors.back();
}

ParamTensor& ModelParams::find(const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ArgumentError("unknown parameter " + name);
    return tensors[it->second];
}

const ParamTensor& ModelParams::find(const std::string& name) const {
    return const_cast<ModelParams*>(this)->find(name);
}

std::size_t ModelParams::total_parameters() const {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.size();
    return n;
}

ModelParams build_params(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams params;
    const int S = cfg.num_stages;

    params.add("stem.weight", {cfg.stage_channels(0), cfg.in_channels, 3, 3, 3});
    params.add("stem.bias", {cfg.stage_channels(0)});

    for (int s = 0; s < S; ++s) {
        const int c = cfg.stage_channels(s);
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            add_block_params(params, "enc" + std::to_string(s) + ".block" + std::to_string(b), c,
                             cfg.expansion_ratios[s]);
        }
        if (s < S - 1) {
            params.add("down" + std::to_string(s) + ".weight", {cfg.stage_channels(s + 1), c, 3, 3, 3});
            params.add("down" + std::to_string(s) + ".bias", {cfg.stage_channels(s + 1)});
        }
    }

    for (int s = S - 2; s >= 0; --s) {
        const int c = cfg.stage_channels(s);
        params.add("up" + std::to_string(s) + ".weight", {cfg.stage_channels(s + 1), c, 2, 2, 2});
        params.add("up" + std::to_string(s) + ".bias", {c});
        params.add("fuse" + std::to_string(s) + ".weight", {c, 2 * c, 1, 1, 1});
        params.add("fuse" + std::to_string(s) + ".bias", {c});
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            add_block_params(params, "dec" + std::to_string(s) + ".block" + std::to_string(b), c,
                             cfg.expansion_ratios[s]);
        }
    }

    for (int i = 0; i < cfg.num_outputs(); ++i) {
        params.add("head" + std::to_string(i) + ".weight",
                   {cfg.num_classes, cfg.stage_channels(i), 1, 1, 1});
        params.add("head" + std::to_string(i) + ".bias", {cfg.num_classes});
    }
    return params;
}

void init_params(ModelParams& params, const ModelConfig& cfg, std::uint64_t seed) {
    (void)cfg;
    std::uint64_t state = seed ^ 0xD1B54A32D192ED03ull;
    for (auto& t : params.tensors) {
        const bool is_gamma = t.name.ends_with(".norm.gamma");
        const bool is_weight = t.name.ends_with(".weight");
        if (is_gamma) {
            std::fill(t.values.begin(), t.values.end(), 1.f);
            continue;
        }
        if (!is_weight) {  // biases and norm shifts start at zero
            std::fill(t.values.begin(), t.values.end(), 0.f);
            continue;
        }
        // Fan-in per output unit: transposed convs store [in][out][k^3].
        std::size_t fan_in;
        if (t.name.starts_with("up")) {
            fan_in = static_cast<std::size_t>(t.shape[0]) * 8;
        } else {
            fan_in = t.size() / static_cast<std::size_t>(t.shape[0]);
        }
        const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
        for (float& v : t.values) {
            v = static_cast<float>((unit_real(state) * 2.0 - 1.0) * limit);
        }
    }
}

Tensor mednext_block(const Tensor& x, const BlockConfig& cfg, const ModelParams& params,
                     const std::string& prefix, BlockTape* tape) {
    cfg.validate();
    if (x.channels != cfg.channels) {
        throw ShapeError("block " + prefix + " expects " + std::to_string(cfg.channels) + " channels");
    }
    const int c = cfg.channels;
    const int expanded = c * cfg.expansion_ratio;

    NormStats stats;
    Tensor dw_out = conv3d_direct(x, params.find(prefix + ".dw.weight").values,
                                  params.find(prefix + ".dw.bias").values, c, 3, 1, c);
    Tensor norm_out = instance_norm(dw_out, params.find(prefix + ".norm.gamma").values,
                                    params.find(prefix + ".norm.beta").values, &stats);
    Tensor expand_out = conv3d_direct(norm_out, params.find(prefix + ".expand.weight").values,
                                      params.find(prefix + ".expand.bias").values, expanded, 1, 1, 1);
    Tensor gelu_out = gelu(expand_out);
    Tensor compress_out = conv3d_direct(gelu_out, params.find(prefix + ".compress.weight").values,
                                        params.find(prefix + ".compress.bias").values, c, 1, 1, 1);
    Tensor out = add_tensors(x, compress_out);

    if (tape) {
        tape->input = x;
        tape->dw_out = std::move(dw_out);
        tape->norm_stats = std::move(stats);
        tape->norm_out = std::move(norm_out);
        tape->expand_out = std::move(expand_out);
        tape->gelu_out = std::move(gelu_out);
    }
    return out;
}

Tensor mednext_block_backward(const BlockConfig& cfg, const ModelParams& params,
                              const std::string& prefix, const BlockTape& tape,
                              const Tensor& grad_out, ModelParams& grads) {
    const int c = cfg.channels;
    const int expanded = c * cfg.expansion_ratio;

    Conv3dGrads comp = conv3d_backward(tape.gelu_out, params.find(prefix + ".compress.weight").values,
                                       grad_out, c, 1, 1, 1);
    accumulate(grads, prefix + ".compress.weight", comp.weight);
    accumulate(grads, prefix + ".compress.bias", comp.bias);

    Tensor g_gelu = gelu_backward(tape.expand_out, comp.input);

    Conv3dGrads exp = conv3d_backward(tape.norm_out, params.find(prefix + ".expand.weight").values,
                                      g_gelu, expanded, 1, 1, 1);
    accumulate(grads, prefix + ".expand.weight", exp.weight);
    accumulate(grads, prefix + ".expand.bias", exp.bias);

    NormGrads norm = instance_norm_backward(tape.dw_out, tape.norm_stats,
                                            params.find(prefix + ".norm.gamma").values, exp.input);
    accumulate(grads, prefix + ".norm.gamma", norm.gamma);
    accumulate(grads, prefix + ".norm.beta", norm.beta);

    Conv3dGrads dw = conv3d_backward(tape.input, params.find(prefix + ".dw.weight").values,
                                     norm.input, c, 3, 1, c);
    accumulate(grads, prefix + ".dw.weight", dw.weight);
    accumulate(grads, prefix + ".dw.bias", dw.bias);

    return add_tensors(dw.input, grad_out);  // residual path
}

std::vector<Tensor> model_forward(const Tensor& x, const ModelConfig& cfg,
                                  const ModelParams& params, ModelTape* tape) {
    cfg.validate();
    const int S = cfg.num_stages;
    if (x.channels != cfg.in_channels) {
        throw ShapeError("model expects " + std::to_string(cfg.in_channels) + " input channels, got " +
                         std::to_string(x.channels));
    }
    const int div = 1 << (S - 1);
    for (int a = 0; a < 3; ++a) {
        if (x.extent[a] % div != 0 || x.extent[a] < div) {
            throw ConfigError("input spatial dims must be divisible by 2^(num_stages-1)");
        }
    }

    if (tape) {
        tape->input = x;
        tape->enc_blocks.assign(S, {});
        tape->dec_blocks.assign(std::max(0, S - 1), {});
        tape->down_in.assign(S - 1, {});
        tape->up_in.assign(S - 1, {});
        tape->up_out.assign(S - 1, {});
        tape->skip_out.assign(S - 1, {});
        tape->concat_out.assign(S - 1, {});
        tape->head_in.assign(cfg.num_outputs(), {});
    }

    Tensor cur = conv3d_direct(x, params.find("stem.weight").values, params.find("stem.bias").values,
                               cfg.stage_channels(0), 3, 1, 1);

    std::vector<Tensor> skips(S - 1);
    for (int s = 0; s < S; ++s) {
        const BlockConfig bc{cfg.stage_channels(s), cfg.expansion_ratios[s]};
        if (tape) tape->enc_blocks[s].resize(cfg.blocks_per_stage[s]);
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const std::string prefix = "enc" + std::to_string(s) + ".block" + std::to_string(b);
            cur = mednext_block(cur, bc, params, prefix, tape ? &tape->enc_blocks[s][b] : nullptr);
        }
        if (s < S - 1) {
            skips[s] = cur;
            if (tape) {
                tape->skip_out[s] = cur;
                tape->down_in[s] = cur;
            }
            const std::string dname = "down" + std::to_string(s);
            cur = conv3d_direct(cur, params.find(dname + ".weight").values,
                                params.find(dname + ".bias").values, cfg.stage_channels(s + 1), 3, 2, 1);
        }
    }

    const int n_out = cfg.num_outputs();
    std::vector<Tensor> outputs(n_out);

    // Deepest head (level S-1) taps the bottleneck features when S <= 4.
    if (n_out == S) {
        const std::string hname = "head" + std::to_string(S - 1);
        if (tape) tape->head_in[S - 1] = cur;
        outputs[S - 1] = conv3d_direct(cur, params.find(hname + ".weight").values,
                                       params.find(hname + ".bias").values, cfg.num_classes, 1, 1, 1);
    }

    for (int s = S - 2; s >= 0; --s) {
        const int c = cfg.stage_channels(s);
        if (tape) tape->up_in[s] = cur;
        const std::string uname = "up" + std::to_string(s);
        Tensor up = conv_transpose3d_2x2(cur, params.find(uname + ".weight").values,
                                         params.find(uname + ".bias").values, c);
        if (tape) tape->up_out[s] = up;
        Tensor cat = concat_channels(up, skips[s]);
        if (tape) tape->concat_out[s] = cat;
        const std::string fname = "fuse" + std::to_string(s);
        cur = conv3d_direct(cat, params.find(fname + ".weight").values,
                            params.find(fname + ".bias").values, c, 1, 1, 1);

        const BlockConfig bc{c, cfg.expansion_ratios[s]};
        if (tape) tape->dec_blocks[s].resize(cfg.blocks_per_stage[s]);
        for (int b = 0; b < cfg.blocks_per_stage[s]; ++b) {
            const std::string prefix = "dec" + std::to_string(s) + ".block" + std::to_string(b);
            cur = mednext_block(cur, bc, params, prefix, tape ? &tape->dec_blocks[s][b] : nullptr);
        }
        if (s < n_out && s <= 3) {
            const std::string hname = "head" + std::to_string(s);
            if (tape) tape->head_in[s] = cur;
            outputs[s] = conv3d_direct(cur, params.find(hname + ".weight").values,
                                       params.find(hname + ".bias").values, cfg.num_classes, 1, 1, 1);
        }
    }
    return outputs;
}

ModelParams model_backward(const ModelConfig& cfg, const ModelParams& params,
                           const ModelTape& tape, const std::vector<Tensor>& grad_outputs) {
    cfg.validate();
    const int S = cfg.num_stages;
    const int n_out = cfg.num_outputs();
    if (grad_outputs.size() != static_cast<std::size_t>(n_out)) {
        throw ShapeError("model_backward needs one grad per output level");
    }

    ModelParams grads = build_params(cfg);

    auto head_input_grad = [&](int level) {
        const std::string hname = "head" + std::to_string(level);
        Conv3dGrads hg = conv3d_backward(tape.head_in[level], params.find(hname + ".weight").values,
                                         grad_outputs[level], cfg.num_classes, 1, 1, 1);
        accumulate(grads, hname + ".weight", hg.weight);
        accumulate(grads, hname + ".bias", hg.bias);
        return std::move(hg.input);
    };

    // Decoder, finest stage first; `pending` carries the grad toward the next
    // deeper stage's output.
    Tensor pending;
    std::vector<Tensor> skip_grads(S - 1);
    for (int s = 0; s <= S - 2; ++s) {
        Tensor g;
        if (s < n_out && s <= 3) g = head_input_grad(s);
        if (s > 0) g = g.values.empty() ? std::move(pending) : add_tensors(g, pending);

        const int c = cfg.stage_channels(s);
        const BlockConfig bc{c, cfg.expansion_ratios[s]};
        for (int b = cfg.blocks_per_stage[s] - 1; b >= 0; --b) {
            const std::string prefix = "dec" + std::to_string(s) + ".block" + std::to_string(b);
            g = mednext_block_backward(bc, params, prefix, tape.dec_blocks[s][b], g, grads);
        }

        const std::string fname = "fuse" + std::to_string(s);
        Conv3dGrads fg = conv3d_backward(tape.concat_out[s], params.find(fname + ".weight").values, g,
                                         c, 1, 1, 1);
        accumulate(grads, fname + ".weight", fg.weight);
        accumulate(grads, fname + ".bias", fg.bias);

        auto [g_up_out, g_skip] = split_channels(fg.input, c);
        skip_grads[s] = std::move(g_skip);

        const std::string uname = "up" + std::to_string(s);
        Conv3dGrads ug = conv_transpose3d_2x2_backward(tape.up_in[s],
                                                       params.find(uname + ".weight").values,
                                                       g_up_out, c);
        accumulate(grads, uname + ".weight", ug.weight);
        accumulate(grads, uname + ".bias", ug.bias);
        pending = std::move(ug.input);
    }

    // Grad at the deepest encoder output.
    Tensor g = std::move(pending);
    if (n_out == S) {
        Tensor hg = head_input_grad(S - 1);
        g = g.values.empty() ? std::move(hg) : add_tensors(g, hg);
    }

    for (int s = S - 1; s >= 0; --s) {
        const BlockConfig bc{cfg.stage_channels(s), cfg.expansion_ratios[s]};
        for (int b = cfg.blocks_per_stage[s] - 1; b >= 0; --b) {
            const std::string prefix = "enc" + std::to_string(s) + ".block" + std::to_string(b);
            g = mednext_block_backward(bc, params, prefix, tape.enc_blocks[s][b], g, grads);
        }
        if (s > 0) {
            const std::string dname = "down" + std::to_string(s - 1);
            Conv3dGrads dg = conv3d_backward(tape.down_in[s - 1], params.find(dname + ".weight").values,
                                             g, cfg.stage_channels(s), 3, 2, 1);
            accumulate(grads, dname + ".weight", dg.weight);
            accumulate(grads, dname + ".bias", dg.bias);
            g = add_tensors(dg.input, skip_grads[s - 1]);
        }
    }

    Conv3dGrads sg = conv3d_backward(tape.input, params.find("stem.weight").values, g,
                                     cfg.stage_channels(0), 3, 1, 1);
    accumulate(grads, "stem.weight", sg.weight);
    accumulate(grads, "stem.bias", sg.bias);
    return grads;
}

void FreezePlan::validate() const {
    if (unfreeze_last_k_decoder_blocks < 0) throw ArgumentError("k must be >= 0");
    if (unfreeze_deepest_encoder_stages < 0) throw ArgumentError("deepest stage count must be >= 0");
    for (const auto& [group, mult] : lr_multipliers) {
        if (!(mult > 0.0)) throw ArgumentError("lr multiplier for " + group + " must be positive");
    }
}

FreezeResult plan_freeze(const ModelConfig& cfg, const ModelParams& params, const FreezePlan& plan) {
    cfg.validate();
    plan.validate();
    const int S = cfg.num_stages;
    const int total_dec_blocks = cfg.total_decoder_blocks();
    const int k = plan.unfreeze_last_k_decoder_blocks;
    if (k > total_dec_blocks) {
        throw ArgumentError("k=" + std::to_string(k) + " exceeds the " +
                            std::to_string(total_dec_blocks) + " decoder blocks");
    }

    // Decoder blocks in forward order run from the deepest stage to stage 0;
    // "last k" means nearest the output.
    auto dec_block_order = [&](int s, int b) {
        int before = 0;
        for (int t = S - 2; t > s; --t) before += cfg.blocks_per_stage[t];
        return before + b;
    };
    const int first_trainable_order = total_dec_blocks - k;

    auto encoder_stage_of = [&](const std::string& name) -> int {
        if (name.starts_with("stem.")) return 0;
        if (name.starts_with("enc")) return std::stoi(name.substr(3));
        if (name.starts_with("down")) return std::stoi(name.substr(4)) + 1;
        return -1;
    };

    FreezeResult result;
    std::size_t trainable_count = 0;
    for (const auto& t : params.tensors) {
        bool trainable = false;
        const int enc_stage = encoder_stage_of(t.name);
        if (enc_stage >= 0) {
            trainable = !plan.freeze_encoder || enc_stage >= S - plan.unfreeze_deepest_encoder_stages;
        } else if (t.name.starts_with("up") || t.name.starts_with("fuse")) {
            trainable = k > 0;  // upsamplers ride along with the decoder tail
        } else if (t.name.starts_with("dec")) {
            const auto dot = t.name.find('.');
            const int s = std::stoi(t.name.substr(3, dot - 3));
            const auto block_pos = t.name.find("block", dot);
            const auto block_end = t.name.find('.', block_pos);
            const int b = std::stoi(t.name.substr(block_pos + 5, block_end - block_pos - 5));
            trainable = dec_block_order(s, b) >= first_trainable_order;
        } else if (t.name.starts_with("head")) {
            trainable = plan.unfreeze_heads;
        } else {
            throw ArgumentError("unclassified parameter " + t.name);
        }
        if (trainable) {
            result.trainable.insert(t.name);
            trainable_count += t.size();
        }
    }
    const std::size_t total = params.total_parameters();
    result.trainable_fraction = total == 0 ? 0.0 : static_cast<double>(trainable_count) / total;
    return result;
}

void save_model(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelParams& params) {
    std::filesystem::create_directories(dir);
    {
        std::ofstream f(dir / "config.json");
        if (!f) throw IoError("cannot write " + (dir / "config.json").string());
        f << cfg.to_json();
    }
    json manifest;
    manifest["tensors"] = json::array();
    for (const auto& t : params.tensors) {
        manifest["tensors"].push_back({{"name", t.name}, {"shape", t.shape}});
        std::ofstream blob(dir / (t.name + ".f32"), std::ios::binary);
        if (!blob) throw IoError("cannot write parameter blob for " + t.name);
        blob.write(reinterpret_cast<const char*>(t.values.data()),
                   static_cast<std::streamsize>(t.values.size() * sizeof(float)));
    }
    std::ofstream f(dir / "manifest.json");
    if (!f) throw IoError("cannot write " + (dir / "manifest.json").string());
    f << manifest.dump(2) << "\n";
}

LoadedModel load_model(const std::filesystem::path& dir) {
    auto read_text = [](const std::filesystem::path& p) {
        std::ifstream f(p);
        if (!f) throw IoError("cannot open " + p.string());
        return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    };

    LoadedModel model;
    model.config = ModelConfig::from_json(read_text(dir / "config.json"));
    model.params = build_params(model.config);

    json manifest = json::parse(read_text(dir / "manifest.json"), nullptr, false);
    if (manifest.is_discarded() || !manifest.contains("tensors") || !manifest["tensors"].is_array()) {
        throw FormatError(dir.string() + ": corrupt model manifest");
    }
    if (manifest["tensors"].size() != model.params.tensors.size()) {
        throw FormatError(dir.string() + ": manifest lists " +
                          std::to_string(manifest["tensors"].size()) + " tensors, expected " +
                          std::to_string(model.params.tensors.size()));
    }
    for (std::size_t i = 0; i < model.params.tensors.size(); ++i) {
        const auto& entry = manifest["tensors"][i];
        auto& t = model.params.tensors[i];
        if (entry.value("name", std::string{}) != t.name ||
            entry.value("shape", std::vector<int>{}) != t.shape) {
            throw FormatError(dir.string() + ": manifest entry " + std::to_string(i) +
                              " does not match the architecture");
        }
        std::ifstream blob(dir / (t.name + ".f32"), std::ios::binary);
        if (!blob) throw IoError("missing parameter blob for " + t.name);
        blob.read(reinterpret_cast<char*>(t.values.data()),
                  static_cast<std::streamsize>(t.values.size() * sizeof(float)));
        if (blob.gcount() != static_cast<std::streamsize>(t.values.size() * sizeof(float))) {
            throw FormatError(dir.string() + ": truncated blob for " + t.name);
        }
    }
    return model;
}

}  // namespace emednext
