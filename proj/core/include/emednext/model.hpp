#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "emednext/conv3d.hpp"
#include "emednext/tensor.hpp"

namespace emednext {

/// One residual unit: depthwise 3x3x3 -> per-channel norm -> 1x1x1 expansion
/// to C*R -> GELU -> 1x1x1 compression to C -> residual add.
struct BlockConfig {
    int channels = 1;
    int expansion_ratio = 4;
    static constexpr int kernel = 3;  // depthwise kernel is always 3x3x3

    void validate() const;
};

/// Encoder/decoder layout. Stage s runs at 1/2^s resolution with
/// base_channels * 2^s channels; the decoder mirrors the encoder stage for
/// stage. The network emits the full-resolution logits plus up to three
/// auxiliary outputs at successively halved resolutions.
struct ModelConfig {
    int in_channels = 5;
    int base_channels = 8;
    int num_stages = 4;
    std::vector<int> blocks_per_stage;   // per stage, also mirrored by the decoder
    std::vector<int> expansion_ratios;   // per stage
    int num_classes = 3;

    void validate() const;
    int stage_channels(int s) const { return base_channels << s; }
    int num_outputs() const { return num_stages < 4 ? num_stages : 4; }
    int total_decoder_blocks() const;

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct ParamTensor {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;

    std::size_t size() const { return values.size(); }
};

/// Flat, name-addressable parameter store. Declaration order is deterministic
/// from the config, so serialization and gradient bookkeeping can walk it
/// stably.
struct ModelParams {
    std::vector<ParamTensor> tensors;
    std::unordered_map<std::string, std::size_t> by_name;

    ParamTensor& add(const std::string& name, std::vector<int> shape);
    ParamTensor& find(const std::string& name);
    const ParamTensor& find(const std::string& name) const;
    bool contains(const std::string& name) const { return by_name.count(name) != 0; }
    std::size_t total_parameters() const;
};

/// Zero-valued parameters with the full set of names/shapes for the config.
ModelParams build_params(const ModelConfig& cfg);

/// Deterministic fan-in scaled init; norm gains start at 1, everything else
/// from a seeded splitmix64 stream so identical seeds give identical bytes.
void init_params(ModelParams& params, const ModelConfig& cfg, std::uint64_t seed);

/// Activations captured during forward so the reverse pass can run without
/// recomputation. Only used by gradient tests; inference passes nullptr.
struct BlockTape {
    Tensor input;
    Tensor dw_out;
    NormStats norm_stats;
    Tensor norm_out;
    Tensor expand_out;
    Tensor gelu_out;
};

struct ModelTape {
    Tensor input;
    std::vector<std::vector<BlockTape>> enc_blocks;
    std::vector<Tensor> down_in;    // encoder stage outputs feeding down convs
    std::vector<Tensor> up_in;      // deep features feeding up convs, by stage
    std::vector<Tensor> up_out;     // up conv outputs (concat lhs)
    std::vector<Tensor> skip_out;   // encoder skips (concat rhs)
    std::vector<Tensor> concat_out; // fuse conv inputs
    std::vector<std::vector<BlockTape>> dec_blocks;
    std::vector<Tensor> head_in;    // by output level
};

Tensor mednext_block(const Tensor& x, const BlockConfig& cfg, const ModelParams& params,
                     const std::string& prefix, BlockTape* tape = nullptr);

/// Reverse pass for one block; accumulates parameter grads into `grads`
/// (same name layout as params) and returns the grad w.r.t. the block input.
Tensor mednext_block_backward(const BlockConfig& cfg, const ModelParams& params,
                              const std::string& prefix, const BlockTape& tape,
                              const Tensor& grad_out, ModelParams& grads);

/// Runs the full network. Returns num_outputs() logit tensors ordered finest
/// first: index i sits at 1/2^i resolution with num_classes channels.
/// Spatial dims must be divisible by 2^(num_stages-1).
std::vector<Tensor> model_forward(const Tensor& x, const ModelConfig& cfg,
                                  const ModelParams& params, ModelTape* tape = nullptr);

/// Reverse pass through the whole network given per-output logit grads.
/// Returns parameter grads in the same layout as `params`.
ModelParams model_backward(const ModelConfig& cfg, const ModelParams& params,
                           const ModelTape& tape, const std::vector<Tensor>& grad_outputs);

/// Structured-freezing plan: encoder frozen to retain pretrained features,
/// the decoder tail (last k blocks plus all upsamplers) and the segmentation
/// heads trainable, optionally the deepest encoder stages too. The
/// lr_multipliers map is bookkeeping only; no optimizer lives here.
struct FreezePlan {
    bool freeze_encoder = true;
    int unfreeze_last_k_decoder_blocks = 0;
    bool unfreeze_heads = true;
    int unfreeze_deepest_encoder_stages = 0;  // 0 or 2
    std::map<std::string, double> lr_multipliers = {
        {"body", 1.0}, {"decoder", 1.0}, {"heads", 2.0}, {"encoder", 0.1}};

    void validate() const;
};

struct FreezeResult {
    std::set<std::string> trainable;
    double trainable_fraction = 0.0;
};

FreezeResult plan_freeze(const ModelConfig& cfg, const ModelParams& params, const FreezePlan& plan);

/// On-disk layout: <dir>/config.json, <dir>/manifest.json (name -> shape) and
/// one raw little-endian float32 blob per tensor named "<name>.f32".
void save_model(const std::filesystem::path& dir, const ModelConfig& cfg, const ModelParams& params);

struct LoadedModel {
    ModelConfig config;
    ModelParams params;
};

LoadedModel load_model(const std::filesystem::path& dir);

}  // namespace emednext
