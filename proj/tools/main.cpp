#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "emednext/error.hpp"
#include "emednext/model.hpp"
#include "emednext/pipeline.hpp"

namespace {

using emednext::PipelineConfig;
using emednext::StageResult;

constexpr int kExitOk = 0;
constexpr int kExitCaseFailures = 1;
constexpr int kExitConfigError = 2;

struct CommonOptions {
    std::string config_path;
    std::optional<std::string> input_dir, work_dir, output_dir, gt_dir;
    std::optional<int> workers;
    std::optional<std::uint64_t> seed;
    std::optional<float> tau_tc, tau_wt, tau_et;
    std::optional<int> gamma_tc, gamma_wt, gamma_et;
    std::optional<float> eta_tc, eta_wt, eta_et;
    std::optional<int> max_components;
};

int default_workers() {
    if (const char* env = std::getenv("EMEDNEXT_WORKERS")) {
        try {
            return std::max(1, std::stoi(env));
        } catch (...) {
            return 1;
        }
    }
    return 1;
}

void add_common_options(CLI::App* cmd, CommonOptions& opts) {
    cmd->add_option("--config", opts.config_path, "pipeline config JSON")->required();
    cmd->add_option("--input-dir", opts.input_dir, "override input directory");
    cmd->add_option("--work-dir", opts.work_dir, "override work directory");
    cmd->add_option("--output-dir", opts.output_dir, "override output directory");
    cmd->add_option("--gt-dir", opts.gt_dir, "override ground-truth directory");
    cmd->add_option("--workers", opts.workers, "worker pool size (default $EMEDNEXT_WORKERS or 1)");
    cmd->add_option("--seed", opts.seed, "run seed recorded in manifests");
    cmd->add_option("--tau-tc", opts.tau_tc, "TC threshold override");
    cmd->add_option("--tau-wt", opts.tau_wt, "WT threshold override");
    cmd->add_option("--tau-et", opts.tau_et, "ET threshold override");
    cmd->add_option("--gamma-tc", opts.gamma_tc, "TC min component voxels");
    cmd->add_option("--gamma-wt", opts.gamma_wt, "WT min component voxels");
    cmd->add_option("--gamma-et", opts.gamma_et, "ET min component voxels");
    cmd->add_option("--eta-tc", opts.eta_tc, "TC min mean probability");
    cmd->add_option("--eta-wt", opts.eta_wt, "WT min mean probability");
    cmd->add_option("--eta-et", opts.eta_et, "ET min mean probability");
    cmd->add_option("--max-components", opts.max_components, "largest-K component cap");
}

PipelineConfig build_config(const CommonOptions& opts) {
    PipelineConfig cfg = PipelineConfig::from_json_file(opts.config_path);
    if (opts.input_dir) cfg.input_dir = *opts.input_dir;
    if (opts.work_dir) cfg.work_dir = *opts.work_dir;
    if (opts.output_dir) cfg.output_dir = *opts.output_dir;
    if (opts.gt_dir) cfg.gt_dir = *opts.gt_dir;
    cfg.workers = opts.workers.value_or(cfg.workers > 1 ? cfg.workers : default_workers());
    if (opts.seed) cfg.seed = *opts.seed;
    if (opts.tau_tc) cfg.postprocess.tau_tc = *opts.tau_tc;
    if (opts.tau_wt) cfg.postprocess.tau_wt = *opts.tau_wt;
    if (opts.tau_et) cfg.postprocess.tau_et = *opts.tau_et;
    if (opts.gamma_tc) cfg.postprocess.gamma_tc = *opts.gamma_tc;
    if (opts.gamma_wt) cfg.postprocess.gamma_wt = *opts.gamma_wt;
    if (opts.gamma_et) cfg.postprocess.gamma_et = *opts.gamma_et;
    if (opts.eta_tc) cfg.postprocess.eta_tc = *opts.eta_tc;
    if (opts.eta_wt) cfg.postprocess.eta_wt = *opts.eta_wt;
    if (opts.eta_et) cfg.postprocess.eta_et = *opts.eta_et;
    if (opts.max_components) cfg.postprocess.max_components = *opts.max_components;
    if (cfg.gt_dir.empty()) cfg.gt_dir = cfg.input_dir;
    cfg.validate();
    return cfg;
}

int report(const std::string& stage, const StageResult& result) {
    std::cout << "[" << stage << "] " << result.cases_total << " case(s), " << result.cases_failed
              << " failed\n";
    return result.cases_failed == 0 ? kExitOk : kExitCaseFailures;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"emednext: volumetric brain-tumor segmentation pipeline"};
    app.require_subcommand(1);

    CommonOptions opts;
    std::string stage_name;
    for (const char* name : {"preprocess", "infer", "postprocess", "evaluate", "pipeline"}) {
        CLI::App* cmd = app.add_subcommand(name, std::string("run the ") + name + " stage");
        add_common_options(cmd, opts);
        cmd->callback([&stage_name, name] { stage_name = name; });
    }

    // Synthetic random-weight model directories for smoke tests and demos.
    struct {
        std::string out;
        std::uint64_t seed = 1;
        int in_channels = 5;
        int base_channels = 4;
        int num_stages = 4;
        int blocks = 1;
        int ratio = 2;
    } make_opts;
    CLI::App* make_cmd = app.add_subcommand("make-model", "write a random-weight model directory");
    make_cmd->add_option("--out", make_opts.out, "output directory")->required();
    make_cmd->add_option("--seed", make_opts.seed, "init seed");
    make_cmd->add_option("--in-channels", make_opts.in_channels, "input channels");
    make_cmd->add_option("--base-channels", make_opts.base_channels, "stage-0 width");
    make_cmd->add_option("--num-stages", make_opts.num_stages, "encoder stages");
    make_cmd->add_option("--blocks", make_opts.blocks, "blocks per stage");
    make_cmd->add_option("--ratio", make_opts.ratio, "channel expansion ratio");
    make_cmd->callback([&stage_name] { stage_name = "make-model"; });

    CLI11_PARSE(app, argc, argv);

    try {
        if (stage_name == "make-model") {
            emednext::ModelConfig mc;
            mc.in_channels = make_opts.in_channels;
            mc.base_channels = make_opts.base_channels;
            mc.num_stages = make_opts.num_stages;
            mc.blocks_per_stage.assign(make_opts.num_stages, make_opts.blocks);
            mc.expansion_ratios.assign(make_opts.num_stages, make_opts.ratio);
            emednext::ModelParams params = emednext::build_params(mc);
            emednext::init_params(params, mc, make_opts.seed);
            emednext::save_model(make_opts.out, mc, params);
            std::cout << "wrote model with " << params.total_parameters() << " parameters to "
                      << make_opts.out << "\n";
            return kExitOk;
        }

        const PipelineConfig cfg = build_config(opts);
        if (stage_name == "preprocess") return report(stage_name, emednext::cmd_preprocess(cfg));
        if (stage_name == "infer") return report(stage_name, emednext::cmd_infer(cfg));
        if (stage_name == "postprocess") return report(stage_name, emednext::cmd_postprocess(cfg));
        if (stage_name == "evaluate") return report(stage_name, emednext::cmd_evaluate(cfg));
        if (stage_name == "pipeline") return report(stage_name, emednext::cmd_pipeline(cfg));
        std::cerr << "unknown stage " << stage_name << "\n";
        return kExitConfigError;
    } catch (const emednext::ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfigError;
    }
}
