#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "emednext/inference.hpp"
#include "emednext/postprocess.hpp"
#include "emednext/preprocess.hpp"

namespace emednext {

struct ModelEntry {
    std::filesystem::path path;           // model directory
    ClassWeights weights{1.0, 1.0, 1.0};  // per-class ensemble weight (TC, WT, ET)
};

struct EvalConfig {
    int lesion_dilation_vox = 1;
};

/// One config drives every stage. JSON keys mirror the field names; flag
/// overrides are applied by the CLI on top of the parsed file.
struct PipelineConfig {
    std::filesystem::path input_dir;   // <case>/<case>-{flair,t1,t1ce,t2}.nii.gz [+ -seg]
    std::filesystem::path work_dir;    // preprocessed volumes, accumulators, probs, manifest
    std::filesystem::path output_dir;  // final segmentations + evaluation reports
    std::filesystem::path gt_dir;      // defaults to input_dir

    PreprocessConfig preprocess;
    SlidingWindowConfig sliding_window;
    std::vector<ModelEntry> models;
    PostprocessConfig postprocess;
    EvalConfig eval;

    int workers = 1;
    std::uint64_t seed = 0;

    void validate() const;
    static PipelineConfig from_json(const std::string& text);
    static PipelineConfig from_json_file(const std::filesystem::path& path);
};

struct StageResult {
    int cases_total = 0;
    int cases_failed = 0;

    bool ok() const { return cases_failed == 0; }
    void merge(const StageResult& other) {
        cases_total += other.cases_total;
        cases_failed += other.cases_failed;
    }
};

/// Sorted case ids (subdirectories of the input directory).
std::vector<std::string> list_cases(const std::filesystem::path& input_dir);

/// Loaded, runnable ensemble member.
struct PipelineModel {
    std::string id;
    ClassWeights weights;
    ForwardModel forward;
};

/// Builds a forward function from a model directory. Two kinds are supported:
/// a "mednext" parameter directory (default) and a "channel_step" synthetic
/// model that thresholds input channels into logits, used to validate the
/// pipeline end to end without trained weights.
PipelineModel load_pipeline_model(const ModelEntry& entry);

/// Cheap structural check used to reject a broken ensemble before any case
/// runs; throws ConfigError on problems.
void validate_model_dir(const std::filesystem::path& dir);

// Batch drivers. Case-level problems mark the case failed and continue;
// configuration problems throw ConfigError before touching any case.
StageResult cmd_preprocess(const PipelineConfig& cfg);
StageResult cmd_infer(const PipelineConfig& cfg);
StageResult cmd_postprocess(const PipelineConfig& cfg);
StageResult cmd_evaluate(const PipelineConfig& cfg);
StageResult cmd_pipeline(const PipelineConfig& cfg);

// Well-known per-case paths, shared by stages and tests.
std::filesystem::path preprocessed_image_path(const PipelineConfig& cfg, const std::string& case_id);
std::filesystem::path preprocessed_label_path(const PipelineConfig& cfg, const std::string& case_id);
std::filesystem::path case_meta_path(const PipelineConfig& cfg, const std::string& case_id);
std::filesystem::path accumulator_dir(const PipelineConfig& cfg, const std::string& case_id);
std::filesystem::path probs_path(const PipelineConfig& cfg, const std::string& case_id);
std::filesystem::path segmentation_path(const PipelineConfig& cfg, const std::string& case_id);

}  // namespace emednext
