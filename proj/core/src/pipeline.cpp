#include "emednext/pipeline.hpp"

#include <atomic>
#include <chrono>
#include <fstream>
#include <memory>
#include <mutex>
#include <set>
#include <thread>

#include <json.hpp>

#include "emednext/error.hpp"
#include "emednext/hash.hpp"
#include "emednext/metrics.hpp"
#include "emednext/model.hpp"
#include "emednext/nifti.hpp"

namespace emednext {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

/// Append-only JSON-lines manifest; writes are serialized through one mutex.
class ManifestWriter {
public:
    explicit ManifestWriter(const fs::path& path) : path_(path) {
        fs::create_directories(path.parent_path());
    }

    void append(json line) {
        std::lock_guard lock(mutex_);
        std::ofstream f(path_, std::ios::app);
        if (!f) throw IoError("cannot append to manifest " + path_.string());
        f << line.dump() << "\n";
    }

private:
    fs::path path_;
    std::mutex mutex_;
};

/// Runs fn(case_index) over a worker pool; each case is handled by exactly
/// one worker. Exceptions must be handled inside fn.
void parallel_cases(int workers, std::size_t n, const std::function<void(std::size_t)>& fn) {
    workers = std::max(1, std::min<int>(workers, static_cast<int>(n == 0 ? 1 : n)));
    if (workers == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (int w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n) return;
                fn(i);
            }
        });
    }
    for (auto& t : pool) t.join();
}

fs::path modality_path(const fs::path& input_dir, const std::string& case_id,
                       const std::string& suffix) {
    const fs::path gz = input_dir / case_id / (case_id + "-" + suffix + ".nii.gz");
    if (fs::exists(gz)) return gz;
    const fs::path plain = input_dir / case_id / (case_id + "-" + suffix + ".nii");
    if (fs::exists(plain)) return plain;
    return gz;  // canonical name for the error message
}

std::string read_text_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw IoError("cannot open " + p.string());
    return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

void write_text_file(const fs::path& p, const std::string& text) {
    fs::create_directories(p.parent_path());
    std::ofstream f(p, std::ios::trunc);
    if (!f) throw IoError("cannot write " + p.string());
    f << text;
}

template <typename T, std::size_t N>
std::array<T, N> json_array(const json& j, const char* key, const std::array<T, N>& fallback) {
    if (!j.contains(key)) return fallback;
    return j[key].get<std::array<T, N>>();
}

struct CaseOutcome {
    std::string case_id;
    bool failed = false;
    std::string error;
};

/// Shared skeleton for a per-case stage: runs body(case_id) under the pool,
/// records one manifest line per case and counts failures.
StageResult run_stage(const PipelineConfig& cfg, const std::string& stage,
                      const std::vector<std::string>& cases, ManifestWriter& manifest,
                      const std::function<json(const std::string&)>& body) {
    StageResult result;
    result.cases_total = static_cast<int>(cases.size());
    std::vector<CaseOutcome> outcomes(cases.size());

    parallel_cases(cfg.workers, cases.size(), [&](std::size_t i) {
        const std::string& case_id = cases[i];
        json line;
        line["case_id"] = case_id;
        line["stage"] = stage;
        line["started_at"] = iso_now();
        try {
            json extra = body(case_id);
            line.update(extra);
            line["status"] = "ok";
        } catch (const std::exception& e) {
            line["status"] = "failed";
            line["error"] = e.what();
            outcomes[i].failed = true;
            outcomes[i].error = e.what();
        }
        line["finished_at"] = iso_now();
        manifest.append(std::move(line));
    });

    for (const auto& o : outcomes) {
        if (o.failed) ++result.cases_failed;
    }
    return result;
}

ManifestWriter make_manifest(const PipelineConfig& cfg) {
    return ManifestWriter(cfg.work_dir / "manifest.jsonl");
}

}  // namespace

void PipelineConfig::validate() const {
    if (input_dir.empty() || work_dir.empty() || output_dir.empty()) {
        throw ConfigError("input_dir, work_dir and output_dir are all required");
    }
    const std::set<std::string> dirs{input_dir.string(), work_dir.string(), output_dir.string()};
    if (dirs.size() != 3) throw ConfigError("input, work and output directories must be distinct");
    if (workers < 1) throw ConfigError("workers must be >= 1");
    preprocess.validate();
    sliding_window.validate();
    postprocess.validate();
    if (eval.lesion_dilation_vox < 0) throw ConfigError("lesion dilation must be >= 0");
    for (const auto& m : models) {
        for (double w : m.weights) {
            if (!(w >= 0.0)) throw ConfigError("ensemble weights must be nonnegative");
        }
    }
    if (!models.empty()) {
        for (int cls = 0; cls < 3; ++cls) {
            double total = 0.0;
            for (const auto& m : models) total += m.weights[cls];
            if (!(total > 0.0)) throw ConfigError("every class needs positive total ensemble weight");
        }
    }
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
    json j = json::parse(text, nullptr, /*allow_exceptions=*/false);
    if (j.is_discarded()) throw ConfigError("pipeline config: invalid JSON");

    PipelineConfig cfg;
    cfg.input_dir = j.value("input_dir", std::string{});
    cfg.work_dir = j.value("work_dir", std::string{});
    cfg.output_dir = j.value("output_dir", std::string{});
    cfg.gt_dir = j.value("gt_dir", std::string{});
    cfg.workers = j.value("workers", 1);
    cfg.seed = j.value("seed", std::uint64_t{0});

    if (j.contains("preprocess")) {
        const json& p = j["preprocess"];
        cfg.preprocess.target_spacing = json_array(p, "target_spacing", cfg.preprocess.target_spacing);
        cfg.preprocess.target_shape = json_array(p, "target_shape", cfg.preprocess.target_shape);
        cfg.preprocess.intensity_cap = p.value("intensity_cap", cfg.preprocess.intensity_cap);
        cfg.preprocess.add_foreground_channel =
            p.value("add_foreground_channel", cfg.preprocess.add_foreground_channel);
    }
    if (j.contains("sliding_window")) {
        const json& s = j["sliding_window"];
        cfg.sliding_window.patch_shape = json_array(s, "patch_shape", cfg.sliding_window.patch_shape);
        cfg.sliding_window.overlap_fraction =
            s.value("overlap_fraction", cfg.sliding_window.overlap_fraction);
        const std::string blend = s.value("blend", std::string("gaussian"));
        if (blend == "gaussian") {
            cfg.sliding_window.blend = SlidingWindowConfig::Blend::gaussian;
        } else if (blend == "uniform") {
            cfg.sliding_window.blend = SlidingWindowConfig::Blend::uniform;
        } else {
            throw ConfigError("sliding_window.blend must be 'gaussian' or 'uniform'");
        }
        cfg.sliding_window.tta_passes = s.value("tta_passes", cfg.sliding_window.tta_passes);
    }
    if (j.contains("models")) {
        for (const auto& m : j["models"]) {
            ModelEntry entry;
            entry.path = m.value("path", std::string{});
            if (entry.path.empty()) throw ConfigError("every model entry needs a path");
            entry.weights = json_array(m, "weights", entry.weights);
            cfg.models.push_back(std::move(entry));
        }
    }
    if (j.contains("postprocess")) {
        cfg.postprocess = PostprocessConfig::from_json(j["postprocess"].dump());
    }
    if (j.contains("evaluate")) {
        cfg.eval.lesion_dilation_vox =
            j["evaluate"].value("lesion_dilation_vox", cfg.eval.lesion_dilation_vox);
    }
    if (cfg.gt_dir.empty()) cfg.gt_dir = cfg.input_dir;
    cfg.validate();
    return cfg;
}

PipelineConfig PipelineConfig::from_json_file(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file " + path.string());
    return from_json(std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()));
}

std::vector<std::string> list_cases(const fs::path& input_dir) {
    if (!fs::is_directory(input_dir)) {
        throw ConfigError("input directory does not exist: " + input_dir.string());
    }
    std::vector<std::string> cases;
    for (const auto& entry : fs::directory_iterator(input_dir)) {
        if (entry.is_directory()) cases.push_back(entry.path().filename().string());
    }
    std::sort(cases.begin(), cases.end());
    return cases;
}

fs::path preprocessed_image_path(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.work_dir / "preprocessed" / (case_id + "-img.nii.gz");
}
fs::path preprocessed_label_path(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.work_dir / "preprocessed" / (case_id + "-seg.nii.gz");
}
fs::path case_meta_path(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.work_dir / "preprocessed" / (case_id + "-meta.json");
}
fs::path accumulator_dir(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.work_dir / "acc" / case_id;
}
fs::path probs_path(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.work_dir / "probs" / (case_id + "-probs.nii.gz");
}
fs::path segmentation_path(const PipelineConfig& cfg, const std::string& case_id) {
    return cfg.output_dir / (case_id + "-seg.nii.gz");
}

void validate_model_dir(const fs::path& dir) {
    const fs::path cfg_path = dir / "config.json";
    if (!fs::exists(cfg_path)) throw ConfigError("model directory lacks config.json: " + dir.string());
    json j = json::parse(read_text_file(cfg_path), nullptr, false);
    if (j.is_discarded()) throw ConfigError(dir.string() + ": model config.json is not valid JSON");
    const std::string kind = j.value("kind", std::string("mednext"));
    if (kind == "channel_step") {
        if (!j.contains("source_channels") || !j.contains("thresholds")) {
            throw ConfigError(dir.string() + ": channel_step model needs source_channels and thresholds");
        }
        return;
    }
    if (kind != "mednext") throw ConfigError(dir.string() + ": unknown model kind '" + kind + "'");
    try {
        const ModelConfig mc = ModelConfig::from_json(j.dump());
        const ModelParams expect = build_params(mc);
        json manifest = json::parse(read_text_file(dir / "manifest.json"), nullptr, false);
        if (manifest.is_discarded() || !manifest.contains("tensors") ||
            manifest["tensors"].size() != expect.tensors.size()) {
            throw ConfigError(dir.string() + ": corrupt model manifest");
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError(dir.string() + ": " + e.what());
    }
}

PipelineModel load_pipeline_model(const ModelEntry& entry) {
    PipelineModel out;
    out.id = fs::weakly_canonical(entry.path).string();
    out.weights = entry.weights;

    json j = json::parse(read_text_file(entry.path / "config.json"), nullptr, false);
    if (j.is_discarded()) throw ConfigError(entry.path.string() + ": model config.json is not valid JSON");
    const std::string kind = j.value("kind", std::string("mednext"));

    if (kind == "channel_step") {
        const auto sources = j.at("source_channels").get<std::array<int, 3>>();
        const auto thresholds = j.at("thresholds").get<std::array<double, 3>>();
        const double scale = j.value("logit_scale", 12.0);
        out.forward = [sources, thresholds, scale](const Tensor& x) {
            for (int c : sources) {
                if (c < 0 || c >= x.channels) throw ShapeError("channel_step source channel out of range");
            }
            Tensor logits(3, x.extent);
            const std::size_t n = x.spatial_size();
            for (int cls = 0; cls < 3; ++cls) {
                const float* src = x.values.data() + static_cast<std::size_t>(sources[cls]) * n;
                float* dst = logits.values.data() + static_cast<std::size_t>(cls) * n;
                for (std::size_t i = 0; i < n; ++i) {
                    dst[i] = static_cast<float>(src[i] >= thresholds[cls] ? scale : -scale);
                }
            }
            return logits;
        };
        return out;
    }

    if (kind != "mednext") throw ConfigError(entry.path.string() + ": unknown model kind '" + kind + "'");
    auto loaded = std::make_shared<LoadedModel>(load_model(entry.path));
    if (loaded->config.num_classes != 3) {
        throw ConfigError(entry.path.string() + ": ensemble members must emit 3 classes");
    }
    out.forward = [loaded](const Tensor& x) {
        return model_forward(x, loaded->config, loaded->params)[0];
    };
    return out;
}

StageResult cmd_preprocess(const PipelineConfig& cfg) {
    cfg.validate();
    const auto cases = list_cases(cfg.input_dir);
    ManifestWriter manifest = make_manifest(cfg);

    return run_stage(cfg, "preprocess", cases, manifest, [&](const std::string& case_id) {
        static const char* kSuffixes[4] = {"flair", "t1", "t1ce", "t2"};
        json inputs;
        std::vector<Volume> modalities;
        modalities.reserve(4);
        for (const char* suffix : kSuffixes) {
            const fs::path p = modality_path(cfg.input_dir, case_id, suffix);
            if (!fs::exists(p)) throw IoError("missing modality file " + p.string());
            inputs[suffix] = hash_to_hex(file_fnv1a64(p));
            modalities.push_back(read_nifti(p));
        }
        std::optional<LabelMap> label;
        const fs::path seg = modality_path(cfg.input_dir, case_id, "seg");
        if (fs::exists(seg)) {
            inputs["seg"] = hash_to_hex(file_fnv1a64(seg));
            label = read_label_nifti(seg);
        }

        StackedCase stacked = stack_case(modalities, label, cfg.preprocess, case_id);

        const fs::path img_path = preprocessed_image_path(cfg, case_id);
        fs::create_directories(img_path.parent_path());
        write_nifti(stacked.image, img_path);
        json outputs = json::array({img_path.string()});
        if (stacked.label) {
            write_nifti(*stacked.label, preprocessed_label_path(cfg, case_id));
            outputs.push_back(preprocessed_label_path(cfg, case_id).string());
        }
        write_text_file(case_meta_path(cfg, case_id), case_meta_to_json(stacked.meta));
        outputs.push_back(case_meta_path(cfg, case_id).string());

        json extra;
        extra["inputs"] = std::move(inputs);
        extra["outputs"] = std::move(outputs);
        extra["warnings"] = stacked.meta.warnings;
        return extra;
    });
}

StageResult cmd_infer(const PipelineConfig& cfg) {
    cfg.validate();
    if (cfg.models.empty()) throw ConfigError("infer needs at least one model");
    for (const auto& entry : cfg.models) validate_model_dir(entry.path);  // abort before any case

    const auto cases = list_cases(cfg.input_dir);
    ManifestWriter manifest = make_manifest(cfg);
    StageResult result;

    // Pass 1: accumulate each model across all cases; one model in memory at
    // a time, so peak memory stays at a single model plus one accumulator.
    for (std::size_t mi = 0; mi < cfg.models.size(); ++mi) {
        const PipelineModel model = load_pipeline_model(cfg.models[mi]);
        const std::string stage = "infer/model" + std::to_string(mi);
        StageResult pass = run_stage(cfg, stage, cases, manifest, [&](const std::string& case_id) {
            json extra;
            extra["model"] = model.id;
            const fs::path acc_dir = accumulator_dir(cfg, case_id);

            EnsembleAccumulator acc;
            if (accumulator_exists(acc_dir)) {
                acc = load_accumulator(acc_dir);
                if (acc.has_model(model.id)) {
                    extra["skipped"] = "already accumulated";
                    return extra;
                }
            }

            const fs::path img_path = preprocessed_image_path(cfg, case_id);
            if (!fs::exists(img_path)) throw IoError("missing preprocessed volume " + img_path.string());
            const Volume vol = read_nifti(img_path);
            if (acc.sums[0].empty()) acc = make_accumulator(vol.geometry);

            const ProbMaps probs = tta_predict(vol, model.forward, cfg.sliding_window);
            accumulate_model(acc, probs, model.weights, model.id);
            save_accumulator(acc, acc_dir);
            extra["outputs"] = json::array({acc_dir.string()});
            return extra;
        });
        result.cases_total = pass.cases_total;
        result.cases_failed = std::max(result.cases_failed, pass.cases_failed);
    }

    // Pass 2: normalize by the recorded weight totals.
    StageResult norm = run_stage(cfg, "infer/normalize", cases, manifest,
                                 [&](const std::string& case_id) {
        const fs::path acc_dir = accumulator_dir(cfg, case_id);
        if (!accumulator_exists(acc_dir)) throw IoError("missing accumulator for case " + case_id);
        const EnsembleAccumulator acc = load_accumulator(acc_dir);
        const ProbMaps probs = normalize_ensemble(acc);

        const fs::path out = probs_path(cfg, case_id);
        fs::create_directories(out.parent_path());
        write_nifti(probmaps_to_volume(probs), out);
        json extra;
        extra["outputs"] = json::array({out.string()});
        return extra;
    });
    result.cases_failed = std::max(result.cases_failed, norm.cases_failed);
    return result;
}

StageResult cmd_postprocess(const PipelineConfig& cfg) {
    cfg.validate();
    const auto cases = list_cases(cfg.input_dir);
    ManifestWriter manifest = make_manifest(cfg);

    return run_stage(cfg, "postprocess", cases, manifest, [&](const std::string& case_id) {
        const fs::path meta_path = case_meta_path(cfg, case_id);
        if (!fs::exists(meta_path)) throw IoError("missing case meta " + meta_path.string());
        const CaseMeta meta = case_meta_from_json(read_text_file(meta_path));

        const fs::path pp = probs_path(cfg, case_id);
        if (!fs::exists(pp)) throw IoError("missing probabilities " + pp.string());
        const ProbMaps probs = volume_to_probmaps(read_nifti(pp));

        const LabelMap model_space = postprocess_pipeline(probs, cfg.postprocess);
        const LabelMap restored = restore_to_original_space(model_space, meta);

        const fs::path out = segmentation_path(cfg, case_id);
        fs::create_directories(out.parent_path());
        write_nifti(restored, out);
        json extra;
        extra["outputs"] = json::array({out.string()});
        return extra;
    });
}

StageResult cmd_evaluate(const PipelineConfig& cfg) {
    cfg.validate();
    const auto cases = list_cases(cfg.input_dir);
    ManifestWriter manifest = make_manifest(cfg);

    std::vector<std::optional<CaseMetrics>> rows(cases.size());
    std::vector<std::string> row_case(cases.size());

    StageResult result = run_stage(cfg, "evaluate", cases, manifest, [&](const std::string& case_id) {
        const fs::path pred_path = segmentation_path(cfg, case_id);
        if (!fs::exists(pred_path)) throw IoError("missing prediction " + pred_path.string());
        const fs::path gt_path = modality_path(cfg.gt_dir, case_id, "seg");
        if (!fs::exists(gt_path)) throw IoError("missing ground truth " + gt_path.string());

        const LabelMap pred = read_label_nifti(pred_path);
        const LabelMap gt = read_label_nifti(gt_path);

        LesionwiseConfig lw;
        lw.dilation_vox = cfg.eval.lesion_dilation_vox;
        const CaseMetrics row = evaluate_case(pred, gt, lw, case_id);

        const std::size_t idx =
            static_cast<std::size_t>(std::find(cases.begin(), cases.end(), case_id) - cases.begin());
        rows[idx] = row;
        json extra;
        extra["dice_wt"] = row.per_class[0].dice;
        extra["dice_tc"] = row.per_class[1].dice;
        extra["dice_et"] = row.per_class[2].dice;
        return extra;
    });

    std::vector<CaseMetrics> evaluated;
    for (auto& r : rows) {
        if (r) evaluated.push_back(std::move(*r));
    }
    const CohortReport report = aggregate_cohort(std::move(evaluated));
    write_text_file(cfg.output_dir / "report.json", report_to_json(report));
    write_text_file(cfg.output_dir / "report.csv", report_to_csv(report));
    return result;
}

StageResult cmd_pipeline(const PipelineConfig& cfg) {
    StageResult total = cmd_preprocess(cfg);
    StageResult stage = cmd_infer(cfg);
    total.cases_failed = std::max(total.cases_failed, stage.cases_failed);
    stage = cmd_postprocess(cfg);
    total.cases_failed = std::max(total.cases_failed, stage.cases_failed);
    stage = cmd_evaluate(cfg);
    total.cases_failed = std::max(total.cases_failed, stage.cases_failed);
    return total;
}

}  // namespace emednext
