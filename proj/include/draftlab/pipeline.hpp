#pragma once

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "draftlab/bench.hpp"
#include "draftlab/checkpoint.hpp"
#include "draftlab/distill.hpp"
#include "draftlab/layerprune.hpp"
#include "draftlab/sparsity.hpp"
#include "draftlab/train.hpp"

// Experiment orchestration. A single JSON document configures every stage;
// stages run in dependency order, write their artifacts plus a provenance
// record under out_dir, and are individually resumable: an existing artifact
// is reused unless force is set, and re-running a deleted stage reproduces it
// bit-identically under the same seed.

namespace draftlab {

struct ConfigError : UsageError {
    explicit ConfigError(const std::string& msg) : UsageError(msg) {}
};

struct PruneVariant {
    std::string name;
    SparsityPattern pattern = SparsityPattern::unstructured;
    double sparsity = 0.5;
    // uniform | owl | angular; non-uniform distributions rescale the
    // per-block sparsity around `sparsity`.
    std::string distribution = "uniform";
};

struct ExperimentConfig {
    uint64_t seed = 0;
    std::string out_dir = "out";

    TransformerConfig model;

    // corpus
    int train_per_task = 60;
    int heldout_per_task = 10;
    int max_span = 6;
    int n_letters = 0;
    int max_operand = 50;

    TrainConfig pretrain;
    double reference_corruption = 0.5;  // pretraining-only reference noise
    SamplerSettings distill;

    // prune
    std::string saliency_method = "activation_weighted";  // or "magnitude"
    int calibration_prompts = 8;
    double owl_m = 5.0;
    double owl_lambda = 0.08;
    bool angular_literal_form = false;
    std::vector<PruneVariant> prune_variants;

    // layerprune
    double layerprune_fraction = 0.5;

    TrainConfig finetune;

    // specdec / bench
    std::vector<int> ks = {5};
    int max_new_tokens = 24;
    bool measure_latency = false;
    double min_timing_seconds = 2.0;
};

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides = {});
ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::vector<std::string>& overrides = {});

// Stage names in dependency order.
const std::vector<std::string>& pipeline_stage_names();

// Paths of the artifacts each stage produces, relative to out_dir.
std::vector<std::string> stage_artifacts(const ExperimentConfig& cfg, const std::string& stage);

// Runs the requested stages (all, when empty) in dependency order. Returns
// the bench report when the bench stage ran or its artifact already exists.
std::optional<BenchReport> run_pipeline(const ExperimentConfig& cfg,
                                        const std::set<std::string>& stages = {},
                                        bool force = false);

// Effective per-token MACs of a masked model: achieved per-matrix sparsities
// feed the weights-only MAC model.
double effective_macs_per_token(const Model& model);

}  // namespace draftlab
