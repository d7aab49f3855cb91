// draftlab: desk-scale pipeline for sparse draft models and speculative
// decoding. Stages: corpus -> pretrain -> distill -> prune/layerprune ->
// finetune -> macs/bench/report. Each subcommand runs one stage against a
// JSON experiment config; `run` executes everything in dependency order.

#include <cstdio>
#include <iostream>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "draftlab/pipeline.hpp"
#include "json.hpp"

using namespace draftlab;
using nlohmann::json;

namespace {

struct CommonArgs {
    std::string config_path;
    std::vector<std::string> overrides;
    bool force = false;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_force = true) {
    cmd->add_option("--config", args.config_path, "experiment config (JSON)")->required();
    cmd->add_option("--set", args.overrides,
                    "override a config value, e.g. --set specdec.max_new_tokens=48");
    if (with_force) {
        cmd->add_flag("--force", args.force, "re-run even if the stage artifacts exist");
    }
}

int run_stage(const CommonArgs& args, const std::string& stage) {
    ExperimentConfig cfg = load_experiment_config(args.config_path, args.overrides);
    run_pipeline(cfg, {stage}, args.force);
    return 0;
}

TransformerConfig preset_config(const std::string& name) {
    if (name == "llama3.2-3b") return llama32_3b_config();
    throw UsageError("unknown preset: " + name + " (available: llama3.2-3b)");
}

void print_mac_report(const TransformerConfig& cfg, const SparsityPlan* plan, int layer_prune) {
    MacReport r = count_macs(cfg, plan, layer_prune);
    json j{{"attention_projections", r.attention_projections},
           {"ffn", r.ffn},
           {"lm_head", r.lm_head},
           {"total_dense", r.total_dense},
           {"total_effective", r.total_effective},
           {"reduction", r.reduction}};
    std::cout << j.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale sparse-draft speculative decoding laboratory"};
    app.require_subcommand(1);

    CommonArgs corpus_args, pretrain_args, distill_args, prune_args, layer_args, finetune_args,
        bench_args, run_args, specdec_args, report_args;

    app.add_subcommand("corpus", "generate the synthetic task corpora");
    app.add_subcommand("pretrain", "pretrain the dense target model");
    app.add_subcommand("distill", "regenerate labels by sampling the target");
    app.add_subcommand("prune", "one-shot fine-grained pruning of the target");
    app.add_subcommand("layerprune", "remove the most redundant block group");
    app.add_subcommand("finetune", "fine-tune every draft on the distilled data");
    app.add_subcommand("bench", "speculative-decoding benchmark over the held-out suite");
    add_common(app.get_subcommand("corpus"), corpus_args);
    add_common(app.get_subcommand("pretrain"), pretrain_args);
    add_common(app.get_subcommand("distill"), distill_args);
    add_common(app.get_subcommand("prune"), prune_args);
    add_common(app.get_subcommand("layerprune"), layer_args);
    add_common(app.get_subcommand("finetune"), finetune_args);
    add_common(app.get_subcommand("bench"), bench_args);

    auto* run_cmd = app.add_subcommand("run", "run all stages in dependency order");
    std::vector<std::string> run_stages;
    add_common(run_cmd, run_args);
    run_cmd->add_option("--stages", run_stages, "subset of stages to run")->delimiter(',');

    auto* specdec_cmd = app.add_subcommand("specdec", "decode the held-out suite with one draft");
    std::string specdec_draft = "unstructured50_tuned";
    int specdec_k = 0;
    add_common(specdec_cmd, specdec_args, false);
    specdec_cmd->add_option("--draft", specdec_draft,
                            "draft name (<variant>_oneshot / <variant>_tuned) or checkpoint path");
    specdec_cmd->add_option("--k", specdec_k, "draft tokens per round (0 = config value)");

    auto* macs_cmd = app.add_subcommand("macs", "per-token MAC accounting");
    CommonArgs macs_args;
    std::string macs_preset;
    double macs_sparsity = -1.0;
    std::string macs_pattern = "unstructured";
    int macs_layer_prune = 0;
    macs_cmd->add_option("--config", macs_args.config_path, "experiment config (JSON)");
    macs_cmd->add_option("--set", macs_args.overrides, "config override");
    macs_cmd->add_flag("--force", macs_args.force, "re-run even if artifacts exist");
    macs_cmd->add_option("--preset", macs_preset, "published architecture (llama3.2-3b)");
    macs_cmd->add_option("--sparsity", macs_sparsity, "uniform decoder sparsity in [0,1)");
    macs_cmd->add_option("--pattern", macs_pattern, "unstructured | two_four");
    macs_cmd->add_option("--layer-prune", macs_layer_prune, "number of removed decoder blocks");

    auto* report_cmd = app.add_subcommand("report", "comparison arithmetic over bench results");
    double rep_dense = 0.0, rep_variant = 0.0, rep_baseline = 0.0;
    report_cmd->add_option("--config", report_args.config_path, "experiment config (JSON)");
    report_cmd->add_option("--set", report_args.overrides, "config override");
    report_cmd->add_flag("--force", report_args.force, "re-run even if artifacts exist");
    report_cmd->add_option("--dense", rep_dense, "dense-draft MAL (fixture mode)");
    report_cmd->add_option("--variant", rep_variant, "variant MAL (fixture mode)");
    report_cmd->add_option("--baseline", rep_baseline, "baseline MAL (fixture mode)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (app.got_subcommand("corpus")) return run_stage(corpus_args, "corpus");
        if (app.got_subcommand("pretrain")) return run_stage(pretrain_args, "pretrain");
        if (app.got_subcommand("distill")) return run_stage(distill_args, "distill");
        if (app.got_subcommand("prune")) return run_stage(prune_args, "prune");
        if (app.got_subcommand("layerprune")) return run_stage(layer_args, "layerprune");
        if (app.got_subcommand("finetune")) return run_stage(finetune_args, "finetune");
        if (app.got_subcommand("bench")) return run_stage(bench_args, "bench");

        if (app.got_subcommand("run")) {
            ExperimentConfig cfg = load_experiment_config(run_args.config_path,
                                                          run_args.overrides);
            std::set<std::string> stages(run_stages.begin(), run_stages.end());
            run_pipeline(cfg, stages, run_args.force);
            return 0;
        }

        if (app.got_subcommand("specdec")) {
            ExperimentConfig cfg = load_experiment_config(specdec_args.config_path,
                                                          specdec_args.overrides);
            std::string draft_path = specdec_draft;
            if (draft_path.find('/') == std::string::npos) {
                draft_path = cfg.out_dir + "/ckpt/draft_" + specdec_draft + ".dlab";
            }
            Model target = load_checkpoint(cfg.out_dir + "/ckpt/target.dlab");
            Model draft = load_checkpoint(draft_path);
            auto suite = load_tasks(cfg.out_dir + "/corpus/heldout_tasks.jsonl");
            std::vector<DraftUnderTest> duts{{specdec_draft, &draft,
                                              effective_macs_per_token(draft)}};
            BenchConfig bc;
            bc.ks = specdec_k > 0 ? std::vector<int>{specdec_k} : cfg.ks;
            bc.max_new_tokens = cfg.max_new_tokens;
            BenchReport report = bench_specdec(
                duts, target, static_cast<double>(count_macs(target.config).total_dense), suite,
                bc);
            std::cout << bench_report_to_text(report);
            return 0;
        }

        if (app.got_subcommand("macs")) {
            if (!macs_preset.empty()) {
                TransformerConfig cfg = preset_config(macs_preset);
                if (macs_sparsity >= 0.0) {
                    const SparsityPattern pattern = macs_pattern == "two_four"
                                                        ? SparsityPattern::two_four
                                                        : SparsityPattern::unstructured;
                    SparsityPlan plan = SparsityPlan::uniform(cfg, pattern, macs_sparsity);
                    print_mac_report(cfg, &plan, macs_layer_prune);
                } else {
                    print_mac_report(cfg, nullptr, macs_layer_prune);
                }
                return 0;
            }
            if (macs_args.config_path.empty()) {
                throw UsageError("macs requires --config or --preset");
            }
            return run_stage(macs_args, "macs");
        }

        if (app.got_subcommand("report")) {
            if (rep_dense > 0.0 || rep_variant > 0.0 || rep_baseline > 0.0) {
                if (rep_dense <= 0.0 || rep_variant <= 0.0 || rep_baseline <= 0.0) {
                    throw UsageError("fixture mode needs --dense, --variant and --baseline");
                }
                ComparisonRatios r = mal_comparison(rep_dense, rep_variant, rep_baseline);
                json j{{"mal_ratio_variant_over_baseline", r.ratio},
                       {"mal_reduction_vs_dense_pct", r.reduction_pct}};
                std::cout << j.dump(2) << "\n";
                return 0;
            }
            if (report_args.config_path.empty()) {
                throw UsageError("report requires --config or the fixture flags");
            }
            return run_stage(report_args, "report");
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
