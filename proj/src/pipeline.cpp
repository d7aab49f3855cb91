#include "draftlab/pipeline.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>

#include "json.hpp"

namespace draftlab {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void reject_unknown_keys(const json& j, const std::set<std::string>& allowed,
                         const std::string& section) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.count(key)) {
            throw ConfigError("unknown key '" + key + "' in config section '" + section + "'");
        }
    }
}

template <typename T>
void maybe(const json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

void parse_train_section(const json& j, const std::string& name, TrainConfig& out) {
    reject_unknown_keys(j, {"lr_peak", "warmup_frac", "total_steps", "batch_size", "beta1",
                            "beta2", "epsilon", "weight_decay", "grad_clip", "max_seq"},
                        name);
    maybe(j, "lr_peak", out.lr_peak);
    maybe(j, "warmup_frac", out.warmup_frac);
    maybe(j, "total_steps", out.total_steps);
    maybe(j, "batch_size", out.batch_size);
    maybe(j, "beta1", out.beta1);
    maybe(j, "beta2", out.beta2);
    maybe(j, "epsilon", out.epsilon);
    maybe(j, "weight_decay", out.weight_decay);
    maybe(j, "grad_clip", out.grad_clip);
    maybe(j, "max_seq", out.max_seq);
}

json parse_override_value(const std::string& text) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) return json(text);  // plain string
    return v;
}

void apply_override(json& root, const std::string& spec) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) {
        throw ConfigError("override must look like section.key=value: " + spec);
    }
    const std::string path = spec.substr(0, eq);
    json* node = &root;
    size_t start = 0;
    while (true) {
        const auto dot = path.find('.', start);
        const std::string key = path.substr(start, dot - start);
        if (key.empty()) throw ConfigError("bad override path: " + spec);
        if (dot == std::string::npos) {
            (*node)[key] = parse_override_value(spec.substr(eq + 1));
            break;
        }
        node = &(*node)[key];
        start = dot + 1;
    }
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open: " + path);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

const std::vector<std::string> kStages = {"corpus",    "pretrain", "distill",
                                          "prune",     "layerprune", "finetune",
                                          "macs",      "bench",    "report"};

struct Paths {
    fs::path root;
    explicit Paths(const ExperimentConfig& cfg) : root(cfg.out_dir) {}
    fs::path train_tasks() const { return root / "corpus" / "train_tasks.jsonl"; }
    fs::path heldout_tasks() const { return root / "corpus" / "heldout_tasks.jsonl"; }
    fs::path target_ckpt() const { return root / "ckpt" / "target.dlab"; }
    fs::path pretrain_curve() const { return root / "curves" / "pretrain_target.jsonl"; }
    fs::path distilled() const { return root / "data" / "self_distilled.jsonl"; }
    fs::path oneshot(const std::string& v) const {
        return root / "ckpt" / ("draft_" + v + "_oneshot.dlab");
    }
    fs::path tuned(const std::string& v) const {
        return root / "ckpt" / ("draft_" + v + "_tuned.dlab");
    }
    fs::path tune_curve(const std::string& v) const {
        return root / "curves" / ("finetune_" + v + ".jsonl");
    }
    fs::path macs_report() const { return root / "report" / "macs.json"; }
    fs::path bench_json() const { return root / "report" / "bench.json"; }
    fs::path bench_text() const { return root / "report" / "bench.txt"; }
    fs::path comparison() const { return root / "report" / "comparison.json"; }
    fs::path provenance(const std::string& stage) const {
        return root / "provenance" / (stage + ".json");
    }
};

constexpr const char* kLayerPruned = "layer_pruned";

std::vector<std::string> variant_names(const ExperimentConfig& cfg) {
    std::vector<std::string> names;
    for (const auto& v : cfg.prune_variants) names.push_back(v.name);
    return names;
}

void require_artifact(const fs::path& p, const std::string& producing_stage) {
    if (!fs::exists(p)) {
        throw UsageError("missing artifact '" + p.string() + "'; run the '" + producing_stage +
                         "' stage first");
    }
}

void write_provenance(const Paths& paths, const std::string& stage, uint64_t seed,
                      const std::vector<fs::path>& inputs, const std::vector<fs::path>& outputs,
                      json settings = json::object()) {
    json j{{"stage", stage}, {"seed", seed}, {"settings", std::move(settings)}};
    json in = json::object();
    for (const auto& p : inputs) in[p.string()] = checkpoint_digest(p.string());
    j["inputs"] = in;
    json out = json::array();
    for (const auto& p : outputs) out.push_back(p.string());
    j["outputs"] = out;
    write_file(paths.provenance(stage), j.dump(2) + "\n");
}

void write_curve(const fs::path& path, const TrainResult& result) {
    std::string text;
    for (const auto& p : result.curve) {
        text += json{{"step", p.step}, {"lr", p.lr}, {"loss", p.loss}}.dump() + "\n";
    }
    write_file(path, text);
}

CorpusSpec corpus_spec(const ExperimentConfig& cfg, int per_task) {
    CorpusSpec spec;
    spec.vocab_size = cfg.model.vocab_size;
    spec.max_span = cfg.max_span;
    spec.n_letters = cfg.n_letters;
    spec.max_operand = cfg.max_operand;
    spec.max_seq = cfg.model.max_seq;
    for (TaskKind kind : {TaskKind::copy_retrieval, TaskKind::arithmetic, TaskKind::mapping,
                          TaskKind::summary}) {
        spec.counts[kind] = per_task;
    }
    return spec;
}

std::vector<TokenSeq> calibration_prompts(const ExperimentConfig& cfg,
                                          const std::vector<TaskSample>& tasks) {
    std::vector<TokenSeq> out;
    const int n = std::min<int>(cfg.calibration_prompts, static_cast<int>(tasks.size()));
    for (int i = 0; i < n; ++i) out.push_back(inference_prompt(tasks[i]));
    if (out.empty()) throw UsageError("calibration set is empty");
    return out;
}

// ---- stages -------------------------------------------------------------

void stage_corpus(const ExperimentConfig& cfg, const Paths& paths) {
    auto train = synth_corpus(mix_seed(cfg.seed, 1), corpus_spec(cfg, cfg.train_per_task));
    auto heldout = synth_corpus(mix_seed(cfg.seed, 2), corpus_spec(cfg, cfg.heldout_per_task));
    fs::create_directories(paths.train_tasks().parent_path());
    save_tasks(paths.train_tasks().string(), train);
    save_tasks(paths.heldout_tasks().string(), heldout);
    write_provenance(paths, "corpus", cfg.seed, {}, {paths.train_tasks(), paths.heldout_tasks()},
                     json{{"train_per_task", cfg.train_per_task},
                          {"heldout_per_task", cfg.heldout_per_task}});
}

void stage_pretrain(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.train_tasks(), "corpus");
    auto tasks = load_tasks(paths.train_tasks().string());
    // Two renderings per task: the plain answer format used at evaluation
    // time, and the referenced format that distillation prompts rely on.
    std::vector<TokenSeq> corpus;
    corpus.reserve(2 * tasks.size());
    std::mt19937_64 ref_rng(mix_seed(cfg.seed, 0x52454652ULL));
    for (const auto& t : tasks) {
        corpus.push_back(render_training_sequence(t.prompt, t.label).first);
        corpus.push_back(render_referenced_sequence(t, cfg.model.max_seq, cfg.model.vocab_size,
                                                    cfg.reference_corruption, ref_rng));
    }

    Model target = init_model<float>(cfg.model, mix_seed(cfg.seed, 3));
    TrainConfig tc = cfg.pretrain;
    tc.seed = mix_seed(cfg.seed, 4);
    auto result = pretrain_dense(target, corpus, tc);
    fs::create_directories(paths.target_ckpt().parent_path());
    save_checkpoint(paths.target_ckpt().string(), target);
    write_curve(paths.pretrain_curve(), result);
    write_provenance(paths, "pretrain", cfg.seed, {paths.train_tasks()},
                     {paths.target_ckpt(), paths.pretrain_curve()},
                     json{{"final_loss", result.final_loss}, {"steps", tc.total_steps}});
}

void stage_distill(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.train_tasks(), "corpus");
    require_artifact(paths.target_ckpt(), "pretrain");
    Model target = load_checkpoint(paths.target_ckpt().string());
    auto tasks = load_tasks(paths.train_tasks().string());
    auto data = self_distill(target, tasks, cfg.distill, mix_seed(cfg.seed, 5),
                             checkpoint_digest(paths.target_ckpt().string()));
    fs::create_directories(paths.distilled().parent_path());
    save_dataset(paths.distilled().string(), data);
    write_provenance(paths, "distill", cfg.seed, {paths.target_ckpt(), paths.train_tasks()},
                     {paths.distilled()},
                     json{{"p", cfg.distill.p},
                          {"temperature", cfg.distill.temperature},
                          {"max_gen", cfg.distill.max_gen}});
}

SaliencyMethod parse_saliency_method(const std::string& name) {
    if (name == "magnitude") return SaliencyMethod::magnitude;
    if (name == "activation_weighted") return SaliencyMethod::activation_weighted;
    throw ConfigError("unknown saliency method: " + name);
}

void stage_prune(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.target_ckpt(), "pretrain");
    require_artifact(paths.train_tasks(), "corpus");
    Model target = load_checkpoint(paths.target_ckpt().string());
    auto tasks = load_tasks(paths.train_tasks().string());
    auto calib = calibration_prompts(cfg, tasks);

    const SaliencyMethod method = parse_saliency_method(cfg.saliency_method);
    std::map<std::string, std::vector<float>> norms;
    if (method == SaliencyMethod::activation_weighted) {
        norms = collect_input_norms(target, calib);
    }
    auto scores = compute_saliency(target, method,
                                   method == SaliencyMethod::activation_weighted ? &norms : nullptr);

    std::vector<fs::path> outputs;
    for (const auto& variant : cfg.prune_variants) {
        SparsityMask mask;
        if (variant.pattern == SparsityPattern::two_four) {
            if (variant.distribution != "uniform") {
                throw ConfigError("two_four pruning supports only the uniform distribution");
            }
            mask = prune_two_four(scores);
        } else {
            SparsityPlan plan;
            if (variant.distribution == "uniform") {
                plan = SparsityPlan::uniform(target.config, SparsityPattern::unstructured,
                                             variant.sparsity);
            } else if (variant.distribution == "owl") {
                auto ratios = block_outlier_ratios(scores, target.config, cfg.owl_m);
                plan = owl_distribution(ratios, variant.sparsity, cfg.owl_lambda, target.config);
            } else if (variant.distribution == "angular") {
                auto groups = score_block_groups(target, calib, 1);
                std::vector<double> distances;
                for (int b = 0; b < target.config.n_layers; ++b) {
                    distances.push_back(groups[b].distance);
                }
                plan = angular_distribution(distances, variant.sparsity, target.config,
                                            cfg.angular_literal_form);
            } else {
                throw ConfigError("unknown sparsity distribution: " + variant.distribution);
            }
            mask = prune_unstructured(scores, plan);
        }
        Model draft;
        draft.config = target.config;
        for (const auto& [p, w] : target.weights) draft.weights.emplace(p, w.clone());
        apply_mask(draft, mask);
        const fs::path out = paths.oneshot(variant.name);
        fs::create_directories(out.parent_path());
        save_checkpoint(out.string(), draft, &mask);
        outputs.push_back(out);
    }
    write_provenance(paths, "prune", cfg.seed, {paths.target_ckpt()}, outputs,
                     json{{"method", cfg.saliency_method}});
}

void stage_layerprune(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.target_ckpt(), "pretrain");
    require_artifact(paths.train_tasks(), "corpus");
    Model target = load_checkpoint(paths.target_ckpt().string());
    auto tasks = load_tasks(paths.train_tasks().string());
    auto calib = calibration_prompts(cfg, tasks);

    const int n = static_cast<int>(cfg.layerprune_fraction * target.config.n_layers);
    if (n < 1 || n >= target.config.n_layers) {
        throw ConfigError("layerprune fraction leaves no prunable group");
    }
    const int start = select_block_group(target, calib, n);
    Model pruned = remove_blocks(target, start, n);
    const fs::path out = paths.oneshot(kLayerPruned);
    fs::create_directories(out.parent_path());
    save_checkpoint(out.string(), pruned);
    write_provenance(paths, "layerprune", cfg.seed, {paths.target_ckpt()}, {out},
                     json{{"start_block", start}, {"blocks_removed", n}});
}

void stage_finetune(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.distilled(), "distill");
    auto data = load_dataset(paths.distilled().string());

    std::vector<fs::path> outputs;
    // every variant fine-tunes on the same batch order, so differences come
    // from the masks rather than the data stream
    TrainConfig tc = cfg.finetune;
    tc.seed = mix_seed(cfg.seed, 6);
    for (const auto& variant : cfg.prune_variants) {
        require_artifact(paths.oneshot(variant.name), "prune");
        std::optional<SparsityMask> mask;
        Model draft = load_checkpoint(paths.oneshot(variant.name).string(), &mask);
        if (!mask) throw UsageError("one-shot checkpoint is missing its mask: " + variant.name);
        auto result = finetune(draft, &*mask, data.records, tc);
        const fs::path out = paths.tuned(variant.name);
        save_checkpoint(out.string(), draft, &*mask);
        write_curve(paths.tune_curve(variant.name), result);
        outputs.push_back(out);
    }
    require_artifact(paths.oneshot(kLayerPruned), "layerprune");
    Model lp = load_checkpoint(paths.oneshot(kLayerPruned).string());
    auto result = finetune(lp, nullptr, data.records, tc);
    const fs::path out = paths.tuned(kLayerPruned);
    save_checkpoint(out.string(), lp);
    write_curve(paths.tune_curve(kLayerPruned), result);
    outputs.push_back(out);

    write_provenance(paths, "finetune", cfg.seed, {paths.distilled()}, outputs,
                     json{{"steps", cfg.finetune.total_steps}});
}

void stage_macs(const ExperimentConfig& cfg, const Paths& paths) {
    const MacReport dense = count_macs(cfg.model);
    json j;
    j["format"] = "draftlab-macs";
    j["version"] = 1;
    j["target"] = {{"attention_projections", dense.attention_projections},
                   {"ffn", dense.ffn},
                   {"lm_head", dense.lm_head},
                   {"total_dense", dense.total_dense}};
    j["variants"] = json::array();
    for (const auto& v : cfg.prune_variants) {
        SparsityPlan plan = SparsityPlan::uniform(cfg.model,
                                                  v.pattern == SparsityPattern::two_four
                                                      ? SparsityPattern::two_four
                                                      : SparsityPattern::unstructured,
                                                  v.pattern == SparsityPattern::two_four
                                                      ? 0.5
                                                      : v.sparsity);
        MacReport r = count_macs(cfg.model, &plan);
        j["variants"].push_back(json{{"name", v.name},
                                     {"total_effective", r.total_effective},
                                     {"reduction", r.reduction},
                                     {"c_mac", r.total_effective / dense.total_dense}});
    }
    {
        const int n = static_cast<int>(cfg.layerprune_fraction * cfg.model.n_layers);
        MacReport r = count_macs(cfg.model, nullptr, n);
        j["variants"].push_back(json{{"name", kLayerPruned},
                                     {"total_effective", r.total_effective},
                                     {"reduction", r.reduction},
                                     {"c_mac", r.total_effective / dense.total_dense}});
    }
    write_file(paths.macs_report(), j.dump(2) + "\n");
    write_provenance(paths, "macs", cfg.seed, {}, {paths.macs_report()});
}

BenchReport stage_bench(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.target_ckpt(), "pretrain");
    require_artifact(paths.heldout_tasks(), "corpus");
    Model target = load_checkpoint(paths.target_ckpt().string());
    auto suite = load_tasks(paths.heldout_tasks().string());
    const double target_macs = static_cast<double>(count_macs(target.config).total_dense);

    struct Held {
        std::string name;
        Model model;
        double macs;
    };
    std::vector<Held> held;
    auto add = [&](const std::string& name, const fs::path& path, const char* stage) {
        require_artifact(path, stage);
        Model m = load_checkpoint(path.string());
        const double macs = effective_macs_per_token(m);
        held.push_back(Held{name, std::move(m), macs});
    };
    for (const auto& v : cfg.prune_variants) {
        add(v.name + "_oneshot", paths.oneshot(v.name), "prune");
        add(v.name + "_tuned", paths.tuned(v.name), "finetune");
    }
    add(std::string(kLayerPruned) + "_oneshot", paths.oneshot(kLayerPruned), "layerprune");
    add(std::string(kLayerPruned) + "_tuned", paths.tuned(kLayerPruned), "finetune");

    std::vector<DraftUnderTest> drafts;
    for (const auto& h : held) drafts.push_back(DraftUnderTest{h.name, &h.model, h.macs});

    BenchConfig bc;
    bc.ks = cfg.ks;
    bc.max_new_tokens = cfg.max_new_tokens;
    bc.measure_latency = cfg.measure_latency;
    bc.min_timing_seconds = cfg.min_timing_seconds;
    BenchReport report = bench_specdec(drafts, target, target_macs, suite, bc);

    write_file(paths.bench_json(), bench_report_to_json(report) + "\n");
    write_file(paths.bench_text(), bench_report_to_text(report));
    std::vector<fs::path> inputs{paths.target_ckpt(), paths.heldout_tasks()};
    write_provenance(paths, "bench", cfg.seed, inputs, {paths.bench_json(), paths.bench_text()});
    return report;
}

void stage_report(const ExperimentConfig& cfg, const Paths& paths) {
    require_artifact(paths.bench_json(), "bench");
    const json bench = json::parse(read_file(paths.bench_json().string()));
    json out;
    out["format"] = "draftlab-comparison";
    out["version"] = 1;
    out["pairs"] = json::array();
    const auto& drafts = bench.at("drafts");
    for (const auto& a : drafts) {
        for (const auto& b : drafts) {
            if (a.at("name") == b.at("name")) continue;
            for (const auto& [k, cell] : a.at("k").items()) {
                if (!b.at("k").contains(k)) continue;
                const double ma = cell.at("mal_round_weighted").get<double>();
                const double mb = b.at("k").at(k).at("mal_round_weighted").get<double>();
                if (mb <= 0.0) continue;
                out["pairs"].push_back(json{{"k", std::stoi(k)},
                                            {"variant", a.at("name")},
                                            {"baseline", b.at("name")},
                                            {"mal_ratio", ma / mb}});
            }
        }
    }
    // improvement factors recomputed from the stored raw numbers
    out["recomputed"] = json::array();
    for (const auto& d : drafts) {
        for (const auto& [k, cell] : d.at("k").items()) {
            const double mal = cell.at("mal_round_weighted").get<double>();
            if (mal < 1.0) continue;
            out["recomputed"].push_back(
                json{{"name", d.at("name")},
                     {"k", std::stoi(k)},
                     {"improvement_mac",
                      improvement_factor(mal, std::stoi(k), d.at("c_mac").get<double>())}});
        }
    }
    write_file(paths.comparison(), out.dump(2) + "\n");
    write_provenance(paths, "report", cfg.seed, {paths.bench_json()}, {paths.comparison()});
}

}  // namespace

ExperimentConfig parse_experiment_config(const std::string& json_text,
                                         const std::vector<std::string>& overrides) {
    json j = json::parse(json_text, nullptr, false);
    if (j.is_discarded()) throw ConfigError("experiment config is not valid JSON");
    for (const auto& o : overrides) apply_override(j, o);

    reject_unknown_keys(j, {"seed", "out_dir", "model", "corpus", "pretrain", "distill", "prune",
                            "layerprune", "finetune", "specdec", "report"},
                        "top level");

    ExperimentConfig cfg;
    maybe(j, "seed", cfg.seed);
    maybe(j, "out_dir", cfg.out_dir);

    if (!j.contains("model")) throw ConfigError("config requires a 'model' section");
    {
        const json& m = j.at("model");
        reject_unknown_keys(m, {"vocab_size", "d_model", "n_layers", "n_heads", "n_kv_heads",
                                "d_head", "d_ff", "max_seq", "tie_embeddings", "rope_base"},
                            "model");
        maybe(m, "vocab_size", cfg.model.vocab_size);
        maybe(m, "d_model", cfg.model.d_model);
        maybe(m, "n_layers", cfg.model.n_layers);
        maybe(m, "n_heads", cfg.model.n_heads);
        maybe(m, "n_kv_heads", cfg.model.n_kv_heads);
        maybe(m, "d_head", cfg.model.d_head);
        maybe(m, "d_ff", cfg.model.d_ff);
        maybe(m, "max_seq", cfg.model.max_seq);
        maybe(m, "tie_embeddings", cfg.model.tie_embeddings);
        maybe(m, "rope_base", cfg.model.rope_base);
        cfg.model.validate();
    }
    if (j.contains("corpus")) {
        const json& c = j.at("corpus");
        reject_unknown_keys(c, {"train_per_task", "heldout_per_task", "max_span", "n_letters",
                                "max_operand", "reference_corruption"},
                            "corpus");
        maybe(c, "train_per_task", cfg.train_per_task);
        maybe(c, "heldout_per_task", cfg.heldout_per_task);
        maybe(c, "max_span", cfg.max_span);
        maybe(c, "n_letters", cfg.n_letters);
        maybe(c, "max_operand", cfg.max_operand);
    }
    if (j.contains("pretrain")) parse_train_section(j.at("pretrain"), "pretrain", cfg.pretrain);
    if (j.contains("corpus") && j.at("corpus").contains("reference_corruption")) {
        cfg.reference_corruption = j.at("corpus").at("reference_corruption").get<double>();
    }
    if (j.contains("finetune")) parse_train_section(j.at("finetune"), "finetune", cfg.finetune);
    if (j.contains("distill")) {
        const json& d = j.at("distill");
        reject_unknown_keys(d, {"p", "temperature", "max_gen", "greedy"}, "distill");
        maybe(d, "p", cfg.distill.p);
        maybe(d, "temperature", cfg.distill.temperature);
        maybe(d, "max_gen", cfg.distill.max_gen);
        maybe(d, "greedy", cfg.distill.greedy);
    }
    if (j.contains("prune")) {
        const json& p = j.at("prune");
        reject_unknown_keys(p, {"method", "calibration_prompts", "owl_m", "owl_lambda",
                                "angular_literal_form", "variants"},
                            "prune");
        maybe(p, "method", cfg.saliency_method);
        maybe(p, "calibration_prompts", cfg.calibration_prompts);
        maybe(p, "owl_m", cfg.owl_m);
        maybe(p, "owl_lambda", cfg.owl_lambda);
        maybe(p, "angular_literal_form", cfg.angular_literal_form);
        if (p.contains("variants")) {
            cfg.prune_variants.clear();
            for (const auto& v : p.at("variants")) {
                reject_unknown_keys(v, {"name", "pattern", "sparsity", "distribution"},
                                    "prune.variants");
                PruneVariant pv;
                pv.name = v.at("name").get<std::string>();
                const std::string pattern = v.value("pattern", "unstructured");
                if (pattern == "unstructured") {
                    pv.pattern = SparsityPattern::unstructured;
                } else if (pattern == "two_four") {
                    pv.pattern = SparsityPattern::two_four;
                    pv.sparsity = 0.5;
                } else {
                    throw ConfigError("unknown sparsity pattern: " + pattern);
                }
                maybe(v, "sparsity", pv.sparsity);
                maybe(v, "distribution", pv.distribution);
                cfg.prune_variants.push_back(std::move(pv));
            }
        }
    }
    if (cfg.prune_variants.empty()) {
        cfg.prune_variants = {PruneVariant{"unstructured50", SparsityPattern::unstructured, 0.5,
                                           "uniform"},
                              PruneVariant{"two_four", SparsityPattern::two_four, 0.5, "uniform"}};
    }
    if (j.contains("layerprune")) {
        const json& l = j.at("layerprune");
        reject_unknown_keys(l, {"fraction"}, "layerprune");
        maybe(l, "fraction", cfg.layerprune_fraction);
    }
    if (j.contains("specdec")) {
        const json& s = j.at("specdec");
        reject_unknown_keys(s, {"ks", "max_new_tokens"}, "specdec");
        maybe(s, "ks", cfg.ks);
        maybe(s, "max_new_tokens", cfg.max_new_tokens);
    }
    if (j.contains("report")) {
        const json& r = j.at("report");
        reject_unknown_keys(r, {"measure_latency", "min_timing_seconds"}, "report");
        maybe(r, "measure_latency", cfg.measure_latency);
        maybe(r, "min_timing_seconds", cfg.min_timing_seconds);
    }
    for (int k : cfg.ks) {
        if (k < 1) throw ConfigError("specdec.ks entries must be >= 1");
    }
    return cfg;
}

ExperimentConfig load_experiment_config(const std::string& path,
                                        const std::vector<std::string>& overrides) {
    return parse_experiment_config(read_file(path), overrides);
}

const std::vector<std::string>& pipeline_stage_names() { return kStages; }

std::vector<std::string> stage_artifacts(const ExperimentConfig& cfg, const std::string& stage) {
    const Paths paths(cfg);
    std::vector<fs::path> out;
    if (stage == "corpus") {
        out = {paths.train_tasks(), paths.heldout_tasks()};
    } else if (stage == "pretrain") {
        out = {paths.target_ckpt(), paths.pretrain_curve()};
    } else if (stage == "distill") {
        out = {paths.distilled()};
    } else if (stage == "prune") {
        for (const auto& v : variant_names(cfg)) out.push_back(paths.oneshot(v));
    } else if (stage == "layerprune") {
        out = {paths.oneshot(kLayerPruned)};
    } else if (stage == "finetune") {
        for (const auto& v : variant_names(cfg)) out.push_back(paths.tuned(v));
        out.push_back(paths.tuned(kLayerPruned));
    } else if (stage == "macs") {
        out = {paths.macs_report()};
    } else if (stage == "bench") {
        out = {paths.bench_json(), paths.bench_text()};
    } else if (stage == "report") {
        out = {paths.comparison()};
    } else {
        throw UsageError("unknown stage: " + stage);
    }
    std::vector<std::string> strings;
    for (const auto& p : out) strings.push_back(p.string());
    return strings;
}

double effective_macs_per_token(const Model& model) {
    const auto scope = model.config.prunable_paths();
    if (scope.empty()) return static_cast<double>(count_macs(model.config).total_dense);
    const auto measured = measure_sparsity(model, scope);
    SparsityPlan plan;
    plan.pattern = SparsityPattern::unstructured;
    plan.per_matrix = measured.per_matrix;
    return count_macs(model.config, &plan).total_effective;
}

std::optional<BenchReport> run_pipeline(const ExperimentConfig& cfg,
                                        const std::set<std::string>& stages, bool force) {
    for (const auto& s : stages) {
        if (std::find(kStages.begin(), kStages.end(), s) == kStages.end()) {
            throw UsageError("unknown stage: " + s);
        }
    }
    const Paths paths(cfg);
    std::optional<BenchReport> bench;
    for (const auto& stage : kStages) {
        if (!stages.empty() && !stages.count(stage)) continue;
        bool have_all = true;
        for (const auto& artifact : stage_artifacts(cfg, stage)) {
            have_all = have_all && fs::exists(artifact);
        }
        if (have_all && !force) {
            std::cerr << "[draftlab] stage " << stage << ": artifacts present, skipping\n";
            continue;
        }
        std::cerr << "[draftlab] stage " << stage << ": running\n";
        if (stage == "corpus") {
            stage_corpus(cfg, paths);
        } else if (stage == "pretrain") {
            stage_pretrain(cfg, paths);
        } else if (stage == "distill") {
            stage_distill(cfg, paths);
        } else if (stage == "prune") {
            stage_prune(cfg, paths);
        } else if (stage == "layerprune") {
            stage_layerprune(cfg, paths);
        } else if (stage == "finetune") {
            stage_finetune(cfg, paths);
        } else if (stage == "macs") {
            stage_macs(cfg, paths);
        } else if (stage == "bench") {
            bench = stage_bench(cfg, paths);
        } else if (stage == "report") {
            stage_report(cfg, paths);
        }
    }
    return bench;
}

}  // namespace draftlab
