#include "draftlab/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "json.hpp"

namespace draftlab {

using nlohmann::json;

double median_forward_latency(const Model& model, int seq_len, double min_seconds) {
    using clock = std::chrono::steady_clock;
    if (seq_len < 1 || seq_len + 1 > model.config.max_seq) {
        throw UsageError("median_forward_latency: bad sequence length");
    }
    TokenSeq prefix(seq_len, 2 % model.config.vocab_size);
    std::vector<double> samples;
    const auto start = clock::now();
    while (true) {
        KvCache cache;
        cache.reset(model.config.n_layers);
        forward(model, prefix, &cache);
        TokenId tok = 3 % model.config.vocab_size;
        const auto t0 = clock::now();
        forward(model, std::span<const TokenId>(&tok, 1), &cache);
        const auto t1 = clock::now();
        samples.push_back(std::chrono::duration<double>(t1 - t0).count());
        if (std::chrono::duration<double>(t1 - start).count() >= min_seconds && samples.size() >= 5) {
            break;
        }
    }
    std::sort(samples.begin(), samples.end());
    return samples[samples.size() / 2];
}

BenchReport bench_specdec(const std::vector<DraftUnderTest>& drafts, const Model& target,
                          double target_macs_per_token, const std::vector<TaskSample>& suite,
                          const BenchConfig& cfg) {
    if (suite.empty()) throw UsageError("bench_specdec: empty evaluation suite");
    if (drafts.empty()) throw UsageError("bench_specdec: no draft models");
    for (const auto& d : drafts) {
        if (d.model->config.vocab_size != target.config.vocab_size) {
            throw UsageError("bench_specdec: draft '" + d.name + "' has a different vocab");
        }
    }

    BenchReport report;
    report.target_macs_per_token = target_macs_per_token;
    if (cfg.measure_latency) {
        report.target_latency_per_token =
            median_forward_latency(target, cfg.timing_seq_len, cfg.min_timing_seconds);
    }

    for (const auto& d : drafts) {
        DraftBenchResult res;
        res.name = d.name;
        res.macs_per_token = d.macs_per_token;
        res.macs_per_token_dense = static_cast<double>(count_macs(d.model->config).total_dense);
        res.c_mac = cost_factor(d.macs_per_token, target_macs_per_token);
        if (cfg.measure_latency) {
            res.latency_per_token =
                median_forward_latency(*d.model, cfg.timing_seq_len, cfg.min_timing_seconds);
            res.c_latency = cost_factor(res.latency_per_token, report.target_latency_per_token);
        }

        for (int k : cfg.ks) {
            SpecDecodeConfig sd;
            sd.k = k;
            sd.max_new_tokens = cfg.max_new_tokens;
            sd.eos_token = vocab::kEos;

            std::map<std::string, CellResult> cells;
            auto& raw = res.raw[k];
            for (const auto& sample : suite) {
                const TokenSeq prompt = inference_prompt(sample);
                auto [tokens, stats] = speculative_decode(*d.model, target, prompt, sd);
                const std::string cat = task_kind_name(sample.kind);
                auto& cell = cells[cat];
                cell.category = cat;
                cell.prompts += 1;
                for (const auto& r : stats.rounds) {
                    cell.rounds += 1;
                    cell.drafted += r.drafted;
                    cell.accepted += r.accepted;
                    cell.emitted += r.emitted;
                }
                raw.push_back(PromptRun{cat, stats.rounds});
            }

            double weighted = 0.0, cat_sum = 0.0;
            int64_t total_rounds = 0;
            auto& out_cells = res.cells[k];
            for (auto& [cat, cell] : cells) {
                cell.mal = cell.rounds > 0
                               ? static_cast<double>(cell.emitted) / static_cast<double>(cell.rounds)
                               : 0.0;
                weighted += static_cast<double>(cell.emitted);
                total_rounds += cell.rounds;
                cat_sum += cell.mal;
                out_cells.push_back(cell);
            }
            res.mal_round_weighted[k] =
                total_rounds > 0 ? weighted / static_cast<double>(total_rounds) : 0.0;
            res.mal_category_mean[k] = out_cells.empty() ? 0.0 : cat_sum / out_cells.size();
            res.improvement_mac[k] = improvement_factor(res.mal_round_weighted[k], k, res.c_mac);
            if (cfg.measure_latency) {
                res.improvement_latency[k] =
                    improvement_factor(res.mal_round_weighted[k], k, res.c_latency);
            }
        }
        report.drafts.push_back(std::move(res));
    }
    return report;
}

ComparisonRatios mal_comparison(double dense_mal, double variant_mal, double baseline_mal) {
    if (dense_mal <= 0.0 || baseline_mal <= 0.0) {
        throw UsageError("mal_comparison: reference values must be positive");
    }
    ComparisonRatios out;
    out.ratio = variant_mal / baseline_mal;
    out.reduction_pct = (dense_mal - variant_mal) / dense_mal * 100.0;
    return out;
}

std::string bench_report_to_json(const BenchReport& report) {
    json j;
    j["format"] = "draftlab-bench";
    j["version"] = 1;
    j["target"] = {{"macs_per_token", report.target_macs_per_token},
                   {"latency_per_token", report.target_latency_per_token}};
    j["drafts"] = json::array();
    for (const auto& d : report.drafts) {
        json dj{{"name", d.name},
                {"macs_per_token", d.macs_per_token},
                {"macs_per_token_dense", d.macs_per_token_dense},
                {"latency_per_token", d.latency_per_token},
                {"c_mac", d.c_mac},
                {"c_latency", d.c_latency}};
        dj["k"] = json::object();
        for (const auto& [k, cells] : d.cells) {
            json kj;
            kj["categories"] = json::array();
            for (const auto& c : cells) {
                kj["categories"].push_back(json{{"category", c.category},
                                                {"prompts", c.prompts},
                                                {"rounds", c.rounds},
                                                {"drafted", c.drafted},
                                                {"accepted", c.accepted},
                                                {"emitted", c.emitted},
                                                {"mal", c.mal}});
            }
            kj["mal_round_weighted"] = d.mal_round_weighted.at(k);
            kj["mal_category_mean"] = d.mal_category_mean.at(k);
            kj["improvement_mac"] = d.improvement_mac.at(k);
            if (d.improvement_latency.count(k)) {
                kj["improvement_latency"] = d.improvement_latency.at(k);
            }
            json runs = json::array();
            for (const auto& run : d.raw.at(k)) {
                json rounds = json::array();
                for (const auto& r : run.rounds) {
                    rounds.push_back(json::array({r.drafted, r.accepted, r.emitted}));
                }
                runs.push_back(json{{"category", run.category}, {"rounds", rounds}});
            }
            kj["prompt_runs"] = runs;
            dj["k"][std::to_string(k)] = kj;
        }
        j["drafts"].push_back(dj);
    }
    return j.dump(2);
}

std::string bench_report_to_text(const BenchReport& report) {
    std::ostringstream out;
    out << "target: " << report.target_macs_per_token << " MACs/token";
    if (report.target_latency_per_token > 0.0) {
        out << ", " << report.target_latency_per_token * 1e3 << " ms/token";
    }
    out << "\n";
    for (const auto& d : report.drafts) {
        out << "\ndraft " << d.name << "  (MACs/token " << d.macs_per_token << ", c_mac "
            << d.c_mac;
        if (d.latency_per_token > 0.0) out << ", c_latency " << d.c_latency;
        out << ")\n";
        for (const auto& [k, cells] : d.cells) {
            out << "  k=" << k << "  MAL " << d.mal_round_weighted.at(k) << " (category mean "
                << d.mal_category_mean.at(k) << "), IF_mac " << d.improvement_mac.at(k);
            if (d.improvement_latency.count(k)) {
                out << ", IF_latency " << d.improvement_latency.at(k);
            }
            out << "\n";
            for (const auto& c : cells) {
                out << "    " << c.category << ": MAL " << c.mal << " over " << c.rounds
                    << " rounds (" << c.prompts << " prompts)\n";
            }
        }
    }
    return out.str();
}

}  // namespace draftlab
