#pragma once

#include <map>
#include <string>
#include <vector>

#include "draftlab/distill.hpp"
#include "draftlab/specdec.hpp"

// Acceptance-rate harness: per task category and per k, runs speculative
// decoding for each draft against the target and aggregates mean accepted
// lengths, cost factors (MAC-based and optionally latency-based), and
// improvement factors. Raw per-prompt round records are kept so every
// aggregate in a report can be recomputed.

namespace draftlab {

struct PromptRun {
    std::string category;
    std::vector<RoundRecord> rounds;
};

struct CellResult {  // one (draft, k, category) cell
    std::string category;
    int prompts = 0;
    int64_t rounds = 0;
    int64_t drafted = 0;
    int64_t accepted = 0;
    int64_t emitted = 0;
    double mal = 0.0;
};

struct DraftBenchResult {
    std::string name;
    double macs_per_token = 0.0;       // effective, under the draft's own plan/mask
    double macs_per_token_dense = 0.0;
    double latency_per_token = 0.0;    // seconds; 0 when timing is disabled
    double c_mac = 0.0;
    double c_latency = 0.0;
    // per k: category cells, aggregates, and improvement factors
    std::map<int, std::vector<CellResult>> cells;
    std::map<int, double> mal_round_weighted;   // drafted-round-weighted mean
    std::map<int, double> mal_category_mean;    // plain mean of category MALs
    std::map<int, double> improvement_mac;
    std::map<int, double> improvement_latency;
    std::map<int, std::vector<PromptRun>> raw;  // per-prompt round records
};

struct BenchReport {
    double target_macs_per_token = 0.0;
    double target_latency_per_token = 0.0;
    std::vector<DraftBenchResult> drafts;
};

struct BenchConfig {
    std::vector<int> ks = {5};
    int max_new_tokens = 32;
    bool measure_latency = false;    // wall-clock timing is not deterministic
    double min_timing_seconds = 2.0; // repeat forwards at least this long, report the median
    int timing_seq_len = 16;
};

struct DraftUnderTest {
    std::string name;
    const Model* model = nullptr;
    double macs_per_token = 0.0;  // effective per-token MACs (caller accounts for masks)
};

// Median per-token forward latency, measured by repeated single-token decode
// steps until at least `min_seconds` has elapsed.
double median_forward_latency(const Model& model, int seq_len, double min_seconds);

BenchReport bench_specdec(const std::vector<DraftUnderTest>& drafts, const Model& target,
                          double target_macs_per_token, const std::vector<TaskSample>& suite,
                          const BenchConfig& cfg);

// Arithmetic used by the report stage when comparing draft variants:
// ratio = variant / baseline, reduction = (dense - variant) / dense * 100.
struct ComparisonRatios {
    double ratio = 0.0;
    double reduction_pct = 0.0;
};
ComparisonRatios mal_comparison(double dense_mal, double variant_mal, double baseline_mal);

std::string bench_report_to_json(const BenchReport& report);
std::string bench_report_to_text(const BenchReport& report);

}  // namespace draftlab
