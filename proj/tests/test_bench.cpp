#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "doctest.h"
#include "draftlab/bench.hpp"

using namespace draftlab;

namespace {

TransformerConfig micro_config() {
    TransformerConfig cfg;
    cfg.vocab_size = 48;
    cfg.d_model = 16;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.d_head = 8;
    cfg.d_ff = 32;
    cfg.max_seq = 96;
    return cfg;
}

std::vector<TaskSample> tiny_suite() {
    CorpusSpec spec;
    spec.vocab_size = 48;
    spec.counts = {{TaskKind::copy_retrieval, 2}, {TaskKind::arithmetic, 2}};
    return synth_corpus(5, spec);
}

}  // namespace

TEST_CASE("paper-table arithmetic: ratio x1.59 and 8.36% reduction") {
    ComparisonRatios r = mal_comparison(4.54, 4.16, 2.62);
    CHECK(r.ratio == doctest::Approx(4.16 / 2.62).epsilon(1e-12));
    CHECK(std::fabs(r.ratio - 1.59) <= 0.005);
    CHECK(std::fabs(r.ratio - 1.588) <= 0.005);
    CHECK(std::fabs(r.reduction_pct - 8.36) <= 0.05);
    CHECK(r.reduction_pct == doctest::Approx((4.54 - 4.16) / 4.54 * 100.0).epsilon(1e-12));
    CHECK_THROWS_AS(mal_comparison(0.0, 1.0, 1.0), UsageError);
}

TEST_CASE("self-drafting bench: every category reaches k+1") {
    Model target = init_model<float>(micro_config(), 61);
    auto suite = tiny_suite();
    std::vector<DraftUnderTest> drafts{{"self", &target, 100.0}};
    BenchConfig bc;
    bc.ks = {3};
    bc.max_new_tokens = 8;  // two exact rounds of k+1
    BenchReport report = bench_specdec(drafts, target, 200.0, suite, bc);
    REQUIRE(report.drafts.size() == 1);
    const auto& d = report.drafts[0];
    CHECK(d.c_mac == doctest::Approx(0.5));
    CHECK(d.mal_round_weighted.at(3) == doctest::Approx(4.0));
    for (const auto& cell : d.cells.at(3)) CHECK(cell.mal == doctest::Approx(4.0));
}

TEST_CASE("improvement factors recompute from stored values") {
    Model target = init_model<float>(micro_config(), 67);
    Model draft = init_model<float>(micro_config(), 68);
    auto suite = tiny_suite();
    std::vector<DraftUnderTest> drafts{{"d", &draft, 40.0}};
    BenchConfig bc;
    bc.ks = {2, 4};
    bc.max_new_tokens = 12;
    BenchReport report = bench_specdec(drafts, target, 160.0, suite, bc);
    for (const auto& d : report.drafts) {
        for (const auto& [k, got] : d.improvement_mac) {
            const double recomputed = improvement_factor(d.mal_round_weighted.at(k), k, d.c_mac);
            CHECK(std::fabs(got - recomputed) < 1e-9);
        }
    }
}

TEST_CASE("aggregate MAL is the drafted-round-weighted mean of category MALs") {
    Model target = init_model<float>(micro_config(), 71);
    Model draft = init_model<float>(micro_config(), 72);
    auto suite = tiny_suite();
    std::vector<DraftUnderTest> drafts{{"d", &draft, 40.0}};
    BenchConfig bc;
    bc.ks = {3};
    bc.max_new_tokens = 10;
    BenchReport report = bench_specdec(drafts, target, 160.0, suite, bc);
    const auto& d = report.drafts[0];
    int64_t rounds = 0, emitted = 0;
    for (const auto& c : d.cells.at(3)) {
        rounds += c.rounds;
        emitted += c.emitted;
    }
    CHECK(d.mal_round_weighted.at(3) ==
          doctest::Approx(static_cast<double>(emitted) / rounds).epsilon(1e-12));

    // every aggregate is reproducible from the stored per-prompt rounds
    int64_t raw_emitted = 0, raw_rounds = 0;
    for (const auto& run : d.raw.at(3)) {
        for (const auto& r : run.rounds) {
            raw_emitted += r.emitted;
            raw_rounds += 1;
        }
    }
    CHECK(raw_emitted == emitted);
    CHECK(raw_rounds == rounds);
}

TEST_CASE("json serialization carries the raw records") {
    Model target = init_model<float>(micro_config(), 81);
    auto suite = tiny_suite();
    std::vector<DraftUnderTest> drafts{{"self", &target, 1.0}};
    BenchConfig bc;
    bc.ks = {2};
    bc.max_new_tokens = 6;
    BenchReport report = bench_specdec(drafts, target, 2.0, suite, bc);
    const std::string text = bench_report_to_json(report);
    CHECK(text.find("prompt_runs") != std::string::npos);
    CHECK(text.find("mal_round_weighted") != std::string::npos);
    const std::string human = bench_report_to_text(report);
    CHECK(human.find("MAL") != std::string::npos);
}

TEST_CASE("vocab mismatch and empty suite are rejected") {
    Model target = init_model<float>(micro_config(), 91);
    TransformerConfig other = micro_config();
    other.vocab_size = 32;
    Model bad = init_model<float>(other, 92);
    std::vector<DraftUnderTest> drafts{{"bad", &bad, 1.0}};
    BenchConfig bc;
    CHECK_THROWS_AS(bench_specdec(drafts, target, 2.0, tiny_suite(), bc), UsageError);
    std::vector<DraftUnderTest> ok{{"self", &target, 1.0}};
    CHECK_THROWS_AS(bench_specdec(ok, target, 2.0, {}, bc), UsageError);
}
