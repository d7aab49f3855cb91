#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <random>

#include "doctest.h"
#include "draftlab/distill.hpp"
#include "draftlab/specdec.hpp"

using namespace draftlab;

namespace {

CorpusSpec default_spec() {
    CorpusSpec spec;
    spec.vocab_size = 48;
    spec.counts = {{TaskKind::copy_retrieval, 6},
                   {TaskKind::arithmetic, 6},
                   {TaskKind::mapping, 6},
                   {TaskKind::summary, 6}};
    return spec;
}

TransformerConfig micro_config() {
    TransformerConfig cfg;
    cfg.vocab_size = 48;
    cfg.d_model = 16;
    cfg.n_layers = 1;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.d_head = 8;
    cfg.d_ff = 32;
    cfg.max_seq = 128;
    return cfg;
}

int decode_digits(const TokenSeq& toks, size_t from, size_t to) {
    int v = 0;
    for (size_t i = from; i < to; ++i) v = v * 10 + (toks[i] - vocab::kDigitBase);
    return v;
}

}  // namespace

TEST_CASE("synth_corpus determinism and construction") {
    auto a = synth_corpus(99, default_spec());
    auto b = synth_corpus(99, default_spec());
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].prompt == b[i].prompt);
        CHECK(a[i].label == b[i].label);
        CHECK(a[i].context == b[i].context);
        CHECK_FALSE(a[i].prompt.empty());
    }
    auto c = synth_corpus(100, default_spec());
    bool any_diff = false;
    for (size_t i = 0; i < a.size(); ++i) any_diff |= (a[i].prompt != c[i].prompt);
    CHECK(any_diff);
}

TEST_CASE("copy task labels are verbatim substrings of the prompt") {
    for (const auto& s : synth_corpus(7, default_spec())) {
        if (s.kind != TaskKind::copy_retrieval) continue;
        REQUIRE(s.prompt.size() == s.label.size() + 1);
        for (size_t i = 0; i < s.label.size(); ++i) CHECK(s.label[i] == s.prompt[i + 1]);
    }
}

TEST_CASE("arithmetic task labels equal the true sum") {
    for (const auto& s : synth_corpus(8, default_spec())) {
        if (s.kind != TaskKind::arithmetic) continue;
        const auto plus = std::find(s.prompt.begin(), s.prompt.end(), vocab::kPlus);
        const auto eq = std::find(s.prompt.begin(), s.prompt.end(), vocab::kEquals);
        REQUIRE(plus != s.prompt.end());
        REQUIRE(eq != s.prompt.end());
        const int a = decode_digits(s.prompt, 1, plus - s.prompt.begin());
        const int b = decode_digits(s.prompt, plus - s.prompt.begin() + 1, eq - s.prompt.begin());
        const int want = a + b;
        int got = 0;
        for (TokenId t : s.label) got = got * 10 + (t - vocab::kDigitBase);
        CHECK(got == want);
    }
}

TEST_CASE("build_distill_prompt joins non-empty segments with one separator") {
    TaskSample s;
    s.prompt = {10, 11, 12};
    s.label = {13, 14, 15, 16};

    SUBCASE("empty context gives X || separator || Y") {
        TokenSeq x = build_distill_prompt(s, 64);
        TokenSeq want = {10, 11, 12, vocab::kRef, 13, 14, 15, 16};
        CHECK(x == want);
    }
    SUBCASE("|C|=2, |X|=3, |Y|=4 with two separators gives 11 tokens") {
        s.context = {20, 21};
        TokenSeq x = build_distill_prompt(s, 64);
        CHECK(x.size() == 11);
        // segments recoverable by splitting on the separator tokens
        std::vector<TokenSeq> parts(1);
        for (TokenId t : x) {
            if (t == vocab::kSep || t == vocab::kRef) {
                parts.emplace_back();
            } else {
                parts.back().push_back(t);
            }
        }
        REQUIRE(parts.size() == 3);
        CHECK(parts[0] == s.context);
        CHECK(parts[1] == s.prompt);
        CHECK(parts[2] == s.label);
    }
    SUBCASE("overflow is rejected") {
        CHECK_THROWS_AS(build_distill_prompt(s, 4), UsageError);
    }
}

TEST_CASE("sample_top_p") {
    SUBCASE("tiny p always picks the argmax") {
        Tensor<float> logits({1, 5}, {0.1f, 2.0f, -1.0f, 1.9f, 0.0f});
        std::mt19937_64 rng(3);
        for (int i = 0; i < 100; ++i) {
            CHECK(sample_top_p(logits, 0, 1e-9, 1.0, rng) == 1);
        }
    }
    SUBCASE("p=1 on uniform logits is empirically uniform") {
        Tensor<float> logits({1, 4}, {0.5f, 0.5f, 0.5f, 0.5f});
        std::mt19937_64 rng(5);
        std::vector<int> counts(4, 0);
        const int draws = 40000;
        for (int i = 0; i < draws; ++i) counts[sample_top_p(logits, 0, 1.0, 0.9, rng)]++;
        for (int j = 0; j < 4; ++j) {
            CHECK(std::fabs(counts[j] / static_cast<double>(draws) - 0.25) < 0.02);
        }
    }
    SUBCASE("lower temperature concentrates mass on the modal token") {
        Tensor<float> logits({1, 4}, {1.0f, 0.2f, -0.3f, 0.8f});
        auto modal_mass = [&](double temp) {
            double mx = -1e300, sum = 0;
            std::vector<double> p(4);
            for (int j = 0; j < 4; ++j) mx = std::max(mx, logits.data()[j] / temp);
            for (int j = 0; j < 4; ++j) {
                p[j] = std::exp(logits.data()[j] / temp - mx);
                sum += p[j];
            }
            return p[0] / sum;  // token 0 is modal
        };
        CHECK(modal_mass(0.5) > modal_mass(2.0));
    }
    SUBCASE("non-finite logits are rejected") {
        Tensor<float> logits({1, 3}, {0.1f, std::nanf(""), 0.2f});
        std::mt19937_64 rng(7);
        CHECK_THROWS_AS(sample_top_p(logits, 0, 1.0, 1.0, rng), NumericError);
    }
    SUBCASE("parameter validation") {
        Tensor<float> logits({1, 3}, {0.1f, 0.2f, 0.3f});
        std::mt19937_64 rng(9);
        CHECK_THROWS_AS(sample_top_p(logits, 0, 0.0, 1.0, rng), UsageError);
        CHECK_THROWS_AS(sample_top_p(logits, 0, 1.0, 0.0, rng), UsageError);
    }
}

TEST_CASE("self_distill") {
    Model target = init_model<float>(micro_config(), 71);
    CorpusSpec spec = default_spec();
    spec.vocab_size = 48;
    auto tasks = synth_corpus(11, spec);

    SamplerSettings sampler;
    sampler.max_gen = 12;

    SUBCASE("greedy mode reproduces greedy_decode continuations") {
        SamplerSettings greedy = sampler;
        greedy.greedy = true;
        auto data = self_distill(target, tasks, greedy, 1);
        REQUIRE(data.records.size() == tasks.size());
        for (size_t i = 0; i < tasks.size(); ++i) {
            TokenSeq x_prime = build_distill_prompt(tasks[i], target.config.max_seq);
            x_prime.push_back(vocab::kSep);  // the sampler's answer cue
            TokenSeq ref = greedy_decode(target, x_prime, greedy.max_gen, vocab::kEos);
            TokenSeq want(ref.begin() + x_prime.size(), ref.end());
            if (!want.empty() && want.back() == vocab::kEos) want.pop_back();
            CHECK(data.records[i].label == want);
            CHECK(data.records[i].prompt == tasks[i].prompt);
        }
    }
    SUBCASE("same seed twice is bit-identical") {
        auto a = self_distill(target, tasks, sampler, 42);
        auto b = self_distill(target, tasks, sampler, 42);
        REQUIRE(a.records.size() == b.records.size());
        for (size_t i = 0; i < a.records.size(); ++i) {
            CHECK(a.records[i].label == b.records[i].label);
        }
    }
    SUBCASE("wrong labels are retained, one record per input") {
        // A randomly initialized target produces incorrect arithmetic labels;
        // every record must still be present and unedited.
        auto data = self_distill(target, tasks, sampler, 7);
        CHECK(data.records.size() == tasks.size());
        int wrong = 0;
        for (size_t i = 0; i < tasks.size(); ++i) {
            if (tasks[i].kind != TaskKind::arithmetic) continue;
            if (data.records[i].label != tasks[i].label) ++wrong;
        }
        CHECK(wrong > 0);  // labels are not verified or filtered
    }
    SUBCASE("empty dataset is rejected") {
        CHECK_THROWS_AS(self_distill(target, {}, sampler, 1), UsageError);
    }
}

TEST_CASE("render_training_sequence marks label positions") {
    auto [seq, label_start] = render_training_sequence({10, 11}, {12, 13});
    TokenSeq want = {10, 11, vocab::kSep, 12, 13, vocab::kEos};
    CHECK(seq == want);
    CHECK(label_start == 3);
}

TEST_CASE("dataset serialization round trip") {
    Model target = init_model<float>(micro_config(), 73);
    auto tasks = synth_corpus(13, default_spec());
    SamplerSettings sampler;
    sampler.max_gen = 8;
    auto data = self_distill(target, tasks, sampler, 5, "ckpt-test");

    const std::string path = "/tmp/draftlab_test_dataset.jsonl";
    save_dataset(path, data);
    auto loaded = load_dataset(path);
    CHECK(loaded.target_id == data.target_id);
    CHECK(loaded.seed == data.seed);
    REQUIRE(loaded.records.size() == data.records.size());
    for (size_t i = 0; i < data.records.size(); ++i) {
        CHECK(loaded.records[i].prompt == data.records[i].prompt);
        CHECK(loaded.records[i].label == data.records[i].label);
    }

    const std::string tpath = "/tmp/draftlab_test_tasks.jsonl";
    save_tasks(tpath, tasks);
    auto tloaded = load_tasks(tpath);
    REQUIRE(tloaded.size() == tasks.size());
    for (size_t i = 0; i < tasks.size(); ++i) {
        CHECK(tloaded[i].prompt == tasks[i].prompt);
        CHECK(tloaded[i].label == tasks[i].label);
        CHECK(tloaded[i].context == tasks[i].context);
        CHECK(tloaded[i].kind == tasks[i].kind);
    }
    std::remove(path.c_str());
    std::remove(tpath.c_str());
}
