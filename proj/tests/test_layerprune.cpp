#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <random>

#include "doctest.h"
#include "draftlab/layerprune.hpp"
#include "draftlab/sparsity.hpp"

using namespace draftlab;

namespace {

TransformerConfig micro_config(int layers) {
    TransformerConfig cfg;
    cfg.vocab_size = 24;
    cfg.d_model = 8;
    cfg.n_layers = layers;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 2;
    cfg.d_head = 4;
    cfg.d_ff = 16;
    cfg.max_seq = 32;
    return cfg;
}

void zero_block_outputs(Model& m, int block) {
    const std::string prefix = "blocks." + std::to_string(block) + ".";
    for (const char* leaf : {"attn.wo.weight", "ffn.wdown.weight"}) {
        Tensor<float>& w = m.weights.at(prefix + leaf);
        std::fill(w.data(), w.data() + w.numel(), 0.0f);
    }
}

std::vector<TokenSeq> calib_prompts(int count, int vocab, uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<TokenSeq> out;
    for (int i = 0; i < count; ++i) {
        TokenSeq seq;
        const int len = 3 + static_cast<int>(uniform_unit(rng) * 6);
        for (int j = 0; j < len; ++j) {
            seq.push_back(static_cast<TokenId>(uniform_unit(rng) * vocab));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

// exhaustive reference: recompute every candidate's mean distance directly
int brute_force_select(const Model& m, const std::vector<TokenSeq>& calib, int n) {
    int best = -1;
    double best_d = 1e300;
    for (int i = 0; i + n <= m.config.n_layers; ++i) {
        double sum = 0;
        for (const auto& seq : calib) {
            auto states = capture_block_inputs(m, seq);
            const auto& u = states[i];
            const auto& v = states[i + n];
            double dot = 0, nu = 0, nv = 0;
            for (size_t j = 0; j < u.size(); ++j) {
                dot += static_cast<double>(u[j]) * v[j];
                nu += static_cast<double>(u[j]) * u[j];
                nv += static_cast<double>(v[j]) * v[j];
            }
            sum += std::acos(std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0)) / M_PI;
        }
        const double mean = sum / calib.size();
        if (mean < best_d) {
            best_d = mean;
            best = i;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("angular_distance basics") {
    std::vector<float> u = {1, 2, 3};
    std::vector<float> v = {-1, -2, -3};
    std::vector<float> w = {2, 4, 6};
    CHECK(angular_distance(std::span<const float>(u), std::span<const float>(u)) ==
          doctest::Approx(0.0));
    CHECK(angular_distance(std::span<const float>(u), std::span<const float>(v)) ==
          doctest::Approx(1.0));
    std::vector<float> a = {1, 0};
    std::vector<float> b = {0, 1};
    CHECK(angular_distance(std::span<const float>(a), std::span<const float>(b)) ==
          doctest::Approx(0.5));

    // symmetry + positive scale invariance
    CHECK(angular_distance(std::span<const float>(u), std::span<const float>(w)) ==
          doctest::Approx(0.0));
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 50; ++rep) {
        std::vector<float> x(5), y(5);
        for (int i = 0; i < 5; ++i) {
            x[i] = static_cast<float>(uniform_unit(rng)) - 0.5f;
            y[i] = static_cast<float>(uniform_unit(rng)) - 0.5f;
        }
        const double d1 = angular_distance(std::span<const float>(x), std::span<const float>(y));
        const double d2 = angular_distance(std::span<const float>(y), std::span<const float>(x));
        CHECK(d1 == doctest::Approx(d2));
        CHECK(d1 >= 0.0);
        CHECK(d1 <= 1.0);
    }

    std::vector<float> z = {0, 0, 0};
    CHECK_THROWS_AS(angular_distance(std::span<const float>(z), std::span<const float>(u)),
                    NumericError);
}

TEST_CASE("select_block_group finds a pass-through block") {
    Model m = init_model<float>(micro_config(4), 13);
    zero_block_outputs(m, 2);
    auto calib = calib_prompts(4, m.config.vocab_size, 77);
    std::vector<BlockGroupScore> scores;
    const int pick = select_block_group(m, calib, 1, &scores);
    CHECK(pick == 2);
    CHECK(scores[2].distance == doctest::Approx(0.0));
}

TEST_CASE("all no-op blocks tie to the first index") {
    Model m = init_model<float>(micro_config(3), 19);
    for (int b = 0; b < 3; ++b) zero_block_outputs(m, b);
    auto calib = calib_prompts(3, m.config.vocab_size, 78);
    CHECK(select_block_group(m, calib, 1) == 0);
}

TEST_CASE("select_block_group matches exhaustive enumeration") {
    std::mt19937_64 seeds(101);
    for (int rep = 0; rep < 8; ++rep) {
        const int layers = 4 + static_cast<int>(uniform_unit(seeds) * 3);  // 4..6
        Model m = init_model<float>(micro_config(layers), seeds());
        auto calib = calib_prompts(3, m.config.vocab_size, seeds());
        for (int n = 1; n < layers; ++n) {
            CHECK(select_block_group(m, calib, n) == brute_force_select(m, calib, n));
        }
    }
}

TEST_CASE("select_block_group argument validation") {
    Model m = init_model<float>(micro_config(3), 23);
    auto calib = calib_prompts(2, m.config.vocab_size, 79);
    CHECK_THROWS_AS(select_block_group(m, calib, 3), UsageError);
    CHECK_THROWS_AS(select_block_group(m, {}, 1), UsageError);
}

TEST_CASE("remove_blocks") {
    SUBCASE("n = 0 is the identity") {
        Model m = init_model<float>(micro_config(3), 29);
        Model r = remove_blocks(m, 1, 0);
        CHECK(r.config.n_layers == 3);
        CHECK(r.weights.size() == m.weights.size());
    }
    SUBCASE("removing pass-through blocks leaves logits unchanged") {
        Model m = init_model<float>(micro_config(4), 31);
        zero_block_outputs(m, 1);
        zero_block_outputs(m, 2);
        Model r = remove_blocks(m, 1, 2);
        TokenSeq tokens = {1, 5, 9, 2};
        Tensor<float> la = forward(m, tokens);
        Tensor<float> lb = forward(r, tokens);
        for (int64_t i = 0; i < la.numel(); ++i) {
            CHECK(la.data()[i] == doctest::Approx(lb.data()[i]).epsilon(1e-5));
        }
    }
    SUBCASE("survivors are the original outer blocks and the census drops") {
        Model m = init_model<float>(micro_config(4), 37);
        const int64_t before = [&] {
            int64_t n = 0;
            for (const auto& [p, w] : m.weights) n += w.numel();
            return n;
        }();
        Model r = remove_blocks(m, 1, 2);  // originals {0, 3} survive
        CHECK(r.config.n_layers == 2);
        for (const auto& leaf : {"attn.wq.weight", "ffn.wdown.weight"}) {
            const auto& w0 = r.weights.at(std::string("blocks.0.") + leaf);
            const auto& orig0 = m.weights.at(std::string("blocks.0.") + leaf);
            const auto& w1 = r.weights.at(std::string("blocks.1.") + leaf);
            const auto& orig3 = m.weights.at(std::string("blocks.3.") + leaf);
            for (int64_t i = 0; i < w0.numel(); ++i) CHECK(w0.data()[i] == orig0.data()[i]);
            for (int64_t i = 0; i < w1.numel(); ++i) CHECK(w1.data()[i] == orig3.data()[i]);
        }
        int64_t after = 0;
        for (const auto& [p, w] : r.weights) after += w.numel();
        int64_t per_block = 0;
        for (const auto& [p, w] : m.weights) {
            if (p.rfind("blocks.0.", 0) == 0) per_block += w.numel();
        }
        CHECK(before - after == 2 * per_block);

        // MAC accounting drops by exactly the removed blocks' share
        MacReport full = count_macs(m.config);
        MacReport pruned = count_macs(r.config);
        MacReport counted = count_macs(m.config, nullptr, 2);
        CHECK(pruned.total_dense ==
              full.total_dense - 2 * (full.attention_projections + full.ffn) / 4);
        CHECK(counted.total_effective == doctest::Approx(static_cast<double>(pruned.total_dense)));
    }
    SUBCASE("out-of-bounds group is rejected") {
        Model m = init_model<float>(micro_config(3), 41);
        CHECK_THROWS_AS(remove_blocks(m, 2, 2), UsageError);
    }
}
