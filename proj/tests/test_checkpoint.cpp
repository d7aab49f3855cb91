#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstring>
#include <fstream>

#include "doctest.h"
#include "draftlab/checkpoint.hpp"

using namespace draftlab;

namespace {

TransformerConfig micro_config() {
    TransformerConfig cfg;
    cfg.vocab_size = 32;
    cfg.d_model = 8;
    cfg.n_layers = 2;
    cfg.n_heads = 2;
    cfg.n_kv_heads = 1;
    cfg.d_head = 4;
    cfg.d_ff = 16;
    cfg.max_seq = 32;
    cfg.tie_embeddings = true;
    return cfg;
}

const char* kPath = "/tmp/draftlab_test_ckpt.bin";

}  // namespace

TEST_CASE("round trip is bit-identical") {
    Model m = init_model<float>(micro_config(), 501);
    save_checkpoint(kPath, m);
    Model r = load_checkpoint(kPath);
    CHECK(r.config.vocab_size == m.config.vocab_size);
    CHECK(r.config.tie_embeddings == m.config.tie_embeddings);
    REQUIRE(r.weights.size() == m.weights.size());
    for (const auto& [path, w] : m.weights) {
        const auto& other = r.weights.at(path);
        REQUIRE(other.shape() == w.shape());
        CHECK(std::memcmp(other.data(), w.data(), sizeof(float) * w.numel()) == 0);
    }
    std::remove(kPath);
}

TEST_CASE("masks survive the round trip with identical sparsity") {
    Model m = init_model<float>(micro_config(), 503);
    auto scores = compute_saliency(m, SaliencyMethod::magnitude);
    SparsityPlan plan = SparsityPlan::uniform(m.config, SparsityPattern::unstructured, 0.43);
    auto mask = prune_unstructured(scores, plan);
    apply_mask(m, mask);
    const auto before = measure_mask_sparsity(mask);

    save_checkpoint(kPath, m, &mask);
    std::optional<SparsityMask> loaded;
    Model r = load_checkpoint(kPath, &loaded);
    REQUIRE(loaded.has_value());
    REQUIRE(loaded->entries.size() == mask.entries.size());
    for (const auto& [path, entry] : mask.entries) {
        CHECK(loaded->entries.at(path).keep == entry.keep);
    }
    CHECK(measure_mask_sparsity(*loaded).aggregate == before.aggregate);
    std::remove(kPath);
}

TEST_CASE("fault injection produces distinct errors") {
    Model m = init_model<float>(micro_config(), 505);
    save_checkpoint(kPath, m);
    std::ifstream in(kPath, std::ios::binary);
    std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    SUBCASE("bad magic reports a corrupt manifest") {
        std::string bad = raw;
        bad[0] = 'X';
        std::ofstream(kPath, std::ios::binary).write(bad.data(), bad.size());
        CHECK_THROWS_WITH_AS(load_checkpoint(kPath), doctest::Contains("corrupt manifest"),
                             IoError);
    }
    SUBCASE("truncated blob is reported as truncation") {
        std::string bad = raw.substr(0, raw.size() - 64);
        std::ofstream(kPath, std::ios::binary).write(bad.data(), bad.size());
        CHECK_THROWS_WITH_AS(load_checkpoint(kPath), doctest::Contains("truncated blob"), IoError);
    }
    SUBCASE("garbled manifest JSON is reported distinctly") {
        std::string bad = raw;
        bad[11 + 8 + 2] = '#';  // inside the manifest text
        std::ofstream(kPath, std::ios::binary).write(bad.data(), bad.size());
        CHECK_THROWS_AS(load_checkpoint(kPath), IoError);
    }
    std::remove(kPath);
}

TEST_CASE("missing file") {
    CHECK_THROWS_AS(load_checkpoint("/tmp/definitely_missing_ckpt.bin"), IoError);
}

TEST_CASE("digest is stable and content-sensitive") {
    Model m = init_model<float>(micro_config(), 507);
    save_checkpoint(kPath, m);
    const std::string d1 = checkpoint_digest(kPath);
    const std::string d2 = checkpoint_digest(kPath);
    CHECK(d1 == d2);
    m.weights.at("embed.weight").data()[0] += 1.0f;
    save_checkpoint(kPath, m);
    CHECK(checkpoint_digest(kPath) != d1);
    std::remove(kPath);
}
