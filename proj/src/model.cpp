#include "draftlab/model.hpp"

#include "draftlab/sparsity.hpp"

namespace draftlab {

void TransformerConfig::validate() const {
    if (vocab_size < 1 || d_model < 1 || n_heads < 1 || n_kv_heads < 1 || d_head < 1 ||
        d_ff < 1 || max_seq < 1) {
        throw UsageError("transformer config: all dimensions must be >= 1");
    }
    if (n_layers < 0) throw UsageError("transformer config: n_layers must be >= 0");
    if (n_heads * d_head != d_model) throw UsageError("transformer config: n_heads*d_head must equal d_model");
    if (n_heads % n_kv_heads != 0) throw UsageError("transformer config: n_kv_heads must divide n_heads");
}

std::vector<std::string> TransformerConfig::prunable_paths() const {
    static const char* kProj[] = {"attn.wq.weight", "attn.wk.weight", "attn.wv.weight",
                                  "attn.wo.weight", "ffn.wgate.weight", "ffn.wup.weight",
                                  "ffn.wdown.weight"};
    std::vector<std::string> out;
    out.reserve(static_cast<size_t>(n_layers) * 7);
    for (int b = 0; b < n_layers; ++b) {
        for (const char* p : kProj) out.push_back("blocks." + std::to_string(b) + "." + p);
    }
    return out;
}

std::vector<std::string> TransformerConfig::weight_paths() const {
    std::vector<std::string> out;
    out.push_back("embed.weight");
    for (int b = 0; b < n_layers; ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        out.push_back(prefix + "attn_norm.weight");
        out.push_back(prefix + "attn.wq.weight");
        out.push_back(prefix + "attn.wk.weight");
        out.push_back(prefix + "attn.wv.weight");
        out.push_back(prefix + "attn.wo.weight");
        out.push_back(prefix + "ffn_norm.weight");
        out.push_back(prefix + "ffn.wgate.weight");
        out.push_back(prefix + "ffn.wup.weight");
        out.push_back(prefix + "ffn.wdown.weight");
    }
    out.push_back("final_norm.weight");
    if (!tie_embeddings) out.push_back("lm_head.weight");
    return out;
}

std::vector<int> TransformerConfig::weight_shape(const std::string& path) const {
    const int kv_width = n_kv_heads * d_head;
    auto ends_with = [&](const char* suffix) {
        const std::string s(suffix);
        return path.size() >= s.size() && path.compare(path.size() - s.size(), s.size(), s) == 0;
    };
    if (path == "embed.weight" || path == "lm_head.weight") return {vocab_size, d_model};
    if (path == "final_norm.weight" || ends_with("attn_norm.weight") || ends_with("ffn_norm.weight")) {
        return {d_model};
    }
    if (ends_with("attn.wq.weight")) return {n_heads * d_head, d_model};
    if (ends_with("attn.wk.weight") || ends_with("attn.wv.weight")) return {kv_width, d_model};
    if (ends_with("attn.wo.weight")) return {d_model, n_heads * d_head};
    if (ends_with("ffn.wgate.weight") || ends_with("ffn.wup.weight")) return {d_ff, d_model};
    if (ends_with("ffn.wdown.weight")) return {d_model, d_ff};
    throw UsageError("unknown weight path: " + path);
}

int64_t TransformerConfig::param_count() const {
    int64_t n = 0;
    for (const auto& path : weight_paths()) {
        int64_t e = 1;
        for (int d : weight_shape(path)) e *= d;
        n += e;
    }
    return n;
}

MacReport count_macs(const TransformerConfig& config, const SparsityPlan* plan, int pruned_blocks) {
    config.validate();
    if (pruned_blocks < 0 || pruned_blocks > config.n_layers) {
        throw UsageError("count_macs: pruned block count out of range");
    }
    auto matrix_macs = [&](const std::string& path) {
        auto shape = config.weight_shape(path);
        return static_cast<int64_t>(shape[0]) * shape[1];
    };

    MacReport report;
    const int64_t per_block_attn = matrix_macs("blocks.0.attn.wq.weight") +
                                   matrix_macs("blocks.0.attn.wk.weight") +
                                   matrix_macs("blocks.0.attn.wv.weight") +
                                   matrix_macs("blocks.0.attn.wo.weight");
    const int64_t per_block_ffn = matrix_macs("blocks.0.ffn.wgate.weight") +
                                  matrix_macs("blocks.0.ffn.wup.weight") +
                                  matrix_macs("blocks.0.ffn.wdown.weight");
    report.attention_projections = per_block_attn * config.n_layers;
    report.ffn = per_block_ffn * config.n_layers;
    report.lm_head = static_cast<int64_t>(config.d_model) * config.vocab_size;
    report.total_dense = report.attention_projections + report.ffn + report.lm_head;

    const int live_blocks = config.n_layers - pruned_blocks;
    double effective = static_cast<double>(report.lm_head);
    for (int b = 0; b < live_blocks; ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        for (const char* leaf : {"attn.wq.weight", "attn.wk.weight", "attn.wv.weight",
                                 "attn.wo.weight", "ffn.wgate.weight", "ffn.wup.weight",
                                 "ffn.wdown.weight"}) {
            const std::string path = prefix + leaf;
            double keep = 1.0;
            if (plan) {
                auto it = plan->per_matrix.find(path);
                if (it == plan->per_matrix.end()) {
                    throw UsageError("count_macs: sparsity plan does not cover " + path);
                }
                keep = 1.0 - it->second;
            }
            effective += static_cast<double>(matrix_macs(path)) * keep;
        }
    }
    report.total_effective = effective;
    report.reduction = report.total_dense > 0
                           ? 1.0 - effective / static_cast<double>(report.total_dense)
                           : 0.0;
    return report;
}

TransformerConfig llama32_3b_config() {
    TransformerConfig cfg;
    cfg.vocab_size = 128256;
    cfg.d_model = 3072;
    cfg.n_layers = 28;
    cfg.n_heads = 24;
    cfg.n_kv_heads = 8;
    cfg.d_head = 128;
    cfg.d_ff = 8192;
    cfg.max_seq = 131072;
    cfg.tie_embeddings = true;
    cfg.rope_base = 500000.0f;
    return cfg;
}

}  // namespace draftlab
