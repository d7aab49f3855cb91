#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "draftlab/tensor.hpp"

// Decoder-only transformer with Llama-style blocks: RMS-norm, rotary position
// encoding, grouped-query attention, SwiGLU feed-forward, optional tied
// embeddings. The same block is used at micro scale and at published-config
// scale (the latter only for MAC accounting).
//
// Weight layout is [out_features x in_features] for every projection; the
// "input dimension" of a matrix therefore runs along its rows' columns, and
// 2:4 sparsity groups are contiguous quadruples within a row.

namespace draftlab {

struct SparsityPlan;  // sparsity.hpp

struct TransformerConfig {
    int vocab_size = 0;
    int d_model = 0;
    int n_layers = 0;  // may be 0 (lm-head-only degenerate config)
    int n_heads = 0;
    int n_kv_heads = 0;
    int d_head = 0;
    int d_ff = 0;
    int max_seq = 0;
    bool tie_embeddings = true;
    float rope_base = 10000.0f;

    void validate() const;

    // Decoder-block projection paths, the prunable scope. Embedding, lm-head
    // and norm scales are excluded.
    std::vector<std::string> prunable_paths() const;
    std::vector<std::string> weight_paths() const;
    std::vector<int> weight_shape(const std::string& path) const;
    int64_t param_count() const;
};

template <typename T>
struct ModelT {
    TransformerConfig config;
    std::map<std::string, Tensor<T>> weights;
};
using Model = ModelT<float>;

template <typename T>
struct KvCacheT {
    int cached_len = 0;
    // Per block, row-major [cached_len x n_kv_heads*d_head].
    std::vector<std::vector<T>> k, v;

    void reset(int n_layers) {
        cached_len = 0;
        k.assign(n_layers, {});
        v.assign(n_layers, {});
    }
    void truncate(int new_len, int width) {
        if (new_len > cached_len) throw UsageError("kv cache: cannot truncate forward");
        cached_len = new_len;
        for (auto& b : k) b.resize(static_cast<size_t>(new_len) * width);
        for (auto& b : v) b.resize(static_cast<size_t>(new_len) * width);
    }
};
using KvCache = KvCacheT<float>;

// Observation hooks for a forward pass. `projection_input` fires once per
// projection with the activation matrix feeding it (used for saliency
// calibration); `block_inputs` collects the residual stream entering each
// block plus the final block output.
template <typename T>
struct ForwardCapture {
    std::function<void(const std::string& path, const Tensor<T>& input)> projection_input;
    std::vector<Tensor<T>>* block_inputs = nullptr;
};

namespace detail {

template <typename T>
const Tensor<T>& fetch_weight(const ModelT<T>& model, const std::string& path) {
    auto it = model.weights.find(path);
    if (it == model.weights.end()) throw UsageError("missing weight: " + path);
    return it->second;
}

template <typename T>
Tensor<T> weight_handle(const ModelT<T>& model, Tape<T>* tape, const std::string& path) {
    if (tape && tape->has_param(path)) return tape->param(path);
    return fetch_weight(model, path);
}

}  // namespace detail

template <typename T>
ModelT<T> init_model(const TransformerConfig& config, uint64_t seed, T init_std = T(0.02)) {
    config.validate();
    ModelT<T> model;
    model.config = config;
    std::mt19937_64 rng(mix_seed(seed, 0x6d6f64656cULL));
    for (const auto& path : config.weight_paths()) {
        auto shape = config.weight_shape(path);
        if (shape.size() == 1) {
            model.weights.emplace(path, Tensor<T>::full(shape, T(1)));  // norm scales start at identity
        } else {
            model.weights.emplace(path, Tensor<T>::randn(shape, rng, init_std));
        }
    }
    return model;
}

template <typename T>
void register_model_params(Tape<T>& tape, const ModelT<T>& model) {
    for (const auto& [path, w] : model.weights) tape.register_param(path, w);
}

// Forward pass over `tokens`, optionally continuing from a KV cache and/or
// recording on a tape (the two are mutually exclusive: training runs use the
// full sequence). Returns logits [len x vocab]; row j conditions only on
// positions <= cached_len + j.
template <typename T>
Tensor<T> forward(const ModelT<T>& model, std::span<const TokenId> tokens,
                  std::type_identity_t<KvCacheT<T>*> cache = nullptr,
                  std::type_identity_t<Tape<T>*> tape = nullptr,
                  std::type_identity_t<const ForwardCapture<T>*> capture = nullptr) {
    const TransformerConfig& cfg = model.config;
    if (tokens.empty()) throw UsageError("forward: empty token sequence");
    if (cache && tape) throw UsageError("forward: kv cache not supported while recording gradients");
    const int len = static_cast<int>(tokens.size());
    const int start = cache ? cache->cached_len : 0;
    if (start + len > cfg.max_seq) throw UsageError("forward: sequence overflow (max_seq)");
    if (cache && static_cast<int>(cache->k.size()) != cfg.n_layers) cache->reset(cfg.n_layers);

    const int kv_width = cfg.n_kv_heads * cfg.d_head;
    const int group = cfg.n_heads / cfg.n_kv_heads;
    const T inv_sqrt_dh = T(1) / std::sqrt(static_cast<T>(cfg.d_head));
    constexpr T kNormEps = T(1e-5);

    Tensor<T> embed = detail::weight_handle(model, tape, "embed.weight");
    Tensor<T> x = embedding_lookup(embed, tokens, tape);

    for (int b = 0; b < cfg.n_layers; ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        if (capture && capture->block_inputs) capture->block_inputs->push_back(x.detached());

        // Attention
        Tensor<T> h = mul_rowvec(rms_norm(x, kNormEps, tape),
                                 detail::weight_handle(model, tape, prefix + "attn_norm.weight"), tape);
        if (capture && capture->projection_input) {
            capture->projection_input(prefix + "attn.wq.weight", h);
            capture->projection_input(prefix + "attn.wk.weight", h);
            capture->projection_input(prefix + "attn.wv.weight", h);
        }
        Tensor<T> q = matmul_bt(h, detail::weight_handle(model, tape, prefix + "attn.wq.weight"), tape);
        Tensor<T> k = matmul_bt(h, detail::weight_handle(model, tape, prefix + "attn.wk.weight"), tape);
        Tensor<T> v = matmul_bt(h, detail::weight_handle(model, tape, prefix + "attn.wv.weight"), tape);
        q = rope(q, cfg.n_heads, cfg.d_head, cfg.rope_base == 0 ? T(10000) : static_cast<T>(cfg.rope_base), start, tape);
        k = rope(k, cfg.n_kv_heads, cfg.d_head, cfg.rope_base == 0 ? T(10000) : static_cast<T>(cfg.rope_base), start, tape);

        Tensor<T> k_all = k, v_all = v;
        if (cache) {
            auto& ck = cache->k[b];
            auto& cv = cache->v[b];
            ck.insert(ck.end(), k.data(), k.data() + k.numel());
            cv.insert(cv.end(), v.data(), v.data() + v.numel());
            k_all = Tensor<T>({start + len, kv_width}, ck);
            v_all = Tensor<T>({start + len, kv_width}, cv);
        }

        std::vector<Tensor<T>> head_outs;
        head_outs.reserve(cfg.n_heads);
        for (int hh = 0; hh < cfg.n_heads; ++hh) {
            const int g = hh / group;
            Tensor<T> qh = slice_cols(q, hh * cfg.d_head, cfg.d_head, tape);
            Tensor<T> kh = slice_cols(k_all, g * cfg.d_head, cfg.d_head, tape);
            Tensor<T> vh = slice_cols(v_all, g * cfg.d_head, cfg.d_head, tape);
            Tensor<T> scores = scale(matmul_bt(qh, kh, tape), inv_sqrt_dh, tape);
            Tensor<T> probs = causal_row_softmax(scores, start, tape);
            head_outs.push_back(matmul(probs, vh, tape));
        }
        Tensor<T> attn = concat_cols(head_outs, tape);
        if (capture && capture->projection_input) capture->projection_input(prefix + "attn.wo.weight", attn);
        Tensor<T> attn_out = matmul_bt(attn, detail::weight_handle(model, tape, prefix + "attn.wo.weight"), tape);
        x = add(x, attn_out, tape);

        // SwiGLU feed-forward
        Tensor<T> h2 = mul_rowvec(rms_norm(x, kNormEps, tape),
                                  detail::weight_handle(model, tape, prefix + "ffn_norm.weight"), tape);
        if (capture && capture->projection_input) {
            capture->projection_input(prefix + "ffn.wgate.weight", h2);
            capture->projection_input(prefix + "ffn.wup.weight", h2);
        }
        Tensor<T> gate = matmul_bt(h2, detail::weight_handle(model, tape, prefix + "ffn.wgate.weight"), tape);
        Tensor<T> up = matmul_bt(h2, detail::weight_handle(model, tape, prefix + "ffn.wup.weight"), tape);
        Tensor<T> act = mul(silu(gate, tape), up, tape);
        if (capture && capture->projection_input) capture->projection_input(prefix + "ffn.wdown.weight", act);
        Tensor<T> down = matmul_bt(act, detail::weight_handle(model, tape, prefix + "ffn.wdown.weight"), tape);
        x = add(x, down, tape);
    }
    if (capture && capture->block_inputs) capture->block_inputs->push_back(x.detached());
    if (cache) cache->cached_len += len;

    Tensor<T> xn = mul_rowvec(rms_norm(x, kNormEps, tape),
                              detail::weight_handle(model, tape, "final_norm.weight"), tape);
    Tensor<T> lm = cfg.tie_embeddings ? embed : detail::weight_handle(model, tape, "lm_head.weight");
    return matmul_bt(xn, lm, tape);
}

// Residual-stream states x^1 .. x^{N+1} for the last token of `tokens`:
// x^i is the input to block i, x^{N+1} the final block's output (pre
// final-norm). Each is a vector of length d_model.
template <typename T>
std::vector<std::vector<T>> capture_block_inputs(const ModelT<T>& model, std::span<const TokenId> tokens) {
    std::vector<Tensor<T>> states;
    ForwardCapture<T> capture;
    capture.block_inputs = &states;
    forward(model, tokens, nullptr, nullptr, &capture);
    std::vector<std::vector<T>> out;
    out.reserve(states.size());
    const int last = static_cast<int>(tokens.size()) - 1;
    for (const auto& s : states) {
        const T* row = s.data() + static_cast<int64_t>(last) * s.cols();
        out.emplace_back(row, row + s.cols());
    }
    return out;
}

// Per-token, weights-only MAC accounting: each linear layer contributes
// rows x cols MACs, the embedding lookup contributes none, and the lm-head is
// always counted whether or not it shares storage with the embedding.
// Sequence-length-dependent attention-score MACs are excluded by definition.
struct MacReport {
    int64_t attention_projections = 0;
    int64_t ffn = 0;
    int64_t lm_head = 0;
    int64_t total_dense = 0;
    double total_effective = 0.0;
    double reduction = 0.0;
};

MacReport count_macs(const TransformerConfig& config, const SparsityPlan* plan = nullptr,
                     int pruned_blocks = 0);

// Published architecture used by the MAC-accounting checks.
TransformerConfig llama32_3b_config();

}  // namespace draftlab
