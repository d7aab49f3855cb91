#include "draftlab/train.hpp"

#include <algorithm>
#include <cmath>

namespace draftlab {

void TrainConfig::validate() const {
    if (!(warmup_frac >= 0.0 && warmup_frac < 1.0)) {
        throw UsageError("train config: warmup fraction must lie in [0,1)");
    }
    if (total_steps < 1) throw UsageError("train config: total_steps must be >= 1");
    if (batch_size < 1) throw UsageError("train config: batch_size must be >= 1");
    if (!(epsilon > 0.0)) throw UsageError("train config: epsilon must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
        throw UsageError("train config: betas must lie in [0,1)");
    }
    if (weight_decay < 0.0) throw UsageError("train config: weight decay must be >= 0");
}

double lr_at(int64_t step, const TrainConfig& cfg) {
    cfg.validate();
    const int64_t T = cfg.total_steps;
    if (step < 0 || step > T) throw UsageError("lr_at: step outside [0, total_steps]");
    const auto warmup = static_cast<int64_t>(std::ceil(cfg.warmup_frac * static_cast<double>(T)));
    if (warmup > 0 && step <= warmup) {
        return cfg.lr_peak * static_cast<double>(step) / static_cast<double>(warmup);
    }
    return cfg.lr_peak * static_cast<double>(T - step) / static_cast<double>(T - warmup);
}

void adamw_step(std::map<std::string, Tensor<float>>& params,
                const std::map<std::string, Tensor<float>>& grads, OptimizerState& state,
                double lr, const TrainConfig& cfg) {
    state.step += 1;
    const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    for (const auto& [path, grad] : grads) {
        auto it = params.find(path);
        if (it == params.end()) throw UsageError("adamw_step: no parameter named " + path);
        Tensor<float>& p = it->second;
        if (p.shape() != grad.shape()) throw ShapeError("adamw_step: gradient shape mismatch for " + path);
        auto& m = state.m[path];
        auto& v = state.v[path];
        if (m.empty()) m.assign(p.numel(), 0.0f);
        if (v.empty()) v.assign(p.numel(), 0.0f);
        const float* g = grad.data();
        float* w = p.data();
        for (int64_t i = 0; i < p.numel(); ++i) {
            m[i] = static_cast<float>(cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i]);
            v[i] = static_cast<float>(cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i]);
            const double m_hat = m[i] / bc1;
            const double v_hat = v[i] / bc2;
            w[i] = static_cast<float>(w[i] - lr * (m_hat / (std::sqrt(v_hat) + cfg.epsilon) +
                                                   cfg.weight_decay * w[i]));
        }
    }
}

namespace {

struct TrainExample {
    TokenSeq tokens;
    int label_start;  // first position whose prediction contributes to the loss
};

TrainResult run_training(Model& model, const std::vector<TrainExample>& examples,
                         const TrainConfig& cfg, const SparsityMask* mask,
                         OptimizerState* state_out) {
    cfg.validate();
    if (examples.empty()) throw UsageError("training: empty dataset");
    const int max_seq = cfg.max_seq > 0 ? std::min(cfg.max_seq, model.config.max_seq)
                                        : model.config.max_seq;

    if (mask) apply_mask(model, *mask);

    Tape32 tape;
    register_model_params(tape, model);
    if (mask) {
        for (const auto& [path, entry] : mask->entries) {
            tape.register_grad_hook(path, [keep = entry.keep](std::vector<float>& g) {
                for (size_t i = 0; i < g.size(); ++i) {
                    if (!keep[i]) g[i] = 0.0f;
                }
            });
        }
    }

    OptimizerState state;
    std::mt19937_64 rng(mix_seed(cfg.seed, 0x7452414954ULL));
    TrainResult result;
    result.curve.reserve(cfg.total_steps);

    for (int t = 1; t <= cfg.total_steps; ++t) {
        tape.begin_pass();
        Tensor<float> batch_loss;
        for (int n = 0; n < cfg.batch_size; ++n) {
            const auto& ex = examples[static_cast<size_t>(uniform_unit(rng) * examples.size())];
            TokenSeq tokens = ex.tokens;
            if (static_cast<int>(tokens.size()) > max_seq) tokens.resize(max_seq);  // truncate, never drop
            if (tokens.size() < 2) throw UsageError("training: sequence too short to train on");
            const int s = static_cast<int>(tokens.size());
            if (ex.label_start >= s) {
                throw UsageError("training: truncation removed every label position");
            }
            std::span<const TokenId> input(tokens.data(), s - 1);
            TokenSeq labels(tokens.begin() + 1, tokens.end());
            std::vector<uint8_t> loss_mask(s - 1);
            for (int i = 0; i + 1 < s; ++i) loss_mask[i] = (i + 1 >= ex.label_start) ? 1 : 0;
            Tensor<float> logits = forward(model, input, nullptr, &tape);
            Tensor<float> l = nll_rows<float>(logits, labels, loss_mask, &tape);
            batch_loss = batch_loss.defined() ? add(batch_loss, l, &tape) : l;
        }
        Tensor<float> loss = scale(batch_loss, 1.0f / static_cast<float>(cfg.batch_size), &tape);
        auto grads = tape.backward(loss);

        if (cfg.grad_clip > 0.0) {
            double sq = 0.0;
            for (const auto& [path, g] : grads) {
                for (int64_t i = 0; i < g.numel(); ++i) sq += static_cast<double>(g.data()[i]) * g.data()[i];
            }
            const double norm = std::sqrt(sq);
            if (norm > cfg.grad_clip) {
                const auto s = static_cast<float>(cfg.grad_clip / norm);
                for (auto& [path, g] : grads) {
                    for (int64_t i = 0; i < g.numel(); ++i) g.data()[i] *= s;
                }
            }
        }

        const double lr = lr_at(t, cfg);
        adamw_step(model.weights, grads, state, lr, cfg);
        result.curve.push_back(TrainCurvePoint{t, lr, static_cast<double>(loss.item())});
    }
    result.final_loss = result.curve.empty() ? 0.0 : result.curve.back().loss;
    if (state_out) *state_out = std::move(state);
    return result;
}

}  // namespace

TrainResult pretrain_dense(Model& model, const std::vector<TokenSeq>& corpus,
                           const TrainConfig& cfg) {
    std::vector<TrainExample> examples;
    examples.reserve(corpus.size());
    for (const auto& seq : corpus) examples.push_back(TrainExample{seq, 1});
    return run_training(model, examples, cfg, nullptr, nullptr);
}

TrainResult finetune(Model& model, const SparsityMask* mask,
                     const std::vector<DistillRecord>& data, const TrainConfig& cfg,
                     OptimizerState* state_out) {
    std::vector<TrainExample> examples;
    examples.reserve(data.size());
    for (const auto& rec : data) {
        auto [tokens, label_start] = render_training_sequence(rec.prompt, rec.label);
        examples.push_back(TrainExample{std::move(tokens), label_start});
    }
    return run_training(model, examples, cfg, mask, state_out);
}

}  // namespace draftlab
