#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "draftlab/distill.hpp"
#include "draftlab/model.hpp"
#include "draftlab/sparsity.hpp"

// Dense pretraining and sparse fine-tuning. The loss is the double average of
// token-level negative log-likelihood: per-sequence mean over label positions,
// then mean over the batch. Sparse runs pin pruned weights, their gradients,
// and their optimizer moments to exactly zero for the whole run.

namespace draftlab {

struct TrainConfig {
    double lr_peak = 1e-3;
    double warmup_frac = 0.05;
    int total_steps = 100;
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
    double grad_clip = 0.0;  // 0 disables clipping
    uint64_t seed = 0;
    int max_seq = 0;  // 0 = use the model's max_seq; longer sequences are truncated

    void validate() const;
};

struct OptimizerState {
    std::map<std::string, std::vector<float>> m, v;
    int64_t step = 0;
};

// Mean over masked positions of -log softmax(logits)[label] for one sequence.
// Recorded on the tape when one is supplied.
template <typename T>
Tensor<T> nll_loss(const Tensor<T>& logits, const TokenSeq& labels,
                   const std::vector<uint8_t>& loss_mask, Tape<T>* tape = nullptr) {
    return nll_rows<T>(logits, labels, loss_mask, tape);
}

// Linear warmup to the peak over ceil(warmup_frac * T) steps, then linear
// decay to zero at step T.
double lr_at(int64_t step, const TrainConfig& cfg);

// Bias-corrected adaptive update with decoupled weight decay:
//   p <- p - lr * (m_hat / (sqrt(v_hat) + eps) + wd * p)
void adamw_step(std::map<std::string, Tensor<float>>& params,
                const std::map<std::string, Tensor<float>>& grads, OptimizerState& state,
                double lr, const TrainConfig& cfg);

struct TrainCurvePoint {
    int64_t step = 0;
    double lr = 0.0;
    double loss = 0.0;
};

struct TrainResult {
    std::vector<TrainCurvePoint> curve;
    double final_loss = 0.0;
};

// Next-token language modelling over raw token sequences.
TrainResult pretrain_dense(Model& model, const std::vector<TokenSeq>& corpus,
                           const TrainConfig& cfg);

// Fine-tuning on (prompt, label) records with the loss restricted to label
// positions. With a mask: applies it up front, registers zero-mask gradient
// hooks, and keeps the sparse topology fixed for the whole run. The optimizer
// state is returned when the caller wants to inspect the moments.
TrainResult finetune(Model& model, const SparsityMask* mask,
                     const std::vector<DistillRecord>& data, const TrainConfig& cfg,
                     OptimizerState* state_out = nullptr);

inline TrainResult finetune_sparse(Model& model, const SparsityMask& mask,
                                   const DistilledDataset& data, const TrainConfig& cfg,
                                   OptimizerState* state_out = nullptr) {
    return finetune(model, &mask, data.records, cfg, state_out);
}

}  // namespace draftlab
