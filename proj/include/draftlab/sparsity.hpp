#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "draftlab/model.hpp"

// One-shot fine-grained pruning: saliency scoring, unstructured and 2:4 mask
// construction, layer-wise sparsity distributions (uniform, outlier-ratio
// based, angular-distance based), mask application and sparsity measurement.

namespace draftlab {

enum class SparsityPattern { unstructured, two_four };

struct SparsityPlan {
    SparsityPattern pattern = SparsityPattern::unstructured;
    // path -> target sparsity in [0, 1]; the key set is the prunable scope.
    std::map<std::string, double> per_matrix;

    static SparsityPlan uniform(const TransformerConfig& config, SparsityPattern pattern,
                                double sparsity);
    void validate(const TransformerConfig& config) const;
};

struct MaskEntry {
    std::vector<int> shape;
    std::vector<uint8_t> keep;  // 1 = keep, 0 = pruned
};

struct SparsityMask {
    std::map<std::string, MaskEntry> entries;
};

enum class SaliencyMethod { magnitude, activation_weighted };

struct SaliencyScores {
    SaliencyMethod method = SaliencyMethod::magnitude;
    std::map<std::string, Tensor<float>> scores;
};

// Per-input-feature L2 norms of the activations feeding each prunable
// projection, accumulated over a calibration set.
std::map<std::string, std::vector<float>> collect_input_norms(const Model& model,
                                                              const std::vector<TokenSeq>& calibration);

// magnitude: |W|. activation_weighted: ||X_j|| * |W_ij| with j the input
// feature; requires calibration norms of length C_in per matrix.
SaliencyScores compute_saliency(const Model& model, SaliencyMethod method,
                                const std::map<std::string, std::vector<float>>* input_norms = nullptr,
                                const std::vector<std::string>* scope = nullptr);

// Per matrix, the floor(sparsity * numel) lowest-scoring entries are pruned;
// ties break toward the lower flat index.
SparsityMask prune_unstructured(const SaliencyScores& scores, const SparsityPlan& plan);

// Within every contiguous group of four along the input dimension the two
// lowest-scoring entries are pruned; overall sparsity is exactly 0.5.
SparsityMask prune_two_four(const SaliencyScores& scores);

// Fraction of entries strictly exceeding M times the mean score, one value
// per score collection.
std::vector<double> outlier_ratio(const std::vector<std::vector<float>>& layer_scores, double M);

// Outlier ratios pooled per decoder block over its projection matrices.
std::vector<double> block_outlier_ratios(const SaliencyScores& scores,
                                         const TransformerConfig& config, double M);

// Mean-preserving affine allocation: S^l = S - lambda * (D^l - mean(D)) /
// max_l |D^l - mean(D)|, so every S^l lies in [S-lambda, S+lambda] and the
// mean equals S exactly. Degenerate (all-equal) ratios give uniform S.
std::vector<double> owl_sparsities(const std::vector<double>& outlier_ratios, double S, double lambda);
SparsityPlan owl_distribution(const std::vector<double>& outlier_ratios, double S, double lambda,
                              const TransformerConfig& config);

// Density proportional to each block's angular distance. The default form
// rescales by the block count n so that mean density is (1-S) when no
// clamping triggers; literal_form drops the rescaling (mean density (1-S)/n).
std::vector<double> angular_sparsities(const std::vector<double>& block_distances, double S,
                                       bool literal_form = false);
SparsityPlan angular_distribution(const std::vector<double>& block_distances, double S,
                                  const TransformerConfig& config, bool literal_form = false);

// Sets masked positions to exactly 0.0; kept positions are untouched.
void apply_mask(Model& model, const SparsityMask& mask);
void apply_mask(std::map<std::string, Tensor<float>>& weights, const SparsityMask& mask);

struct SparsityReport {
    std::map<std::string, double> per_matrix;
    double aggregate = 0.0;  // total zeros / total elements over the scope
};

SparsityReport measure_sparsity(const Model& model, const std::vector<std::string>& scope);
SparsityReport measure_mask_sparsity(const SparsityMask& mask);

}  // namespace draftlab
