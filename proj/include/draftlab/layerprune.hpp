#pragma once

#include <span>
#include <vector>

#include "draftlab/model.hpp"

// Layer-pruned draft baselines: pick the group of n consecutive decoder
// blocks whose input and output are most similar under the angular cosine
// distance, then splice them out of the model.

namespace draftlab {

// (1/pi) * arccos(u.v / (|u| |v|)), with the cosine clamped to [-1, 1] before
// arccos. Result lies in [0, 1]; zero-norm inputs are an error.
double angular_distance(std::span<const float> u, std::span<const float> v);
double angular_distance(std::span<const double> u, std::span<const double> v);

struct BlockGroupScore {
    int start = 0;      // 0-based index of the first block in the group
    int length = 0;     // n, the number of consecutive blocks
    double distance = 0.0;  // mean angular distance over the calibration set
};

// Scores every candidate start index for a group of n consecutive blocks:
// the last-token residual state entering block i is compared with the state
// entering block i+n, averaged over the calibration sequences.
std::vector<BlockGroupScore> score_block_groups(const Model& model,
                                                const std::vector<TokenSeq>& calibration, int n);

// argmin over score_block_groups; ties break toward the lowest start index.
// Returns the 0-based start index of the group to prune.
int select_block_group(const Model& model, const std::vector<TokenSeq>& calibration, int n,
                       std::vector<BlockGroupScore>* all_scores = nullptr);

// Deletes decoder blocks [start, start+n), reindexes the survivors, and
// decrements n_layers. n = 0 returns the model unchanged.
Model remove_blocks(const Model& model, int start, int n);

}  // namespace draftlab
