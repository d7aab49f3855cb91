#include "draftlab/layerprune.hpp"

#include <cmath>

namespace draftlab {

namespace {

template <typename T>
double angular_distance_impl(std::span<const T> u, std::span<const T> v) {
    if (u.size() != v.size() || u.empty()) throw ShapeError("angular_distance: length mismatch");
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (size_t i = 0; i < u.size(); ++i) {
        dot += static_cast<double>(u[i]) * v[i];
        nu += static_cast<double>(u[i]) * u[i];
        nv += static_cast<double>(v[i]) * v[i];
    }
    if (nu == 0.0 || nv == 0.0) throw NumericError("angular_distance: zero-norm vector");
    const double cosine = std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
    return std::acos(cosine) / M_PI;
}

}  // namespace

double angular_distance(std::span<const float> u, std::span<const float> v) {
    return angular_distance_impl(u, v);
}

double angular_distance(std::span<const double> u, std::span<const double> v) {
    return angular_distance_impl(u, v);
}

std::vector<BlockGroupScore> score_block_groups(const Model& model,
                                                const std::vector<TokenSeq>& calibration, int n) {
    const int blocks = model.config.n_layers;
    if (n < 1 || n >= blocks) throw UsageError("score_block_groups: need 1 <= n < n_layers");
    if (calibration.empty()) throw UsageError("score_block_groups: empty calibration set");

    const int candidates = blocks - n + 1;
    std::vector<double> sums(candidates, 0.0);
    for (const auto& seq : calibration) {
        const auto states = capture_block_inputs(model, seq);  // x^1 .. x^{N+1}
        for (int i = 0; i < candidates; ++i) {
            sums[i] += angular_distance(std::span<const float>(states[i]),
                                        std::span<const float>(states[i + n]));
        }
    }
    std::vector<BlockGroupScore> scores(candidates);
    for (int i = 0; i < candidates; ++i) {
        scores[i] = BlockGroupScore{i, n, sums[i] / static_cast<double>(calibration.size())};
    }
    return scores;
}

int select_block_group(const Model& model, const std::vector<TokenSeq>& calibration, int n,
                       std::vector<BlockGroupScore>* all_scores) {
    auto scores = score_block_groups(model, calibration, n);
    int best = 0;
    for (int i = 1; i < static_cast<int>(scores.size()); ++i) {
        if (scores[i].distance < scores[best].distance) best = i;  // ties keep the lower index
    }
    if (all_scores) *all_scores = std::move(scores);
    return best;
}

Model remove_blocks(const Model& model, int start, int n) {
    if (n == 0) return model;
    const int blocks = model.config.n_layers;
    if (n < 0 || start < 0 || start + n > blocks) {
        throw UsageError("remove_blocks: group out of bounds");
    }
    Model pruned;
    pruned.config = model.config;
    pruned.config.n_layers = blocks - n;
    for (const auto& [path, w] : model.weights) {
        if (path.rfind("blocks.", 0) != 0) {
            pruned.weights.emplace(path, w.clone());
            continue;
        }
        const size_t numstart = std::string("blocks.").size();
        const size_t dot = path.find('.', numstart);
        const int b = std::stoi(path.substr(numstart, dot - numstart));
        if (b >= start && b < start + n) continue;
        const int nb = b < start ? b : b - n;
        pruned.weights.emplace("blocks." + std::to_string(nb) + path.substr(dot), w.clone());
    }
    return pruned;
}

}  // namespace draftlab
