#include "draftlab/sparsity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace draftlab {

SparsityPlan SparsityPlan::uniform(const TransformerConfig& config, SparsityPattern pattern,
                                   double sparsity) {
    if (pattern == SparsityPattern::two_four && sparsity != 0.5) {
        throw UsageError("two_four pattern forces per-matrix sparsity 0.5");
    }
    SparsityPlan plan;
    plan.pattern = pattern;
    for (const auto& path : config.prunable_paths()) plan.per_matrix[path] = sparsity;
    return plan;
}

void SparsityPlan::validate(const TransformerConfig& config) const {
    const auto prunable = config.prunable_paths();
    for (const auto& [path, s] : per_matrix) {
        if (std::find(prunable.begin(), prunable.end(), path) == prunable.end()) {
            throw UsageError("sparsity plan covers non-prunable matrix: " + path);
        }
        if (!(s >= 0.0 && s <= 1.0)) throw UsageError("sparsity plan: target out of [0,1] for " + path);
        if (pattern == SparsityPattern::two_four && s != 0.5) {
            throw UsageError("two_four pattern forces per-matrix sparsity 0.5");
        }
    }
}

std::map<std::string, std::vector<float>> collect_input_norms(const Model& model,
                                                              const std::vector<TokenSeq>& calibration) {
    if (calibration.empty()) throw UsageError("collect_input_norms: empty calibration set");
    std::map<std::string, std::vector<double>> sumsq;
    ForwardCapture<float> capture;
    capture.projection_input = [&](const std::string& path, const Tensor<float>& input) {
        auto& acc = sumsq[path];
        const int cols = input.cols();
        if (acc.empty()) acc.assign(cols, 0.0);
        for (int i = 0; i < input.rows(); ++i) {
            const float* row = input.data() + static_cast<int64_t>(i) * cols;
            for (int j = 0; j < cols; ++j) acc[j] += static_cast<double>(row[j]) * row[j];
        }
    };
    for (const auto& seq : calibration) forward(model, seq, nullptr, nullptr, &capture);
    std::map<std::string, std::vector<float>> norms;
    for (auto& [path, acc] : sumsq) {
        std::vector<float> n(acc.size());
        for (size_t j = 0; j < acc.size(); ++j) n[j] = static_cast<float>(std::sqrt(acc[j]));
        norms.emplace(path, std::move(n));
    }
    return norms;
}

SaliencyScores compute_saliency(const Model& model, SaliencyMethod method,
                                const std::map<std::string, std::vector<float>>* input_norms,
                                const std::vector<std::string>* scope) {
    std::vector<std::string> paths = scope ? *scope : model.config.prunable_paths();
    SaliencyScores out;
    out.method = method;
    for (const auto& path : paths) {
        const Tensor<float>& w = detail::fetch_weight(model, path);
        Tensor<float> s(w.shape());
        const int rows = w.rows(), cols = w.cols();
        const std::vector<float>* norms = nullptr;
        if (method == SaliencyMethod::activation_weighted) {
            if (!input_norms) throw UsageError("activation_weighted saliency requires calibration norms");
            auto it = input_norms->find(path);
            if (it == input_norms->end() || static_cast<int>(it->second.size()) != cols) {
                throw UsageError("calibration norms missing or wrong length for " + path);
            }
            norms = &it->second;
        }
        for (int i = 0; i < rows; ++i) {
            for (int j = 0; j < cols; ++j) {
                float v = std::fabs(w.at(i, j));
                if (norms) v *= (*norms)[j];
                s.at(i, j) = v;
            }
        }
        out.scores.emplace(path, std::move(s));
    }
    return out;
}

namespace {

const Tensor<float>& score_for(const SaliencyScores& scores, const std::string& path) {
    auto it = scores.scores.find(path);
    if (it == scores.scores.end()) throw UsageError("no saliency scores for " + path);
    return it->second;
}

}  // namespace

SparsityMask prune_unstructured(const SaliencyScores& scores, const SparsityPlan& plan) {
    if (plan.pattern != SparsityPattern::unstructured) {
        throw UsageError("prune_unstructured requires an unstructured plan");
    }
    SparsityMask mask;
    for (const auto& [path, sparsity] : plan.per_matrix) {
        if (!(sparsity >= 0.0 && sparsity < 1.0)) {
            throw UsageError("prune_unstructured: sparsity outside [0,1) for " + path);
        }
        const Tensor<float>& s = score_for(scores, path);
        const int64_t n = s.numel();
        const auto prune_count = static_cast<int64_t>(std::floor(sparsity * static_cast<double>(n)));
        std::vector<int64_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
            return s.data()[a] < s.data()[b];  // stable: equal scores keep index order
        });
        MaskEntry entry;
        entry.shape = s.shape();
        entry.keep.assign(n, 1);
        for (int64_t i = 0; i < prune_count; ++i) entry.keep[order[i]] = 0;
        mask.entries.emplace(path, std::move(entry));
    }
    return mask;
}

SparsityMask prune_two_four(const SaliencyScores& scores) {
    SparsityMask mask;
    for (const auto& [path, s] : scores.scores) {
        const int rows = s.rows(), cols = s.cols();
        if (cols % 4 != 0) {
            throw UsageError("prune_two_four: input dimension of " + path + " not divisible by 4");
        }
        MaskEntry entry;
        entry.shape = s.shape();
        entry.keep.assign(s.numel(), 1);
        for (int i = 0; i < rows; ++i) {
            for (int g = 0; g < cols; g += 4) {
                const int64_t base = static_cast<int64_t>(i) * cols + g;
                int idx[4] = {0, 1, 2, 3};
                std::stable_sort(idx, idx + 4, [&](int a, int b) {
                    return s.data()[base + a] < s.data()[base + b];
                });
                entry.keep[base + idx[0]] = 0;
                entry.keep[base + idx[1]] = 0;
            }
        }
        mask.entries.emplace(path, std::move(entry));
    }
    return mask;
}

std::vector<double> outlier_ratio(const std::vector<std::vector<float>>& layer_scores, double M) {
    if (M <= 0.0) throw UsageError("outlier_ratio: M must be positive");
    std::vector<double> out;
    out.reserve(layer_scores.size());
    for (const auto& layer : layer_scores) {
        if (layer.empty()) throw UsageError("outlier_ratio: empty score matrix");
        double mean = 0.0;
        for (float v : layer) mean += v;
        mean /= static_cast<double>(layer.size());
        const double threshold = M * mean;
        int64_t above = 0;
        for (float v : layer) above += (static_cast<double>(v) > threshold);
        out.push_back(static_cast<double>(above) / static_cast<double>(layer.size()));
    }
    return out;
}

std::vector<double> block_outlier_ratios(const SaliencyScores& scores,
                                         const TransformerConfig& config, double M) {
    std::vector<std::vector<float>> pooled(config.n_layers);
    for (int b = 0; b < config.n_layers; ++b) {
        const std::string prefix = "blocks." + std::to_string(b) + ".";
        for (const auto& [path, s] : scores.scores) {
            if (path.rfind(prefix, 0) == 0) {
                pooled[b].insert(pooled[b].end(), s.data(), s.data() + s.numel());
            }
        }
    }
    return outlier_ratio(pooled, M);
}

std::vector<double> owl_sparsities(const std::vector<double>& outlier_ratios, double S, double lambda) {
    if (outlier_ratios.empty()) throw UsageError("owl_sparsities: no layers");
    if (!(lambda >= 0.0 && lambda < std::min(S, 1.0 - S))) {
        throw UsageError("owl_sparsities: lambda must satisfy 0 <= lambda < min(S, 1-S)");
    }
    for (double d : outlier_ratios) {
        if (!(d >= 0.0 && d <= 1.0)) throw UsageError("owl_sparsities: outlier ratio outside [0,1]");
    }
    const size_t n = outlier_ratios.size();
    const double mean = std::accumulate(outlier_ratios.begin(), outlier_ratios.end(), 0.0) /
                        static_cast<double>(n);
    std::vector<double> dev(n);
    for (size_t i = 0; i < n; ++i) dev[i] = outlier_ratios[i] - mean;
    // re-center so the deviations sum to ~0 even after rounding
    const double resid = std::accumulate(dev.begin(), dev.end(), 0.0) / static_cast<double>(n);
    double max_dev = 0.0;
    for (double& d : dev) {
        d -= resid;
        max_dev = std::max(max_dev, std::fabs(d));
    }
    std::vector<double> out(n, S);
    if (max_dev > 1e-12 * std::max(1.0, std::fabs(mean))) {
        for (size_t i = 0; i < n; ++i) out[i] = S - lambda * dev[i] / max_dev;
    }
    return out;
}

SparsityPlan owl_distribution(const std::vector<double>& outlier_ratios, double S, double lambda,
                              const TransformerConfig& config) {
    if (static_cast<int>(outlier_ratios.size()) != config.n_layers) {
        throw UsageError("owl_distribution: one outlier ratio per decoder block required");
    }
    const auto per_block = owl_sparsities(outlier_ratios, S, lambda);
    SparsityPlan plan;
    plan.pattern = SparsityPattern::unstructured;
    for (const auto& path : config.prunable_paths()) {
        const int b = std::stoi(path.substr(std::string("blocks.").size()));
        plan.per_matrix[path] = per_block[b];
    }
    return plan;
}

std::vector<double> angular_sparsities(const std::vector<double>& block_distances, double S,
                                       bool literal_form) {
    if (block_distances.empty()) throw UsageError("angular_sparsities: no blocks");
    if (!(S >= 0.0 && S < 1.0)) throw UsageError("angular_sparsities: S must lie in [0,1)");
    double sum = 0.0;
    for (double d : block_distances) {
        if (d < 0.0) throw UsageError("angular_sparsities: distances must be >= 0");
        sum += std::fabs(d);
    }
    if (sum == 0.0) throw UsageError("angular_sparsities: all distances are zero");
    const double n = static_cast<double>(block_distances.size());
    std::vector<double> out(block_distances.size());
    for (size_t i = 0; i < out.size(); ++i) {
        double density = (1.0 - S) * block_distances[i] / sum;
        if (!literal_form) density *= n;
        density = std::clamp(density, 0.0, 0.99);
        out[i] = 1.0 - density;
    }
    return out;
}

SparsityPlan angular_distribution(const std::vector<double>& block_distances, double S,
                                  const TransformerConfig& config, bool literal_form) {
    if (static_cast<int>(block_distances.size()) != config.n_layers) {
        throw UsageError("angular_distribution: one distance per decoder block required");
    }
    const auto per_block = angular_sparsities(block_distances, S, literal_form);
    SparsityPlan plan;
    plan.pattern = SparsityPattern::unstructured;
    for (const auto& path : config.prunable_paths()) {
        const int b = std::stoi(path.substr(std::string("blocks.").size()));
        plan.per_matrix[path] = per_block[b];
    }
    return plan;
}

void apply_mask(std::map<std::string, Tensor<float>>& weights, const SparsityMask& mask) {
    for (const auto& [path, entry] : mask.entries) {
        auto it = weights.find(path);
        if (it == weights.end()) throw UsageError("apply_mask: no weight named " + path);
        Tensor<float>& w = it->second;
        if (w.shape() != entry.shape) throw ShapeError("apply_mask: shape mismatch for " + path);
        for (int64_t i = 0; i < w.numel(); ++i) {
            if (!entry.keep[i]) w.data()[i] = 0.0f;
        }
    }
}

void apply_mask(Model& model, const SparsityMask& mask) { apply_mask(model.weights, mask); }

SparsityReport measure_sparsity(const Model& model, const std::vector<std::string>& scope) {
    if (scope.empty()) throw UsageError("measure_sparsity: empty scope");
    SparsityReport report;
    int64_t zeros = 0, total = 0;
    for (const auto& path : scope) {
        const Tensor<float>& w = detail::fetch_weight(model, path);
        int64_t z = 0;
        for (int64_t i = 0; i < w.numel(); ++i) z += (w.data()[i] == 0.0f);
        report.per_matrix[path] = static_cast<double>(z) / static_cast<double>(w.numel());
        zeros += z;
        total += w.numel();
    }
    report.aggregate = static_cast<double>(zeros) / static_cast<double>(total);
    return report;
}

SparsityReport measure_mask_sparsity(const SparsityMask& mask) {
    if (mask.entries.empty()) throw UsageError("measure_mask_sparsity: empty mask");
    SparsityReport report;
    int64_t zeros = 0, total = 0;
    for (const auto& [path, entry] : mask.entries) {
        int64_t z = 0;
        for (uint8_t k : entry.keep) z += (k == 0);
        report.per_matrix[path] = static_cast<double>(z) / static_cast<double>(entry.keep.size());
        zeros += z;
        total += static_cast<int64_t>(entry.keep.size());
    }
    report.aggregate = static_cast<double>(zeros) / static_cast<double>(total);
    return report;
}

}  // namespace draftlab
