#include "draftlab/specdec.hpp"

#include <algorithm>

namespace draftlab {

int argmax_row(const Tensor<float>& logits, int row) {
    const int cols = logits.cols();
    const float* x = logits.data() + static_cast<int64_t>(row) * cols;
    int best = 0;
    for (int j = 1; j < cols; ++j) {
        if (x[j] > x[best]) best = j;  // strict: ties resolve to the lowest id
    }
    return best;
}

TokenSeq greedy_decode(const Model& model, const TokenSeq& prompt, int max_new_tokens,
                       std::optional<TokenId> eos) {
    if (prompt.empty()) throw UsageError("greedy_decode: empty prompt");
    if (max_new_tokens < 0) throw UsageError("greedy_decode: negative token budget");
    TokenSeq out = prompt;
    if (max_new_tokens == 0) return out;

    KvCache cache;
    cache.reset(model.config.n_layers);
    if (out.size() > 1) {
        forward(model, std::span<const TokenId>(out.data(), out.size() - 1), &cache);
    }
    TokenId pending = out.back();
    for (int i = 0; i < max_new_tokens; ++i) {
        Tensor<float> logits = forward(model, std::span<const TokenId>(&pending, 1), &cache);
        const TokenId next = argmax_row(logits, 0);
        out.push_back(next);
        if (eos && next == *eos) break;
        pending = next;
    }
    return out;
}

std::pair<TokenSeq, SpecStats> speculative_decode(const Model& draft, const Model& target,
                                                  const TokenSeq& prompt,
                                                  const SpecDecodeConfig& cfg) {
    if (draft.config.vocab_size != target.config.vocab_size) {
        throw UsageError("speculative_decode: draft and target vocab sizes differ");
    }
    if (prompt.empty()) throw UsageError("speculative_decode: empty prompt");
    if (cfg.k < 1) throw UsageError("speculative_decode: k must be >= 1");
    if (cfg.max_new_tokens < 1) throw UsageError("speculative_decode: max_new_tokens must be >= 1");

    const int draft_kv_width = draft.config.n_kv_heads * draft.config.d_head;
    const int target_kv_width = target.config.n_kv_heads * target.config.d_head;

    KvCache dc, tc;
    dc.reset(draft.config.n_layers);
    tc.reset(target.config.n_layers);

    TokenSeq committed = prompt;
    // Both caches hold committed[0 .. n-2]; the last committed token is fed
    // as the first token of the next forward on each side.
    if (committed.size() > 1) {
        std::span<const TokenId> prefix(committed.data(), committed.size() - 1);
        forward(draft, prefix, &dc);
        forward(target, prefix, &tc);
    }

    SpecStats stats;
    int remaining = cfg.max_new_tokens;
    bool done = false;

    while (remaining > 0 && !done) {
        const TokenId pending = committed.back();
        const int budget = std::min(cfg.k, remaining);

        // Draft proposes up to `budget` greedy tokens, stopping early at EOS.
        TokenSeq drafted;
        drafted.reserve(budget);
        TokenId feed = pending;
        for (int j = 0; j < budget; ++j) {
            Tensor<float> dl = forward(draft, std::span<const TokenId>(&feed, 1), &dc);
            const TokenId t = argmax_row(dl, 0);
            drafted.push_back(t);
            if (cfg.eos_token && t == *cfg.eos_token) break;
            feed = t;
        }
        const int d = static_cast<int>(drafted.size());

        // Target scores every draft position plus one in a single forward:
        // row j predicts committed position n + j.
        TokenSeq verify_in;
        verify_in.reserve(d + 1);
        verify_in.push_back(pending);
        verify_in.insert(verify_in.end(), drafted.begin(), drafted.end());
        Tensor<float> tl = forward(target, verify_in, &tc);

        int accepted = 0;
        while (accepted < d && drafted[accepted] == argmax_row(tl, accepted)) ++accepted;

        // Accepted prefix plus the target token at the first mismatch (the
        // bonus token when everything matched).
        TokenSeq emitted(drafted.begin(), drafted.begin() + accepted);
        emitted.push_back(argmax_row(tl, accepted));

        if (cfg.eos_token) {
            for (size_t j = 0; j < emitted.size(); ++j) {
                if (emitted[j] == *cfg.eos_token) {
                    emitted.resize(j + 1);
                    done = true;
                    break;
                }
            }
        }
        if (static_cast<int>(emitted.size()) >= remaining) {
            emitted.resize(remaining);
            done = true;
        }

        committed.insert(committed.end(), emitted.begin(), emitted.end());
        remaining -= static_cast<int>(emitted.size());

        RoundRecord round;
        round.drafted = d;
        round.accepted = accepted;
        round.emitted = static_cast<int>(emitted.size());
        stats.rounds.push_back(round);
        stats.total_drafted += d;
        stats.total_accepted += accepted;
        stats.total_emitted += round.emitted;

        // Roll both caches back to the committed prefix (minus the pending
        // token). On full acceptance the draft never consumed its own last
        // proposal, so its cache catches up instead of truncating.
        const int keep = static_cast<int>(committed.size()) - 1;
        if (dc.cached_len > keep) {
            dc.truncate(keep, draft_kv_width);
        } else if (dc.cached_len < keep && !done) {
            forward(draft,
                    std::span<const TokenId>(committed.data() + dc.cached_len,
                                             static_cast<size_t>(keep - dc.cached_len)),
                    &dc);
        }
        tc.truncate(std::min(keep, tc.cached_len), target_kv_width);
    }
    return {committed, stats};
}

double mean_accepted_length(const SpecStats& stats) {
    if (stats.rounds.empty()) throw UsageError("mean_accepted_length: no rounds recorded");
    double sum = 0.0;
    for (const auto& r : stats.rounds) sum += r.emitted;
    return sum / static_cast<double>(stats.rounds.size());
}

double improvement_factor(double mal, int k, double c) {
    if (mal < 1.0) throw UsageError("improvement_factor: mal must be >= 1");
    if (k < 1) throw UsageError("improvement_factor: k must be >= 1");
    if (c < 0.0) throw UsageError("improvement_factor: cost factor must be >= 0");
    return mal / (static_cast<double>(k) * c + 1.0);
}

double cost_factor(double draft_cost, double target_cost) {
    if (target_cost <= 0.0) throw UsageError("cost_factor: target cost must be positive");
    if (draft_cost < 0.0) throw UsageError("cost_factor: draft cost must be >= 0");
    return draft_cost / target_cost;
}

}  // namespace draftlab
