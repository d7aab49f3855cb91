#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "draftlab/model.hpp"

// Speculative decoding with greedy drafting and strict top-1 verification:
// the draft proposes up to k argmax tokens per round, the target scores all
// draft positions plus one in a single forward, and the longest matching
// prefix is accepted with the first mismatch replaced by the target argmax.
// Output is token-identical to decoding the target alone.

namespace draftlab {

struct SpecDecodeConfig {
    int k = 5;
    int max_new_tokens = 64;
    std::optional<TokenId> eos_token;
};

struct RoundRecord {
    int drafted = 0;   // tokens proposed this round (<= k; draft may stop at EOS)
    int accepted = 0;  // longest matching prefix (<= drafted)
    int emitted = 0;   // tokens committed: accepted + 1, capped by max_new_tokens/EOS
};

struct SpecStats {
    std::vector<RoundRecord> rounds;
    int64_t total_drafted = 0;
    int64_t total_accepted = 0;
    int64_t total_emitted = 0;
};

// Lowest token id wins ties, everywhere argmax is taken.
int argmax_row(const Tensor<float>& logits, int row);

// Appends argmax tokens one at a time until max_new_tokens or EOS. Returns
// the prompt plus generated tokens.
TokenSeq greedy_decode(const Model& model, const TokenSeq& prompt, int max_new_tokens,
                       std::optional<TokenId> eos = std::nullopt);

std::pair<TokenSeq, SpecStats> speculative_decode(const Model& draft, const Model& target,
                                                  const TokenSeq& prompt,
                                                  const SpecDecodeConfig& cfg);

// Mean over rounds of tokens committed per round (accepted draft tokens plus
// the one target token); lies in [1, k+1].
double mean_accepted_length(const SpecStats& stats);

// mal / (k*c + 1)
double improvement_factor(double mal, int k, double c);

// draft cost over target cost; callers supply per-token latencies or MACs.
double cost_factor(double draft_cost, double target_cost);

}  // namespace draftlab
