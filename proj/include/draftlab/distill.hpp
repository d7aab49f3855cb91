#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "draftlab/model.hpp"

// Synthetic fine-tuning tasks over a small symbolic token alphabet, plus
// self-data distillation: for each task sample the target model is prompted
// with context || input || label and its sampled continuation becomes the new
// label, accepted without verification.

namespace draftlab {

// Reserved token alphabet shared by the synthetic corpus and the micro
// models. Letter tokens occupy [kLetterBase, vocab_size).
namespace vocab {
constexpr TokenId kEos = 0;
constexpr TokenId kSep = 1;  // "the answer follows"
constexpr TokenId kRef = 2;  // "a reference answer follows" (distillation prompts)
constexpr TokenId kCopyTag = 4;
constexpr TokenId kArithTag = 5;
constexpr TokenId kMapTag = 6;
constexpr TokenId kSummaryTag = 7;
constexpr TokenId kPlus = 8;
constexpr TokenId kEquals = 9;
constexpr TokenId kDigitBase = 10;  // digits 0-9 are tokens 10..19
constexpr TokenId kLetterBase = 20;
constexpr int kMinVocab = 32;
}  // namespace vocab

enum class TaskKind { copy_retrieval, arithmetic, mapping, summary };

const char* task_kind_name(TaskKind kind);
TaskKind task_kind_from_name(const std::string& name);

struct TaskSample {
    TokenSeq context;  // may be empty
    TokenSeq prompt;   // non-empty
    TokenSeq label;
    TaskKind kind = TaskKind::copy_retrieval;
};

struct CorpusSpec {
    int vocab_size = 64;
    std::map<TaskKind, int> counts;  // samples per task kind
    int max_span = 6;                // longest copied/mapped/summarized span
    int n_letters = 0;               // letter-pool size; 0 = vocab_size - kLetterBase
    int max_operand = 50;            // arithmetic operands drawn from [0, max_operand)
    int max_seq = 128;
};

// Deterministic in `seed`; emits counts[kind] samples per task kind, ordered
// by kind then sample index.
std::vector<TaskSample> synth_corpus(uint64_t seed, const CorpusSpec& spec);

// The distillation prompt: context || kSep || input || kRef || label, with
// each separator present only when the segment before it is non-empty. Ending
// on the reference (not on kSep) cues the model to produce a fresh answer.
TokenSeq build_distill_prompt(const TaskSample& sample, int max_seq);

// Pretraining rendering of a task in the referenced format: the distillation
// prompt followed by the answer cue, the true answer, and EOS. Teaches the
// model what to emit when it is later prompted with build_distill_prompt
// output. When an rng is supplied, each reference token is replaced with a
// same-class random token at `corruption_rate`, so the model learns that the
// task is authoritative and the reference is only a hint -- which is what
// makes its later self-distilled labels reflect its own answers rather than
// echoes of the reference.
TokenSeq render_referenced_sequence(const TaskSample& sample, int max_seq);
TokenSeq render_referenced_sequence(const TaskSample& sample, int max_seq, int vocab_size,
                                    double corruption_rate, std::mt19937_64& rng);

// input || separator: what the model sees at inference/fine-tuning time.
TokenSeq inference_prompt(const TaskSample& sample);

struct SamplerSettings {
    double p = 1.0;
    double temperature = 0.9;
    int max_gen = 64;
    bool greedy = false;  // degenerate temperature->0 mode
};

// Temperature-scaled nucleus sampling from one logits row: the smallest
// descending-probability prefix with cumulative mass >= p is renormalized and
// sampled. p -> 0 degenerates to argmax.
TokenId sample_top_p(const Tensor<float>& logits, int row, double p, double temperature,
                     std::mt19937_64& rng);

struct DistillRecord {
    TokenSeq prompt;  // X (task input only; context is used just to build X')
    TokenSeq label;   // sampled continuation, EOS not included
};

struct DistilledDataset {
    std::vector<DistillRecord> records;
    std::string target_id;  // provenance: checkpoint identity
    SamplerSettings sampler;
    uint64_t seed = 0;
};

// Algorithmic core of the pipeline's alignment stage: one record per input
// sample, labels sampled from the target on X' and accepted unconditionally.
// Per-sample rng streams are derived from (seed, sample index).
DistilledDataset self_distill(const Model& target, const std::vector<TaskSample>& dataset,
                              const SamplerSettings& sampler, uint64_t seed,
                              const std::string& target_id = "");

// Training-sequence rendering: prompt || SEP || label || EOS, and the index
// of the first label position (SEP included in the prompt span).
std::pair<TokenSeq, int> render_training_sequence(const TokenSeq& prompt, const TokenSeq& label);

// Line-delimited JSON serialization.
void save_tasks(const std::string& path, const std::vector<TaskSample>& tasks);
std::vector<TaskSample> load_tasks(const std::string& path);
void save_dataset(const std::string& path, const DistilledDataset& data);
DistilledDataset load_dataset(const std::string& path);

}  // namespace draftlab
