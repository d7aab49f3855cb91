#include "draftlab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "draftlab/specdec.hpp"
#include "json.hpp"

namespace draftlab {

using nlohmann::json;

const char* task_kind_name(TaskKind kind) {
    switch (kind) {
        case TaskKind::copy_retrieval: return "copy_retrieval";
        case TaskKind::arithmetic: return "arithmetic";
        case TaskKind::mapping: return "mapping";
        case TaskKind::summary: return "summary";
    }
    throw UsageError("unknown task kind");
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "copy_retrieval") return TaskKind::copy_retrieval;
    if (name == "arithmetic") return TaskKind::arithmetic;
    if (name == "mapping") return TaskKind::mapping;
    if (name == "summary") return TaskKind::summary;
    throw UsageError("unknown task kind: " + name);
}

namespace {

TokenSeq digit_tokens(int value) {
    TokenSeq out;
    for (char c : std::to_string(value)) out.push_back(vocab::kDigitBase + (c - '0'));
    return out;
}

int rand_int(std::mt19937_64& rng, int lo, int hi) {  // inclusive bounds
    return lo + static_cast<int>(uniform_unit(rng) * (hi - lo + 1));
}

// Fixed letter bijection used by the mapping task: a rotation by 7 within the
// letter range, so it is learnable and not sample-dependent.
TokenId map_letter(TokenId letter, int n_letters) {
    return vocab::kLetterBase + (letter - vocab::kLetterBase + 7) % n_letters;
}

TaskSample make_sample(TaskKind kind, std::mt19937_64& rng, const CorpusSpec& spec) {
    const int pool = spec.vocab_size - vocab::kLetterBase;
    const int n_letters = spec.n_letters > 0 ? std::min(spec.n_letters, pool) : pool;
    TaskSample s;
    s.kind = kind;
    switch (kind) {
        case TaskKind::copy_retrieval: {
            const int len = rand_int(rng, 2, spec.max_span);
            s.prompt.push_back(vocab::kCopyTag);
            for (int i = 0; i < len; ++i) {
                s.prompt.push_back(vocab::kLetterBase + rand_int(rng, 0, n_letters - 1));
            }
            s.label.assign(s.prompt.begin() + 1, s.prompt.end());
            break;
        }
        case TaskKind::arithmetic: {
            const int a = rand_int(rng, 0, spec.max_operand - 1);
            const int b = rand_int(rng, 0, spec.max_operand - 1);
            s.prompt.push_back(vocab::kArithTag);
            for (TokenId t : digit_tokens(a)) s.prompt.push_back(t);
            s.prompt.push_back(vocab::kPlus);
            for (TokenId t : digit_tokens(b)) s.prompt.push_back(t);
            s.prompt.push_back(vocab::kEquals);
            s.label = digit_tokens(a + b);
            break;
        }
        case TaskKind::mapping: {
            const int len = rand_int(rng, 2, spec.max_span);
            // Context demonstrates the letter map on two worked pairs.
            for (int i = 0; i < 2; ++i) {
                const TokenId x = vocab::kLetterBase + rand_int(rng, 0, n_letters - 1);
                s.context.push_back(x);
                s.context.push_back(map_letter(x, n_letters));
            }
            s.prompt.push_back(vocab::kMapTag);
            for (int i = 0; i < len; ++i) {
                const TokenId x = vocab::kLetterBase + rand_int(rng, 0, n_letters - 1);
                s.prompt.push_back(x);
                s.label.push_back(map_letter(x, n_letters));
            }
            break;
        }
        case TaskKind::summary: {
            // A short stream with repeats; the label lists the distinct
            // symbols in order of first appearance.
            const int distinct = rand_int(rng, 2, std::min(4, spec.max_span));
            TokenSeq pool;
            for (int i = 0; i < distinct; ++i) {
                TokenId x;
                do {
                    x = vocab::kLetterBase + rand_int(rng, 0, n_letters - 1);
                } while (std::find(pool.begin(), pool.end(), x) != pool.end());
                pool.push_back(x);
            }
            s.prompt.push_back(vocab::kSummaryTag);
            const int stream_len = rand_int(rng, distinct, 2 * spec.max_span);
            TokenSeq seen;
            for (int i = 0; i < stream_len; ++i) {
                TokenId x = i < distinct ? pool[i] : pool[rand_int(rng, 0, distinct - 1)];
                s.prompt.push_back(x);
                if (std::find(seen.begin(), seen.end(), x) == seen.end()) seen.push_back(x);
            }
            s.label = seen;
            break;
        }
    }
    return s;
}

}  // namespace

std::vector<TaskSample> synth_corpus(uint64_t seed, const CorpusSpec& spec) {
    if (spec.vocab_size < vocab::kMinVocab) {
        throw UsageError("synth_corpus: vocab_size must be >= " + std::to_string(vocab::kMinVocab));
    }
    if (spec.counts.empty()) throw UsageError("synth_corpus: no task counts given");
    std::vector<TaskSample> out;
    for (const auto& [kind, count] : spec.counts) {
        if (count < 1) throw UsageError("synth_corpus: task counts must be >= 1");
        for (int i = 0; i < count; ++i) {
            std::mt19937_64 rng(mix_seed(seed, (static_cast<uint64_t>(kind) << 32) | static_cast<uint64_t>(i)));
            TaskSample s = make_sample(kind, rng, spec);
            const size_t total = s.context.size() + s.prompt.size() + s.label.size() + 2;
            if (total > static_cast<size_t>(spec.max_seq)) {
                throw UsageError("synth_corpus: sample exceeds max_seq");
            }
            out.push_back(std::move(s));
        }
    }
    return out;
}

TokenSeq build_distill_prompt(const TaskSample& sample, int max_seq) {
    if (sample.prompt.empty()) throw UsageError("build_distill_prompt: empty task prompt");
    TokenSeq out;
    if (!sample.context.empty()) {
        out.insert(out.end(), sample.context.begin(), sample.context.end());
        out.push_back(vocab::kSep);
    }
    out.insert(out.end(), sample.prompt.begin(), sample.prompt.end());
    if (!sample.label.empty()) {
        out.push_back(vocab::kRef);
        out.insert(out.end(), sample.label.begin(), sample.label.end());
    }
    if (static_cast<int>(out.size()) > max_seq) {
        throw UsageError("build_distill_prompt: combined prompt exceeds max_seq");
    }
    return out;
}

TokenSeq render_referenced_sequence(const TaskSample& sample, int max_seq) {
    TokenSeq seq = build_distill_prompt(sample, max_seq);
    seq.push_back(vocab::kSep);  // the answer cue, as in the plain format
    seq.insert(seq.end(), sample.label.begin(), sample.label.end());
    seq.push_back(vocab::kEos);
    if (static_cast<int>(seq.size()) > max_seq) {
        throw UsageError("render_referenced_sequence: sequence exceeds max_seq");
    }
    return seq;
}

TokenSeq render_referenced_sequence(const TaskSample& sample, int max_seq, int vocab_size,
                                    double corruption_rate, std::mt19937_64& rng) {
    TaskSample noisy = sample;
    for (TokenId& t : noisy.label) {
        if (uniform_unit(rng) >= corruption_rate) continue;
        if (t >= vocab::kLetterBase) {
            t = vocab::kLetterBase +
                static_cast<TokenId>(uniform_unit(rng) * (vocab_size - vocab::kLetterBase));
        } else if (t >= vocab::kDigitBase && t < vocab::kDigitBase + 10) {
            t = vocab::kDigitBase + static_cast<TokenId>(uniform_unit(rng) * 10);
        }
    }
    TokenSeq seq = build_distill_prompt(noisy, max_seq);
    seq.push_back(vocab::kSep);
    seq.insert(seq.end(), sample.label.begin(), sample.label.end());  // true answer
    seq.push_back(vocab::kEos);
    if (static_cast<int>(seq.size()) > max_seq) {
        throw UsageError("render_referenced_sequence: sequence exceeds max_seq");
    }
    return seq;
}

TokenSeq inference_prompt(const TaskSample& sample) {
    TokenSeq out = sample.prompt;
    out.push_back(vocab::kSep);
    return out;
}

TokenId sample_top_p(const Tensor<float>& logits, int row, double p, double temperature,
                     std::mt19937_64& rng) {
    if (!(p > 0.0 && p <= 1.0)) throw UsageError("sample_top_p: p must lie in (0,1]");
    if (!(temperature > 0.0)) throw UsageError("sample_top_p: temperature must be positive");
    const int cols = logits.cols();
    const float* x = logits.data() + static_cast<int64_t>(row) * cols;
    for (int j = 0; j < cols; ++j) {
        if (!std::isfinite(x[j])) throw NumericError("sample_top_p: non-finite logit");
    }
    double mx = -1e300;
    for (int j = 0; j < cols; ++j) mx = std::max(mx, static_cast<double>(x[j]) / temperature);
    std::vector<double> prob(cols);
    double sum = 0.0;
    for (int j = 0; j < cols; ++j) {
        prob[j] = std::exp(static_cast<double>(x[j]) / temperature - mx);
        sum += prob[j];
    }
    for (double& q : prob) q /= sum;

    std::vector<int> order(cols);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return prob[a] > prob[b]; });  // ties keep lower id first

    double mass = 0.0;
    int nucleus = 0;
    while (nucleus < cols) {
        mass += prob[order[nucleus]];
        ++nucleus;
        if (mass >= p) break;
    }
    const double draw = uniform_unit(rng) * mass;
    double acc = 0.0;
    for (int j = 0; j < nucleus; ++j) {
        acc += prob[order[j]];
        if (draw < acc) return order[j];
    }
    return order[nucleus - 1];
}

DistilledDataset self_distill(const Model& target, const std::vector<TaskSample>& dataset,
                              const SamplerSettings& sampler, uint64_t seed,
                              const std::string& target_id) {
    if (dataset.empty()) throw UsageError("self_distill: empty dataset");
    DistilledDataset out;
    out.target_id = target_id;
    out.sampler = sampler;
    out.seed = seed;
    out.records.reserve(dataset.size());

    for (size_t i = 0; i < dataset.size(); ++i) {
        const TaskSample& sample = dataset[i];
        // Generation context = X' plus the fixed answer-cue token (the role a
        // chat template's assistant header plays at full scale).
        TokenSeq x_prime = build_distill_prompt(sample, target.config.max_seq - 1);
        x_prime.push_back(vocab::kSep);
        std::mt19937_64 rng(mix_seed(seed, (0xd15711ULL << 32) | i));

        KvCache cache;
        cache.reset(target.config.n_layers);
        if (x_prime.size() > 1) {
            forward(target, std::span<const TokenId>(x_prime.data(), x_prime.size() - 1), &cache);
        }
        TokenId pending = x_prime.back();
        TokenSeq label;
        const int budget = std::min(sampler.max_gen,
                                    target.config.max_seq - static_cast<int>(x_prime.size()));
        for (int j = 0; j < budget; ++j) {
            Tensor<float> logits = forward(target, std::span<const TokenId>(&pending, 1), &cache);
            const TokenId next = sampler.greedy
                                     ? argmax_row(logits, 0)
                                     : sample_top_p(logits, 0, sampler.p, sampler.temperature, rng);
            if (next == vocab::kEos) break;
            label.push_back(next);
            pending = next;
        }
        // Accepted without verification: the sampled label is stored as-is.
        out.records.push_back(DistillRecord{sample.prompt, std::move(label)});
    }
    return out;
}

std::pair<TokenSeq, int> render_training_sequence(const TokenSeq& prompt, const TokenSeq& label) {
    TokenSeq seq = prompt;
    seq.push_back(vocab::kSep);
    const int label_start = static_cast<int>(seq.size());
    seq.insert(seq.end(), label.begin(), label.end());
    seq.push_back(vocab::kEos);
    return {seq, label_start};
}

void save_tasks(const std::string& path, const std::vector<TaskSample>& tasks) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    for (const auto& t : tasks) {
        json j{{"kind", task_kind_name(t.kind)},
               {"context", t.context},
               {"prompt", t.prompt},
               {"label", t.label}};
        out << j.dump() << "\n";
    }
}

std::vector<TaskSample> load_tasks(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::vector<TaskSample> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("malformed task record in " + path);
        TaskSample t;
        t.kind = task_kind_from_name(j.at("kind").get<std::string>());
        t.context = j.at("context").get<TokenSeq>();
        t.prompt = j.at("prompt").get<TokenSeq>();
        t.label = j.at("label").get<TokenSeq>();
        out.push_back(std::move(t));
    }
    return out;
}

void save_dataset(const std::string& path, const DistilledDataset& data) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open for writing: " + path);
    json header{{"target_id", data.target_id},
                {"seed", data.seed},
                {"sampler", {{"p", data.sampler.p},
                             {"temperature", data.sampler.temperature},
                             {"max_gen", data.sampler.max_gen},
                             {"greedy", data.sampler.greedy}}}};
    out << header.dump() << "\n";
    for (const auto& r : data.records) {
        json j{{"prompt", r.prompt}, {"label", r.label}};
        out << j.dump() << "\n";
    }
}

DistilledDataset load_dataset(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("empty dataset file: " + path);
    json header = json::parse(line, nullptr, false);
    if (header.is_discarded() || !header.contains("sampler")) {
        throw IoError("malformed dataset header in " + path);
    }
    DistilledDataset out;
    out.target_id = header.at("target_id").get<std::string>();
    out.seed = header.at("seed").get<uint64_t>();
    out.sampler.p = header.at("sampler").at("p").get<double>();
    out.sampler.temperature = header.at("sampler").at("temperature").get<double>();
    out.sampler.max_gen = header.at("sampler").at("max_gen").get<int>();
    out.sampler.greedy = header.at("sampler").at("greedy").get<bool>();
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) throw IoError("malformed dataset record in " + path);
        out.records.push_back(DistillRecord{j.at("prompt").get<TokenSeq>(), j.at("label").get<TokenSeq>()});
    }
    return out;
}

}  // namespace draftlab
