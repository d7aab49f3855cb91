#include "draftlab/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace draftlab {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "DRAFTLAB1\n";
constexpr size_t kMagicLen = sizeof(kMagic) - 1;

void append_u64_le(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint64_t read_u64_le(const unsigned char* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

void append_f32_le(std::string& out, float f) {
    const auto bits = std::bit_cast<uint32_t>(f);
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

float read_f32_le(const unsigned char* p) {
    uint32_t bits = 0;
    for (int i = 0; i < 4; ++i) bits |= static_cast<uint32_t>(p[i]) << (8 * i);
    return std::bit_cast<float>(bits);
}

json config_to_json(const TransformerConfig& cfg) {
    return json{{"vocab_size", cfg.vocab_size}, {"d_model", cfg.d_model},
                {"n_layers", cfg.n_layers},     {"n_heads", cfg.n_heads},
                {"n_kv_heads", cfg.n_kv_heads}, {"d_head", cfg.d_head},
                {"d_ff", cfg.d_ff},             {"max_seq", cfg.max_seq},
                {"tie_embeddings", cfg.tie_embeddings}, {"rope_base", cfg.rope_base}};
}

TransformerConfig config_from_json(const json& j) {
    TransformerConfig cfg;
    cfg.vocab_size = j.at("vocab_size").get<int>();
    cfg.d_model = j.at("d_model").get<int>();
    cfg.n_layers = j.at("n_layers").get<int>();
    cfg.n_heads = j.at("n_heads").get<int>();
    cfg.n_kv_heads = j.at("n_kv_heads").get<int>();
    cfg.d_head = j.at("d_head").get<int>();
    cfg.d_ff = j.at("d_ff").get<int>();
    cfg.max_seq = j.at("max_seq").get<int>();
    cfg.tie_embeddings = j.at("tie_embeddings").get<bool>();
    cfg.rope_base = j.at("rope_base").get<float>();
    return cfg;
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model, const SparsityMask* mask) {
    model.config.validate();
    std::string blob;
    json tensors = json::array();

    for (const auto& [name, w] : model.weights) {
        json rec{{"path", name}, {"kind", "f32"}, {"shape", w.shape()},
                 {"offset", blob.size()}, {"bytes", static_cast<uint64_t>(w.numel()) * 4}};
        tensors.push_back(rec);
        for (int64_t i = 0; i < w.numel(); ++i) append_f32_le(blob, w.data()[i]);
    }
    if (mask) {
        for (const auto& [name, entry] : mask->entries) {
            const size_t bytes = (entry.keep.size() + 7) / 8;
            json rec{{"path", name}, {"kind", "mask"}, {"shape", entry.shape},
                     {"offset", blob.size()}, {"bytes", bytes}};
            tensors.push_back(rec);
            std::string bits(bytes, '\0');
            for (size_t i = 0; i < entry.keep.size(); ++i) {
                if (entry.keep[i]) bits[i / 8] |= static_cast<char>(1u << (i % 8));
            }
            blob += bits;
        }
    }

    json manifest{{"format", "draftlab-checkpoint"}, {"version", 1},
                  {"config", config_to_json(model.config)}, {"tensors", tensors}};
    const std::string mtext = manifest.dump();

    std::string out;
    out.reserve(kMagicLen + 8 + mtext.size() + blob.size());
    out.append(kMagic, kMagicLen);
    append_u64_le(out, mtext.size());
    out += mtext;
    out += blob;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint for writing: " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to checkpoint: " + path);
}

Model load_checkpoint(const std::string& path, std::optional<SparsityMask>* mask_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::string raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    if (raw.size() < kMagicLen + 8 || raw.compare(0, kMagicLen, kMagic) != 0) {
        throw IoError("corrupt manifest: bad magic in " + path);
    }
    const auto* bytes = reinterpret_cast<const unsigned char*>(raw.data());
    const uint64_t mlen = read_u64_le(bytes + kMagicLen);
    if (kMagicLen + 8 + mlen > raw.size()) throw IoError("corrupt manifest: manifest length exceeds file");
    const json manifest = json::parse(raw.substr(kMagicLen + 8, mlen), nullptr, false);
    if (manifest.is_discarded()) throw IoError("corrupt manifest: invalid JSON in " + path);

    const size_t blob_start = kMagicLen + 8 + mlen;
    const size_t blob_size = raw.size() - blob_start;

    Model model;
    SparsityMask mask;
    bool have_mask = false;
    try {
        model.config = config_from_json(manifest.at("config"));
        model.config.validate();

        for (const auto& rec : manifest.at("tensors")) {
            const std::string name = rec.at("path").get<std::string>();
            const std::string kind = rec.at("kind").get<std::string>();
            const auto shape = rec.at("shape").get<std::vector<int>>();
            const auto offset = rec.at("offset").get<uint64_t>();
            const auto nbytes = rec.at("bytes").get<uint64_t>();
            if (offset + nbytes > blob_size) {
                throw IoError("truncated blob: record " + name + " extends past end of " + path);
            }
            int64_t numel = 1;
            for (int d : shape) numel *= d;
            const unsigned char* src = bytes + blob_start + offset;
            if (kind == "f32") {
                if (nbytes != static_cast<uint64_t>(numel) * 4) {
                    throw IoError("shape mismatch: byte count of " + name + " does not match shape");
                }
                std::vector<float> data(static_cast<size_t>(numel));
                for (int64_t i = 0; i < numel; ++i) data[i] = read_f32_le(src + i * 4);
                model.weights.emplace(name, Tensor<float>(shape, std::move(data)));
            } else if (kind == "mask") {
                if (nbytes != (static_cast<uint64_t>(numel) + 7) / 8) {
                    throw IoError("shape mismatch: bitmap size of " + name + " does not match shape");
                }
                MaskEntry entry;
                entry.shape = shape;
                entry.keep.resize(static_cast<size_t>(numel));
                for (int64_t i = 0; i < numel; ++i) {
                    entry.keep[i] = (src[i / 8] >> (i % 8)) & 1u;
                }
                mask.entries.emplace(name, std::move(entry));
                have_mask = true;
            } else {
                throw IoError("corrupt manifest: unknown tensor kind '" + kind + "'");
            }
        }
    } catch (const json::exception& e) {
        throw IoError("corrupt manifest: " + std::string(e.what()) + " in " + path);
    }

    // Every path implied by the config must be present with the right shape.
    for (const auto& name : model.config.weight_paths()) {
        auto it = model.weights.find(name);
        if (it == model.weights.end()) throw IoError("shape mismatch: missing tensor " + name);
        if (it->second.shape() != model.config.weight_shape(name)) {
            throw IoError("shape mismatch: tensor " + name + " does not match the config");
        }
    }
    if (mask_out) *mask_out = have_mask ? std::optional<SparsityMask>(std::move(mask)) : std::nullopt;
    return model;
}

std::string checkpoint_digest(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    // FNV-1a over the container bytes; enough to identify a checkpoint.
    uint64_t h = 0xcbf29ce484222325ULL;
    char c;
    while (f.get(c)) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    std::ostringstream out;
    out << std::hex << h;
    return out.str();
}

}  // namespace draftlab
