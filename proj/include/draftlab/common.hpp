#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace draftlab {

// Error taxonomy used across the library. The CLI maps UsageError/ConfigError
// to exit code 1 and everything else to exit code 2.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

using TokenId = int;
using TokenSeq = std::vector<TokenId>;

// splitmix64; used to derive independent rng streams from (seed, index).
inline uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Uniform double in [0, 1). Implementation-defined std distributions are
// avoided so that a fixed seed means the same draws on every platform.
template <typename Rng>
double uniform_unit(Rng& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

}  // namespace draftlab
