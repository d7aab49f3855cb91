#pragma once

#include <optional>
#include <string>

#include "draftlab/model.hpp"
#include "draftlab/sparsity.hpp"

// Checkpoint container: a text manifest (JSON) describing the architecture
// and the tensor records {path, kind, shape, offset, bytes}, followed by one
// binary blob. Weights are raw little-endian 32-bit floats; masks are
// 1-bit-per-weight bitmaps (LSB first) padded to a byte boundary per tensor.
// Round trips are byte-exact.
//
// Layout:
//   "DRAFTLAB1\n"
//   8-byte little-endian manifest length
//   manifest JSON
//   blob (offsets in the manifest are relative to the blob start)

namespace draftlab {

void save_checkpoint(const std::string& path, const Model& model,
                     const SparsityMask* mask = nullptr);

// Loads a model; when mask_out is non-null and the container holds mask
// records they are returned there. Corrupt manifests, shape mismatches, and
// truncated blobs are reported distinctly.
Model load_checkpoint(const std::string& path, std::optional<SparsityMask>* mask_out = nullptr);

// Stable identity for provenance records: a short hash over the container
// bytes.
std::string checkpoint_digest(const std::string& path);

}  // namespace draftlab
