#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "nestcl/model.hpp"

namespace nestcl {

// Full training state: parameters plus AdamW moments aligned with the
// flattened parameter order, and the optimizer step counter.
struct ModelState {
    Model model;
    std::vector<double> m1, m2;
    std::int64_t step = 0;

    void reset_moments();
};

// Checkpoint directory:
//   manifest.json  architecture, dims, feature tables, segment table, step
//   params.f32     little-endian f32 in segment order
//   moments.f32    first moments then second moments (2 x param_count)
void save_checkpoint(const ModelState& state, const std::filesystem::path& dir);
ModelState load_checkpoint(const std::filesystem::path& dir);

// FNV-1a over the params.f32 bytes, as a 16-digit hex string.
std::string checkpoint_hash(const std::filesystem::path& dir);

} // namespace nestcl
