#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "glyphcrm/adam.hpp"
#include "glyphcrm/tensor.hpp"

namespace glyphcrm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// On disk, little-endian:
//   magic "GCRM" | u32 version | u64 meta length | meta (canonical JSON)
//   per tensor: u32 name length | name | u32 rank | i64 extents | f32 data
//   u32 CRC-32 of everything before it
struct CheckpointData {
    std::string meta_json;
    std::vector<NamedParam> tensors;  // canonical order

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const CheckpointData& data);

// Verifies magic, version and checksum; throws IoError on any mismatch.
CheckpointData load_checkpoint(const std::filesystem::path& path);

// Copies stored tensors into the live ones by name. Missing names or shape
// disagreements (e.g. a checkpoint from a different config) throw IoError
// naming both shapes.
void restore_params(std::span<NamedParam> live, const CheckpointData& data);

}  // namespace glyphcrm
