#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "samfed/models.hpp"

namespace samfed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

// Binary layout, all integers little-endian:
//   "FSEG" | u32 version | u64 fingerprint | u32 entry count
//   per entry: u32 name length | name bytes | u32 rank | u64 dims[rank] | f32 payload
void write_checkpoint(std::ostream& out, const ModelParams& params);
void write_checkpoint(const std::filesystem::path& path, const ModelParams& params);

// Throws BadMagic for a foreign file, IoError for truncation or an
// unsupported version.
ModelParams read_checkpoint(std::istream& in);
ModelParams read_checkpoint(const std::filesystem::path& path);

}  // namespace samfed
