#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "gzeb/param.hpp"
#include "gzeb/tensor.hpp"

namespace gzeb {

/// One named float array of a GZEB checkpoint.
struct CheckpointEntry {
  std::string name;
  Shape dims;
  std::vector<float> values;
  friend bool operator==(const CheckpointEntry&, const CheckpointEntry&) = default;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout, all integers 4-byte little-endian:
///   "GZEB" | version | entry count |
///   per entry: name length, UTF-8 name, rank, dims..., float32 LE payload
std::vector<std::uint8_t> encode_checkpoint(std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, std::span<const CheckpointEntry> entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// Parameters, their optimizer state ("<name>.m", "<name>.v", "<name>.mom")
/// and the extra buffers, in registration order.
std::vector<CheckpointEntry> snapshot_state(const ParameterSet<float>& params,
                                            std::span<const NamedBuffer<float>> buffers);

/// Inverse of snapshot_state. Every parameter and buffer must be present with
/// matching dims; optimizer entries are optional.
void restore_state(std::span<const CheckpointEntry> entries, ParameterSet<float>& params,
                   std::span<const NamedBuffer<float>> buffers);

const CheckpointEntry* find_entry(std::span<const CheckpointEntry> entries, const std::string& name);

}  // namespace gzeb
