#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "swgrid/model.hpp"

namespace swgrid {

// Checkpoint layout, all integers little-endian:
//
//   "SWGD"                      magic
//   u32 version                 kCheckpointVersion
//   u64 digest                  fnv1a64(config text)
//   u32 length, bytes           NetworkConfig::canonical()
//   u32 entry count
//   per entry:
//     u32 length, bytes         name
//     u32 rank, u32 extents[rank]
//     f32 values[product]       little-endian IEEE-754 binary32
//
// Entries are every parameter and batch-norm statistic in Network::visit order.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

struct CheckpointFile {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t digest = 0;
  std::string config_text;
  std::vector<CheckpointEntry> entries;
};

/// Serialised bytes of `file`.
std::vector<std::uint8_t> encode_checkpoint(const CheckpointFile& file);

/// Throws CorruptDataError on bad magic, version, digest or truncation.
CheckpointFile decode_checkpoint(const std::vector<std::uint8_t>& bytes);

/// Writes via a temporary file and rename.
void save_checkpoint(const Network<float>& net, const std::filesystem::path& path);

/// Rebuilds the network from the embedded configuration.
Network<float> load_checkpoint(const std::filesystem::path& path);

/// Loads into an existing network; the config digest must match.
void load_checkpoint_into(Network<float>& net, const std::filesystem::path& path);

/// Parses NetworkConfig::canonical() output.
NetworkConfig parse_network_canonical(const std::string& text);

}  // namespace swgrid
