#pragma once

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "drbd/tensor.hpp"

namespace drbd {

/// Raised on unreadable, malformed or truncated files.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Checkpoint layout, all integers little-endian:
///
///   "DRBD"            4 bytes
///   version           u32 (currently 1)
///   entries until EOF, each:
///     name length     u32, then the UTF-8 name bytes
///     rank            u32, then rank x u64 extents
///     value count     u64, then value count x f32
///
/// The value count must equal the product of the extents.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path);

/// First entry called `name`, or throws IoError.
const CheckpointEntry& find_entry(const std::vector<CheckpointEntry>& entries, const std::string& name);

}  // namespace drbd
