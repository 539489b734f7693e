#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>

#include "fast/params.hpp"

namespace fast {

inline constexpr char kCheckpointMagic[8] = {'F', 'A', 'S', 'T', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container of named tensors, all integers and payloads little-endian:
///
///   "FASTCKPT"  u32 version  u32 count
///   count x { u32 name_len, name bytes (UTF-8), u32 rank, rank x u64 dim,
///             prod(dims) x f64 }
void write_checkpoint(std::ostream& out, const ParamList& tensors);
ParamList read_checkpoint(std::istream& in);

/// Atomic save (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors);
ParamList load_checkpoint(const std::filesystem::path& path);

/// Thrown for malformed checkpoint bytes.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace fast
