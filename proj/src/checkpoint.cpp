#include "fast/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "fast/io.hpp"

namespace fast {

namespace {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <class T>
void put(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <class T>
T get(std::istream& in, const char* what) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) {
    throw CheckpointError(std::string("truncated checkpoint while reading ") + what);
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace

void write_checkpoint(std::ostream& out, const ParamList& tensors) {
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put<std::uint32_t>(out, 2);
    put<std::uint64_t>(out, t.tensor.rows());
    put<std::uint64_t>(out, t.tensor.cols());
    for (double v : t.tensor.data()) put<double>(out, v);
  }
}

ParamList read_checkpoint(std::istream& in) {
  char magic[sizeof(kCheckpointMagic)];
  if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0) {
    throw CheckpointError("bad checkpoint magic");
  }
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  const auto count = get<std::uint32_t>(in, "tensor count");
  ParamList out;
  out.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = get<std::uint32_t>(in, "name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw CheckpointError("truncated tensor name");
    const auto rank = get<std::uint32_t>(in, "rank");
    if (rank > 2) throw CheckpointError("tensor " + name + " has rank " + std::to_string(rank));
    std::uint64_t dims[2] = {1, 1};
    for (std::uint32_t r = 0; r < rank; ++r) dims[2 - rank + r] = get<std::uint64_t>(in, "dim");
    std::vector<double> values(dims[0] * dims[1]);
    for (auto& v : values) v = get<double>(in, "payload");
    out.push_back({std::move(name), Tensor::from(dims[0], dims[1], std::move(values))});
  }
  return out;
}

void save_checkpoint(const std::filesystem::path& path, const ParamList& tensors) {
  write_file_atomic(path, [&](std::ostream& out) { write_checkpoint(out, tensors); });
}

ParamList load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace fast
