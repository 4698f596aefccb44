#pragma once

// Flat binary container of named float64 arrays.
//
//   magic   "RRCP" (4 bytes)
//   version u32 little-endian, currently 1
//   count   u32 little-endian
//   entry*  name_len:u32, name bytes, ndim:u32, dims:u64[ndim],
//           values:f64[prod(dims)]  (all little-endian)

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "rhythmrec/tensor.hpp"

namespace rhythmrec {

static_assert(std::endian::native == std::endian::little,
              "checkpoint container assumes a little-endian host");

inline constexpr char kCheckpointMagic[4] = {'R', 'R', 'C', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw Error("checkpoint: unexpected end of stream");
  return v;
}

}  // namespace detail

inline void save_checkpoint(std::ostream& os,
                            const std::vector<std::pair<std::string, Tensor>>& entries) {
  os.write(kCheckpointMagic, 4);
  detail::write_pod<std::uint32_t>(os, kCheckpointVersion);
  detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, t] : entries) {
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape().size()));
    for (std::size_t d : t.shape()) detail::write_pod<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(t.data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw Error("checkpoint: write failed");
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw Error("checkpoint: bad magic");
  const auto version = detail::read_pod<std::uint32_t>(is);
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_pod<std::uint32_t>(is);
  std::vector<std::pair<std::string, Tensor>> entries;
  entries.reserve(count);
  for (std::uint32_t e = 0; e < count; ++e) {
    const auto name_len = detail::read_pod<std::uint32_t>(is);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw Error("checkpoint: truncated name");
    const auto ndim = detail::read_pod<std::uint32_t>(is);
    Shape shape(ndim);
    for (auto& d : shape) d = static_cast<std::size_t>(detail::read_pod<std::uint64_t>(is));
    std::vector<double> values(shape_numel(shape));
    if (!is.read(reinterpret_cast<char*>(values.data()),
                 static_cast<std::streamsize>(values.size() * sizeof(double))))
      throw Error("checkpoint: truncated data for " + name);
    entries.emplace_back(std::move(name), Tensor::from(std::move(shape), std::move(values)));
  }
  return entries;
}

inline void save_checkpoint_file(const std::string& path,
                                 const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint file for writing: " + path);
  save_checkpoint(f, entries);
}

inline std::vector<std::pair<std::string, Tensor>> load_checkpoint_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open checkpoint file: " + path);
  return load_checkpoint(f);
}

inline std::string checkpoint_bytes(const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ostringstream os(std::ios::binary);
  save_checkpoint(os, entries);
  return os.str();
}

// FNV-1a over the serialized container; used to compare parameter states.
inline std::uint64_t checkpoint_hash(const std::vector<std::pair<std::string, Tensor>>& entries) {
  const std::string bytes = checkpoint_bytes(entries);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace rhythmrec
