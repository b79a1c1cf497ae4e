#ifndef PLN_CHECKPOINT_HPP
#define PLN_CHECKPOINT_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pln/tensor.hpp"

namespace pln {

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

/// Flat named-tensor archive. Layout:
///   magic "PLNCKPT1" | u64 config_hash | u64 entry_count
///   per entry: u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[numel]
/// Values are stored as f64 regardless of the build's compute precision, so a
/// round trip is bit-exact in the default build.
namespace checkpoint {

constexpr char kMagic[8] = {'P', 'L', 'N', 'C', 'K', 'P', 'T', '1'};

struct Entry {
  Shape shape;
  std::vector<double> data;
};

using Archive = std::map<std::string, Entry>;

inline void save(const std::string& path, std::uint64_t config_hash,
                 const std::vector<std::pair<std::string, Tensor>>& entries) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot open checkpoint for writing: " + path);
  out.write(kMagic, 8);
  auto w64 = [&](std::uint64_t v) { out.write(reinterpret_cast<const char*>(&v), 8); };
  auto w32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  w64(config_hash);
  w64(static_cast<std::uint64_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    w32(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    w32(static_cast<std::uint32_t>(tensor.ndim()));
    for (std::size_t d : tensor.shape()) w64(static_cast<std::uint64_t>(d));
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double v = static_cast<double>(tensor.at(i));
      out.write(reinterpret_cast<const char*>(&v), 8);
    }
  }
  if (!out) throw RuntimeFailure("short write while saving checkpoint: " + path);
}

inline Archive load(const std::string& path, std::uint64_t* config_hash_out = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw RuntimeFailure("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kMagic, 8) != 0)
    throw InputError("not a checkpoint file: " + path);
  auto r64 = [&]() {
    std::uint64_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 8);
    return v;
  };
  auto r32 = [&]() {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  const std::uint64_t hash = r64();
  if (config_hash_out) *config_hash_out = hash;
  const std::uint64_t count = r64();
  Archive archive;
  for (std::uint64_t e = 0; e < count; ++e) {
    const std::uint32_t name_len = r32();
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    const std::uint32_t ndim = r32();
    Entry entry;
    entry.shape.resize(ndim);
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      entry.shape[d] = static_cast<std::size_t>(r64());
      n *= entry.shape[d];
    }
    if (ndim == 0) n = 0;
    entry.data.resize(n);
    in.read(reinterpret_cast<char*>(entry.data.data()), static_cast<std::streamsize>(n * 8));
    if (!in) throw InputError("truncated checkpoint: " + path);
    archive.emplace(std::move(name), std::move(entry));
  }
  return archive;
}

}  // namespace checkpoint

}  // namespace pln

#endif  // PLN_CHECKPOINT_HPP
