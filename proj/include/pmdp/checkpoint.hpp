#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>

#include "pmdp/adam.hpp"
#include "pmdp/tensor.hpp"

namespace pmdp {

// Checkpoint layout: magic "PMDP1", then per tensor (sorted by name):
// u32 name length, name bytes, u32 ndim, u32 dims..., f64 data row-major.
// All integers and floats little-endian.
inline constexpr char kCheckpointMagic[5] = {'P', 'M', 'D', 'P', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace detail {

inline void write_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), 4);
}

inline std::uint32_t read_u32(std::istream& is) {
  std::uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ParamMap& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw ContractError("cannot open checkpoint for write: " + path);
  os.write(kCheckpointMagic, 5);
  for (const auto& [name, t] : tensors) {
    detail::write_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u32(os, static_cast<std::uint32_t>(t.shape.size()));
    for (std::size_t d : t.shape) {
      detail::write_u32(os, static_cast<std::uint32_t>(d));
    }
    os.write(reinterpret_cast<const char*>(t.data.data()),
             static_cast<std::streamsize>(t.data.size() * sizeof(double)));
  }
  if (!os) throw ContractError("checkpoint write failed: " + path);
}

inline ParamMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ContractError("cannot open checkpoint: " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is || std::memcmp(magic, kCheckpointMagic, 5) != 0) {
    throw ContractError("bad checkpoint magic: " + path);
  }
  ParamMap out;
  while (true) {
    std::uint32_t name_len = detail::read_u32(is);
    if (is.eof()) break;
    if (!is) throw ContractError("truncated checkpoint: " + path);
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const std::uint32_t ndim = detail::read_u32(is);
    std::vector<std::size_t> shape(ndim);
    for (std::uint32_t i = 0; i < ndim; ++i) shape[i] = detail::read_u32(is);
    Tensor t(shape);
    is.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!is) throw ContractError("truncated checkpoint: " + path);
    out[name] = std::move(t);
  }
  return out;
}

}  // namespace pmdp
