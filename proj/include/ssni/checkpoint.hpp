#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssni/io.hpp"

namespace ssni::ckpt {

constexpr std::uint32_t kVersion = 1;
constexpr char kMagic[8] = {'S', 'S', 'N', 'I', 'C', 'K', 'P', '\x01'};

enum Kind : std::uint32_t {
  kMlpDenoiser = 1,
  kUnetDenoiser = 2,
  kMlpClassifier = 3,
};

struct Header {
  std::uint32_t kind = 0;
  std::vector<std::size_t> shape;
  int schedule_T = 0;
  std::uint64_t seed = 0;
};

inline void write_header(std::ostream& os, std::uint32_t kind,
                         const std::vector<std::size_t>& shape, int schedule_T,
                         std::uint64_t seed) {
  os.write(kMagic, sizeof(kMagic));
  io::write_u32(os, kVersion);
  io::write_u32(os, kind);
  io::write_u32(os, static_cast<std::uint32_t>(shape.size()));
  for (std::size_t d : shape) io::write_u64(os, d);
  io::write_i32(os, schedule_T);
  io::write_u64(os, seed);
}

inline Header read_header(std::istream& is) {
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kMagic, sizeof(magic)) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  std::uint32_t version = io::read_u32(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported format version " +
                             std::to_string(version));
  Header h;
  h.kind = io::read_u32(is);
  std::uint32_t rank = io::read_u32(is);
  h.shape.resize(rank);
  for (auto& d : h.shape) d = io::read_u64(is);
  h.schedule_T = io::read_i32(is);
  h.seed = io::read_u64(is);
  return h;
}

}  // namespace ssni::ckpt
