#pragma once

#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <numbers>
#include <span>

#include "ssni/tensor.hpp"

namespace ssni {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
}  // namespace detail

// Mixes an ordered list of stream coordinates (seed, row, run, step, ...)
// into a single substream key. Every noise draw in the pipeline is keyed this
// way, so two call sites that pass the same coordinates see the same noise
// regardless of evaluation order.
inline std::uint64_t derive_key(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t s = 0x243f6a8885a308d3ULL;  // arbitrary nonzero start
  for (std::uint64_t p : parts) {
    s ^= p + 0x9e3779b97f4a7c15ULL + (s << 6) + (s >> 2);
    (void)detail::splitmix64(s);
  }
  std::uint64_t c = s;
  return detail::splitmix64(c);
}

// Key derived from the bytes of a sample's contents (FNV-1a). Used where a
// substream must follow the sample rather than its batch position.
inline std::uint64_t content_key(std::span<const double> row) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (double v : row) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xffULL;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

// Deterministic random stream (splitmix64 chain). Gaussian draws use
// Box-Muller without caching, so a stream's output is a pure function of its
// key and draw index.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t key) : state_(key) {}

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // uniform in the open interval (0,1)
  double next_uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  double next_gaussian() {
    double u1 = next_uniform();
    double u2 = next_uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  void fill_gaussian(std::span<double> out) {
    for (double& v : out) v = next_gaussian();
  }

  Tensor gaussian_like(const Tensor& x) {
    Tensor n(x.shape);
    fill_gaussian(n.data);
    return n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace ssni
