#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <vector>

namespace nonuni {

inline std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

struct VectorHash {
  std::size_t operator()(const std::vector<std::int32_t>& v) const {
    std::uint64_t h = v.size();
    for (auto x : v) h = mix64(h ^ static_cast<std::uint32_t>(x));
    return static_cast<std::size_t>(h);
  }
};

struct ArrayHash {
  template <std::size_t N>
  std::size_t operator()(const std::array<std::int32_t, N>& v) const {
    std::uint64_t h = N;
    for (auto x : v) h = mix64(h ^ static_cast<std::uint32_t>(x));
    return static_cast<std::size_t>(h);
  }
};

}  // namespace nonuni
