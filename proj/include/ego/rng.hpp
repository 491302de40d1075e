#pragma once

#include <cstdint>
#include <random>

namespace ego::rng {

// splitmix64; used to decorrelate seeds derived from a base seed plus
// loop counters before feeding them to mt19937_64.
inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive(std::uint64_t base, std::uint64_t a) {
  return splitmix64(base ^ splitmix64(a));
}

inline std::uint64_t derive(std::uint64_t base, std::uint64_t a,
                            std::uint64_t b) {
  return derive(derive(base, a), b);
}

inline std::mt19937_64 engine(std::uint64_t seed) {
  return std::mt19937_64(splitmix64(seed));
}

}  // namespace ego::rng
