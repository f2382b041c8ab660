#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace fgdcc {

// splitmix64 finalizer; mixes a seed with stream/epoch/batch coordinates so
// every consumer gets an independent, reproducible generator.
inline std::uint64_t mix_seed(std::initializer_list<std::uint64_t> parts) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (std::uint64_t p : parts) {
    h += p + 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = h;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    h = z ^ (z >> 31);
  }
  return h;
}

inline std::mt19937_64 make_rng(std::initializer_list<std::uint64_t> parts) {
  return std::mt19937_64(mix_seed(parts));
}

// Stream tags keep generators for different purposes apart.
namespace stream {
inline constexpr std::uint64_t kSynthetic = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kUpsample = 3;
inline constexpr std::uint64_t kShuffle = 4;
inline constexpr std::uint64_t kInit = 5;
inline constexpr std::uint64_t kNoise = 6;
inline constexpr std::uint64_t kKMeans = 7;
inline constexpr std::uint64_t kPerturb = 8;
}  // namespace stream

}  // namespace fgdcc
