#pragma once

#include <cstdint>
#include <initializer_list>

namespace msnn {

// SplitMix64 finaliser; used only to derive independent stream seeds from a
// master seed and a few stream coordinates.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> coords) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto c : coords) h = mix64(h ^ mix64(c + 0x632be59bd9b4e019ULL));
  return h;
}

// Stream tags keep the purposes of derived seeds apart.
enum class Stream : std::uint64_t {
  kModel = 1,
  kAssignment = 2,
  kNoise = 3,
  kPartition = 4,
  kReplicate = 5,
  kTheory = 6,
};

constexpr std::uint64_t derive_seed(std::uint64_t seed, Stream stream, std::uint64_t a = 0, std::uint64_t b = 0,
                                    std::uint64_t c = 0) noexcept {
  return derive_seed(seed, {static_cast<std::uint64_t>(stream), a, b, c});
}

}  // namespace msnn
