#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace postkit {

// Stateless randomness: every draw is a pure function of its key, so results
// never depend on evaluation order or worker count.

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view text) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

constexpr std::uint64_t keyed_hash(std::uint64_t seed,
                                   std::initializer_list<std::uint64_t> parts) noexcept {
  std::uint64_t h = mix64(seed);
  for (auto p : parts) h = mix64(h ^ mix64(p + 0x632be59bd9b4e019ull));
  return h;
}

// Uniform in [0, 1) with 53 random bits.
constexpr double keyed_uniform(std::uint64_t seed,
                               std::initializer_list<std::uint64_t> parts) noexcept {
  return static_cast<double>(keyed_hash(seed, parts) >> 11) * 0x1.0p-53;
}

}  // namespace postkit
