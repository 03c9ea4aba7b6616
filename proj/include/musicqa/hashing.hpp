#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace musicqa {

// Stable, platform-independent 64-bit hashing. These values end up in
// qa_ids, split assignments and seeds, so they must never change between
// releases.

constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

// SplitMix64 finalizer.
constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t v) noexcept {
  return mix64(seed ^ mix64(v));
}

inline std::uint64_t hash_combine(std::uint64_t seed, std::string_view s) noexcept {
  // Length prefix keeps ("ab","c") and ("a","bc") apart.
  return hash_combine(hash_combine(seed, static_cast<std::uint64_t>(s.size())), fnv1a64(s));
}

// Zero-padded 16-digit lowercase hex.
std::string hex64(std::uint64_t v);

// Hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

// Map a hash to [0, 1) using its top 53 bits.
constexpr double unit_interval(std::uint64_t h) noexcept {
  return static_cast<double>(h >> 11) * 0x1.0p-53;
}

}  // namespace musicqa
