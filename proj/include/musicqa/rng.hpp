#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace musicqa {

// Seeded generator with distribution helpers whose output is fully specified
// here. std::uniform_int_distribution and friends are implementation-defined,
// which would make datasets differ between standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform integer in [0, n). n must be > 0.
  std::size_t index(std::size_t n) {
    const std::uint64_t bound = n;
    // Rejection sampling on the largest multiple of n.
    const std::uint64_t limit = UINT64_MAX - (UINT64_MAX % bound + 1) % bound;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x > limit);
    return static_cast<std::size_t>(x % bound);
  }

  // Uniform real in [0, 1).
  double unit() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  bool coin() { return (engine_() >> 63) != 0; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace musicqa
