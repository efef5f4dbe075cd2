// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace nqg {

// Seedable random source. All draws are derived from raw mt19937_64 output
// (whose sequence the standard pins down exactly) instead of the standard
// distribution adaptors, so the same seed yields the same stream on every
// platform and standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of resolution.
  double unit() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  template <typename T>
  T uniform(T lo, T hi) {
    return lo + static_cast<T>(unit()) * (hi - lo);
  }

  // Uniform integer in [0, n). Rejection sampling keeps the draw unbiased.
  std::size_t below(std::size_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return static_cast<std::size_t>(x % n);
  }

  // Fisher-Yates shuffle driven by below().
  template <typename V>
  void shuffle(std::vector<V>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::swap(v[i - 1], v[below(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace nqg
