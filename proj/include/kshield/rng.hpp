#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace kshield {

// Deterministic random source. mt19937_64 raw output is fully specified by
// the standard; the float scalings below avoid std::*_distribution, whose
// output is implementation-defined and would break bit-reproducibility.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // Uniform in [0, 1) with 24 bits of mantissa.
  float uniform() { return static_cast<float>(gen_() >> 40) * 0x1p-24f; }

  float uniform(float lo, float hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Modulo bias is irrelevant at these ranges.
  size_t uniform_index(size_t n) { return static_cast<size_t>(gen_() % n); }

  // Standard normal via Box-Muller, one cached value.
  float normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    float u1 = uniform();
    float u2 = uniform();
    if (u1 < 1e-12f) u1 = 1e-12f;
    float r = std::sqrt(-2.0f * std::log(u1));
    float theta = 6.28318530717958647692f * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  float spare_ = 0.0f;
  bool has_spare_ = false;
};

// splitmix64 finalizer, used to derive independent streams (per image, per
// restart, per sweep row) from one experiment seed.
inline uint64_t mix_seed(uint64_t a, uint64_t b) {
  uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

}  // namespace kshield
