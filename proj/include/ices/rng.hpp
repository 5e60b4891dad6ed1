#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace ices {

// Deterministic random stream. The raw generator is std::mt19937_64; all
// transforms (uniform, normal, categorical inverse-CDF) are done explicitly
// here so that sequences are reproducible independent of the standard
// library's distribution implementations.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : gen_(seed), seed_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform in [0, 1), 53-bit resolution.
  double uniform01() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  int uniform_int(int n) {
    int k = static_cast<int>(uniform01() * n);
    return k < n ? k : n - 1;
  }

  // Standard normal via Box-Muller, one cached value.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  // Independent child stream derived from this stream's seed and an id.
  // splitmix64 finalizer; children of distinct (seed, id) pairs do not
  // collide in practice.
  RandomStream split(std::uint64_t id) const {
    std::uint64_t x = seed_ ^ (0x9e3779b97f4a7c15ULL * (id + 1));
    x += 0x9e3779b97f4a7c15ULL;
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return RandomStream(x);
  }

 private:
  std::mt19937_64 gen_;
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace ices
