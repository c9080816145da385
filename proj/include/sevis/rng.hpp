#pragma once

#include <cmath>
#include <cstdint>

// Counter-based portable RNG (SplitMix64 finalizer over a 192-bit key of
// seed/stream/counter). Every draw is a pure function of (seed, stream,
// counter), so streams can be consumed independently and runs replay
// bit-identically for a given seed regardless of call interleaving.

namespace sevis {

class CounterRng {
 public:
  CounterRng() = default;
  CounterRng(std::uint64_t seed, std::uint64_t stream) : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return mix(seed_, stream_, counter_++); }

  /// Uniform double in [0, 1) with 53 random bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per pair of uniforms).
  double next_normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = next_uniform();
    while (u1 <= 0.0) u1 = next_uniform();
    const double u2 = next_uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  std::uint64_t counter() const { return counter_; }

  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream, std::uint64_t counter) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z ^= splitmix(counter + 0x632be59bd9b4e019ULL);
    return splitmix(z);
  }

 private:
  static std::uint64_t splitmix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t stream_ = 0;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace sevis
