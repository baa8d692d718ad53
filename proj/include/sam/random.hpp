#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace sam {

// splitmix64, used both as a generator and to derive child-stream seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Deterministic, platform-independent RNG. std::mt19937 would be fine for
// bit-reproducibility of the engine itself, but the std distributions are
// implementation-defined, so we keep the whole sampling path explicit.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {
    // Warm up so nearby seeds decorrelate.
    for (int i = 0; i < 4; ++i) splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform integer in [0, n).
  std::uint64_t uniform_int(std::uint64_t n) {
    // Modulo bias is negligible for n << 2^64.
    return next_u64() % n;
  }

  // Standard normal via Box-Muller (no cached spare; keeps state replayable).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 1e-300) u1 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Normal truncated to two standard deviations, rejection sampled.
  double truncated_normal(double stddev) {
    for (;;) {
      double x = normal();
      if (x > -2.0 && x < 2.0) return x * stddev;
    }
  }

  // Fisher-Yates over indices [0, n).
  template <class Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_int(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Named substream: hash the stream name into the current state so that
  // init/meta/shuffle/episode draws never interleave across uses.
  Rng substream(std::string_view name) const {
    std::uint64_t h = state_;
    for (char c : name) {
      h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
      h *= 0x100000001b3ull;
    }
    return Rng(h);
  }

  Rng substream(std::string_view name, std::uint64_t index) const {
    Rng r = substream(name);
    r.state_ ^= 0x5851f42d4c957f2dull * (index + 1);
    return r;
  }

 private:
  std::uint64_t state_;
};

}  // namespace sam
