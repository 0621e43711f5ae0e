#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "pyra/tensor.hpp"

namespace pyra {

// Deterministic counter-based generator. Output i is a pure function of
// (seed, stream, i), so identical seeds reproduce identical sequences on any
// platform and independent components of a run can draw from independent
// streams without consuming each other's state.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0)
      : base_(mix(mix(seed ^ 0x9E3779B97F4A7C15ull) ^ mix(stream))), counter_(0) {}

  uint64_t next_u64() { return mix(base_ + 0x9E3779B97F4A7C15ull * ++counter_); }

  // Uniform in [0, 1) with 53 random mantissa bits.
  double next_uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, bound). Modulo bias is < bound / 2^64.
  uint64_t next_below(uint64_t bound) {
    if (bound == 0) throw contract_error("Rng::next_below(0)");
    return next_u64() % bound;
  }

  // Standard normal via Box-Muller. Each draw consumes two uniforms; the
  // paired sine value is also used, so draws come out in deterministic pairs.
  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] so the log is finite.
    double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
    double u2 = next_uniform();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 6.283185307179586476925286766559 * u2;
    spare_ = radius * std::sin(angle);
    have_spare_ = true;
    return radius * std::cos(angle);
  }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<uint64_t>(last - first);
    for (uint64_t i = n; i > 1; --i) {
      uint64_t j = next_below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

  uint64_t counter() const { return counter_; }

 private:
  static uint64_t mix(uint64_t x) {
    // SplitMix64 finalizer.
    x += 0x9E3779B97F4A7C15ull;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
    return x ^ (x >> 31);
  }

  uint64_t base_;
  uint64_t counter_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

// Fixed stream ids so enabling one component never shifts another's draws.
namespace streams {
inline constexpr uint64_t kBackbone = 1;
inline constexpr uint64_t kAdapters = 2;
inline constexpr uint64_t kGenerators = 3;
inline constexpr uint64_t kHead = 4;
inline constexpr uint64_t kData = 5;
inline constexpr uint64_t kShuffle = 6;
inline constexpr uint64_t kPartition = 7;
}  // namespace streams

// Mean-zero Gaussian tensor with the given standard deviation. std = 0 gives
// an exactly constant tensor without consuming any draws.
template <typename T = double>
TensorT<T> gaussian(Rng& rng, const Shape& shape, double stddev, double mean = 0.0) {
  auto t = TensorT<T>::zeros(shape);
  if (stddev == 0.0) {
    if (mean != 0.0)
      for (auto& v : t.data()) v = static_cast<T>(mean);
    return t;
  }
  for (auto& v : t.data()) v = static_cast<T>(mean + stddev * rng.next_gaussian());
  return t;
}

}  // namespace pyra
