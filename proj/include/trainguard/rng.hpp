#pragma once

// Counter-based random stream. Each draw is a pure function of (key, counter),
// so any position in a stream can be reproduced from the seed alone. The mixer
// is the SplitMix64 finalizer, which is a bijection on 64-bit words.

#include <cmath>
#include <cstdint>
#include <numbers>

namespace trainguard {

constexpr std::uint64_t mix64(std::uint64_t z) noexcept {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Derives an independent stream key from a seed and a stream label.
constexpr std::uint64_t stream_key(std::uint64_t seed, std::uint64_t stream) noexcept {
  return mix64(mix64(seed + 0x9E3779B97F4A7C15ULL) ^ (stream * 0xD1B54A32D192ED03ULL));
}

struct RngState {
  std::uint64_t key = 0;
  std::uint64_t counter = 0;

  friend bool operator==(const RngState&, const RngState&) = default;
};

class CounterRng {
 public:
  explicit CounterRng(RngState state) noexcept : state_(state) {}
  CounterRng(std::uint64_t seed, std::uint64_t stream) noexcept
      : state_{stream_key(seed, stream), 0} {}

  const RngState& state() const noexcept { return state_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t out = mix64(state_.key + (state_.counter + 1) * 0x9E3779B97F4A7C15ULL);
    ++state_.counter;
    return out;
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1].
  double uniform_open_low() noexcept { return 1.0 - uniform(); }

  /// Standard normal (Box-Muller; consumes two draws).
  double normal() noexcept {
    const double u1 = uniform_open_low();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, bound). Lemire-style multiply; bias is below 2^-32
  /// for the bounds used here.
  std::uint64_t below(std::uint64_t bound) noexcept {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

 private:
  RngState state_;
};

}  // namespace trainguard
