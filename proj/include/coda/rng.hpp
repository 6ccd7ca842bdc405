#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

namespace coda {

namespace detail {

[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9E3779B97F4A7C15ull);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace detail

/**
 * @brief Deterministic, platform-independent RNG (SplitMix64).
 *
 * std::mt19937 output is portable but the standard distributions are not,
 * so uniform doubles are produced directly from the top 53 bits.
 */
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  [[nodiscard]] std::uint64_t next_u64() { return detail::splitmix64(state_); }

  /// Uniform in [0, 1).
  [[nodiscard]] double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  [[nodiscard]] double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  [[nodiscard]] std::uint64_t uniform_index(std::uint64_t n) { return next_u64() % n; }

  [[nodiscard]] bool bernoulli(double p) { return uniform() < p; }

 private:
  std::uint64_t state_;
};

/**
 * @brief Seed-splitting rule: one root seed deterministically spawns
 * per-purpose, per-environment, per-trajectory streams.
 *
 * Each component is absorbed with a SplitMix64 round, so
 * derive_seed(root, {a, b}) != derive_seed(root, {b, a}).
 */
[[nodiscard]] inline std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> stream) {
  std::uint64_t s = root;
  (void)detail::splitmix64(s);
  for (std::uint64_t component : stream) {
    s ^= component + 0x9E3779B97F4A7C15ull;
    (void)detail::splitmix64(s);
  }
  return s;
}

/// FNV-1a, used to mix string identifiers (env ids) into seed streams.
[[nodiscard]] constexpr std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ull;
  for (char c : s) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(c));
    h *= 0x100000001B3ull;
  }
  return h;
}

}  // namespace coda
