#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace dpn {

/// SplitMix64 finalizer. Used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_name(std::string_view name) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Seed for the named sub-stream `name` of `seed`.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) noexcept {
  return mix64(seed ^ mix64(hash_name(name)));
}

/// Seed for the `counter`-th stream of `seed` (counter-based, order independent).
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t counter) noexcept {
  return mix64(mix64(seed) ^ mix64(counter + 0x632be59bd9b4e019ULL));
}

/// Deterministic generator. The distributions are implemented here rather than
/// through <random> so draws are identical across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed), engine_(mix64(seed)) {}

  std::uint64_t seed() const noexcept { return seed_; }

  /// Independent generator for a named sub-stream; does not advance this one.
  Rng stream(std::string_view name) const { return Rng(derive_seed(seed_, name)); }
  Rng stream(std::uint64_t counter) const { return Rng(derive_seed(seed_, counter)); }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);

  double normal();

  /// Poisson draw; exact inversion, split into chunks for large means.
  std::uint64_t poisson(double mean);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace dpn
