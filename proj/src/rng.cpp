#include "dpn/rng.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "dpn/error.hpp"

namespace dpn {

std::uint64_t Rng::below(std::uint64_t n) {
  require(n > 0, ErrorCode::InvalidArgument, "Rng::below: n must be positive");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return x % n;
}

double Rng::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::poisson(double mean) {
  require(mean >= 0.0 && std::isfinite(mean), ErrorCode::InvalidArgument,
          "Rng::poisson: mean must be finite and non-negative");
  // exp(-mean) underflows past ~745; sum independent chunks instead.
  constexpr double kChunk = 200.0;
  std::uint64_t total = 0;
  double remaining = mean;
  while (remaining > 0.0) {
    const double lambda = remaining > kChunk ? kChunk : remaining;
    remaining -= lambda;
    double p = std::exp(-lambda);
    double cdf = p;
    const double u = uniform();
    std::uint64_t k = 0;
    while (u > cdf && p > 0.0) {
      ++k;
      p *= lambda / static_cast<double>(k);
      cdf += p;
    }
    total += k;
  }
  return total;
}

}  // namespace dpn
