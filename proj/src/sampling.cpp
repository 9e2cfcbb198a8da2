#include "dpn/sampling.hpp"

#include <algorithm>
#include <cstdlib>
#include <exception>
#include <limits>
#include <string>
#include <thread>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {

SeedSet farthest_point_sampling(std::span<const Vec3> xyz, std::size_t m,
                                std::size_t start_index, SamplingCounters* counters) {
  const std::size_t n = xyz.size();
  require(m >= 1, ErrorCode::InvalidArgument, "farthest_point_sampling: m must be >= 1");
  require(m <= n, ErrorCode::InvalidArgument,
          "farthest_point_sampling: m=" + std::to_string(m) + " exceeds N=" + std::to_string(n));
  require(start_index < n, ErrorCode::InvalidArgument,
          "farthest_point_sampling: start index out of range");
  if (counters) ++counters->fps_calls;

  SeedSet out;
  out.indices.reserve(m);
  out.xyz.reserve(m);
  std::vector<double> min_d2(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint8_t> chosen(n, 0);
  std::size_t last = start_index;
  for (std::size_t step = 0; step < m; ++step) {
    out.indices.push_back(static_cast<std::uint32_t>(last));
    out.xyz.push_back(xyz[last]);
    chosen[last] = 1;
    if (step + 1 == m) break;
    const Vec3 s = xyz[last];
    std::size_t best = n;
    double best_d2 = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (chosen[i]) continue;
      const double d2 = squared_distance(xyz[i], s);
      if (d2 < min_d2[i]) min_d2[i] = d2;
      if (min_d2[i] > best_d2) {
        best_d2 = min_d2[i];
        best = i;
      }
    }
    last = best;
  }
  return out;
}

NeighborList ball_query(std::span<const Vec3> xyz, const SeedSet& seeds, double radius,
                        std::size_t k, std::uint64_t rng_seed, std::size_t threads,
                        SamplingCounters* counters) {
  require(radius > 0.0, ErrorCode::InvalidArgument, "ball_query: radius must be positive");
  require(k >= 1, ErrorCode::InvalidArgument, "ball_query: k must be >= 1");
  require(seeds.xyz.size() == seeds.indices.size(), ErrorCode::InvalidArgument,
          "ball_query: seed set coordinates not aligned with indices");
  for (std::uint32_t s : seeds.indices) {
    require(s < xyz.size(), ErrorCode::InvalidArgument,
            "ball_query: seed index " + std::to_string(s) + " out of range");
  }
  if (counters) ++counters->ball_query_calls;

  const std::size_t m = seeds.size();
  NeighborList nl;
  nl.num_seeds = m;
  nl.k = k;
  nl.indices.assign(m * k, 0);
  nl.duplicate.assign(m * k, 0);
  nl.found.assign(m, 0);
  const double r2 = radius * radius;
  const Rng base(rng_seed);

  parallel_for(m, threads, [&](std::size_t j) {
    const Vec3 s = xyz[seeds.indices[j]];
    std::uint32_t* row = nl.indices.data() + j * k;
    std::uint8_t* dup = nl.duplicate.data() + j * k;
    std::size_t count = 0;
    for (std::size_t i = 0; i < xyz.size() && count < k; ++i) {
      if (squared_distance(xyz[i], s) <= r2) row[count++] = static_cast<std::uint32_t>(i);
    }
    nl.found[j] = static_cast<std::uint32_t>(count);
    if (count == k) return;
    if (count == 0) {
      std::fill(row, row + k, seeds.indices[j]);
      std::fill(dup, dup + k, 1);
      return;
    }
    Rng rng = base.stream(static_cast<std::uint64_t>(j));
    for (std::size_t slot = count; slot < k; ++slot) {
      row[slot] = row[rng.below(count)];
      dup[slot] = 1;
    }
  });
  return nl;
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(threads);
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (n + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        try {
          const std::size_t end = std::min(n, (t + 1) * chunk);
          for (std::size_t i = t * chunk; i < end; ++i) fn(i);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    }
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::size_t env_thread_cap() {
  const char* v = std::getenv("DPN_THREADS");
  if (!v || !*v) return 1;
  char* end = nullptr;
  const unsigned long n = std::strtoul(v, &end, 10);
  if (end == v || *end != '\0' || n == 0) return 1;
  return static_cast<std::size_t>(n);
}

}  // namespace dpn
