#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpn/pointcloud.hpp"

namespace dpn {

/// Invocation counters for the sampling primitives; passed explicitly so
/// instrumented callers can prove how many passes a forward performed.
struct SamplingCounters {
  std::size_t fps_calls = 0;
  std::size_t ball_query_calls = 0;

  friend bool operator==(const SamplingCounters&, const SamplingCounters&) = default;
};

struct SeedSet {
  std::vector<std::uint32_t> indices;  // into the source cloud, selection order
  std::vector<Vec3> xyz;

  std::size_t size() const noexcept { return indices.size(); }
};

/// Fixed-width neighbor table: k source indices per seed, row-major.
struct NeighborList {
  std::size_t num_seeds = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;   // num_seeds * k
  std::vector<std::uint8_t> duplicate;  // 1 where the slot was resampled
  std::vector<std::uint32_t> found;     // distinct in-radius points per seed, capped at k

  std::span<const std::uint32_t> row(std::size_t seed) const {
    return std::span<const std::uint32_t>(indices).subspan(seed * k, k);
  }
};

/// Greedy max-min selection starting at `start_index`. Ties go to the lowest
/// index. O(N * m) with an incremental min-distance array.
SeedSet farthest_point_sampling(std::span<const Vec3> xyz, std::size_t m,
                                std::size_t start_index = 0,
                                SamplingCounters* counters = nullptr);

/// For each seed: in-radius points (|p - s| <= radius) in ascending index order.
/// At least k found: the first k. Fewer: the found points followed by uniform
/// draws (with replacement) from them, flagged as duplicates. None: k copies of
/// the seed itself. Draws for seed j come from stream j of `rng_seed`, so the
/// result does not depend on `threads`.
NeighborList ball_query(std::span<const Vec3> xyz, const SeedSet& seeds, double radius,
                        std::size_t k, std::uint64_t rng_seed, std::size_t threads = 1,
                        SamplingCounters* counters = nullptr);

/// Runs fn(i) for i in [0, n) on up to `threads` workers in contiguous chunks.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);

/// Worker cap from DPN_THREADS (default 1).
std::size_t env_thread_cap();

}  // namespace dpn
