#include <gtest/gtest.h>

#include <algorithm>
#include <set>
#include <vector>

#include "dpn/checks.hpp"
#include "dpn/error.hpp"
#include "dpn/oracle.hpp"
#include "dpn/rng.hpp"
#include "dpn/sampling.hpp"

using namespace dpn;

namespace {

std::vector<Vec3> random_points(std::size_t n, Rng& rng, double extent = 2.0) {
  std::vector<Vec3> pts(n);
  for (Vec3& p : pts) p = {rng.uniform(-extent, extent), rng.uniform(-extent, extent), rng.uniform(-extent, extent)};
  return pts;
}

SeedSet seeds_of(const std::vector<Vec3>& pts, std::vector<std::uint32_t> idx) {
  SeedSet s;
  for (std::uint32_t i : idx) {
    s.indices.push_back(i);
    s.xyz.push_back(pts[i]);
  }
  return s;
}

}  // namespace

TEST(Fps, FarthestFromStart) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.1, 0, 0}, {1, 0, 0}};
  const SeedSet s = farthest_point_sampling(pts, 2, 0);
  EXPECT_EQ(s.indices, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(s.xyz[1], (Vec3{1, 0, 0}));
}

TEST(Fps, AllPointsInGreedyOrder) {
  Rng rng(2);
  const auto pts = random_points(40, rng);
  const SeedSet s = farthest_point_sampling(pts, pts.size(), 3);
  const auto expect = oracle::fps_order(pts, pts.size(), 3);
  ASSERT_EQ(s.indices.size(), expect.size());
  for (std::size_t i = 0; i < expect.size(); ++i) EXPECT_EQ(s.indices[i], expect[i]);
  EXPECT_EQ(std::set<std::uint32_t>(s.indices.begin(), s.indices.end()).size(), pts.size());
}

TEST(Fps, CountsOneCall) {
  Rng rng(4);
  const auto pts = random_points(20, rng);
  SamplingCounters counters;
  farthest_point_sampling(pts, 5, 0, &counters);
  EXPECT_EQ(counters.fps_calls, 1u);
  EXPECT_EQ(counters.ball_query_calls, 0u);
}

TEST(Fps, RejectsBadArguments) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  EXPECT_THROW(farthest_point_sampling(pts, 3, 0), Error);
  EXPECT_THROW(farthest_point_sampling(pts, 1, 2), Error);
}

TEST(Fps, MatchesOracleOnRandomClouds) {
  const CheckResult r = check_fps_oracle(1000, 17);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(BallQuery, PicksInRadiusPoint) {
  // Seed at the origin, which is not itself a cloud point.
  const std::vector<Vec3> cloud{{0.5, 0, 0}, {2, 0, 0}};
  SeedSet seed;
  seed.indices = {0};
  seed.xyz = {{0, 0, 0}};
  const NeighborList nl = ball_query(cloud, seed, 1.0, 1, 0);
  ASSERT_EQ(nl.indices.size(), 1u);
  EXPECT_EQ(nl.indices[0], 0u);
  EXPECT_EQ(nl.found[0], 1u);
}

TEST(BallQuery, ResamplesWhenShort) {
  const std::vector<Vec3> pts{{0, 0, 0}, {0.3, 0, 0}, {5, 5, 5}, {6, 6, 6}};
  const NeighborList nl = ball_query(pts, seeds_of(pts, {0}), 1.0, 5, 42);
  ASSERT_EQ(nl.indices.size(), 5u);
  EXPECT_EQ(nl.found[0], 2u);
  std::size_t dup = 0;
  for (std::size_t s = 0; s < 5; ++s) {
    EXPECT_TRUE(nl.indices[s] == 0 || nl.indices[s] == 1);
    dup += nl.duplicate[s];
  }
  EXPECT_GE(dup, 3u);
  EXPECT_EQ(nl.indices[0], 0u);
  EXPECT_EQ(nl.indices[1], 1u);
}

TEST(BallQuery, InclusiveRadius) {
  const std::vector<Vec3> pts{{0, 0, 0}, {1, 0, 0}};
  const NeighborList nl = ball_query(pts, seeds_of(pts, {0}), 1.0, 2, 0);
  EXPECT_EQ(nl.found[0], 2u);
}

TEST(BallQuery, EveryEntryWithinRadius) {
  Rng rng(8);
  const auto pts = random_points(300, rng, 3.0);
  const SeedSet seeds = farthest_point_sampling(pts, 30, 0);
  const NeighborList nl = ball_query(pts, seeds, 1.2, 16, 3);
  for (std::size_t j = 0; j < seeds.size(); ++j) {
    std::set<std::uint32_t> distinct;
    for (std::uint32_t i : nl.row(j)) {
      EXPECT_LE(squared_distance(pts[i], seeds.xyz[j]), 1.2 * 1.2);
      distinct.insert(i);
    }
    const bool has_dup = std::any_of(nl.duplicate.begin() + j * 16, nl.duplicate.begin() + (j + 1) * 16,
                                     [](std::uint8_t d) { return d != 0; });
    EXPECT_EQ(has_dup, distinct.size() < 16) << "seed " << j;
  }
}

TEST(BallQuery, ThreadCountDoesNotChangeResult) {
  Rng rng(12);
  const auto pts = random_points(500, rng, 3.0);
  const SeedSet seeds = farthest_point_sampling(pts, 64, 0);
  const NeighborList a = ball_query(pts, seeds, 0.8, 12, 99, 1);
  const NeighborList b = ball_query(pts, seeds, 0.8, 12, 99, 4);
  EXPECT_EQ(a.indices, b.indices);
  EXPECT_EQ(a.duplicate, b.duplicate);
}

TEST(BallQuery, MatchesOracleOnRandomClouds) {
  const CheckResult r = check_ball_query_oracle(300, 23);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(ParallelFor, VisitsEveryIndexOnce) {
  std::vector<int> hits(1000, 0);
  parallel_for(hits.size(), 4, [&](std::size_t i) { hits[i] += 1; });
  EXPECT_TRUE(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
}
