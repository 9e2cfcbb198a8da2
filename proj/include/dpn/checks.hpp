#pragma once

// Property and oracle suites run by `dpointnet check`, the unit tests and the
// acceptance binary.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/config.hpp"
#include "dpn/dpointnet.hpp"
#include "dpn/pointcloud.hpp"

namespace dpn {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  double metric = 0;  // suite-specific: worst error, count, ...
  std::string detail;
  double seconds = 0;
};

struct CheckReport {
  std::vector<CheckResult> results;

  bool passed() const;
  std::size_t failures() const;
  std::string to_text() const;
  nlohmann::json to_json() const;
};

struct CheckOptions {
  std::size_t fps_clouds = 1000;
  std::size_t ball_clouds = 300;
  std::size_t fa_instances = 100;
  std::size_t grad_trials = 100;
  std::size_t e2e_trials = 4;
  std::uint64_t seed = 0;
};

inline constexpr double kOpGradTolerance = 1e-6;
inline constexpr double kEndToEndGradTolerance = 1e-4;
inline constexpr double kFiniteDifferenceStep = 1e-5;
inline constexpr double kFaOracleTolerance = 1e-12;
inline constexpr double kRadiusEpsilon = 1e-9;

/// FPS sequences against the greedy oracle for every m on random clouds of
/// up to 64 points, half of them on a coarse grid to force ties.
CheckResult check_fps_oracle(std::size_t clouds, std::uint64_t seed);
/// Ball query rows against brute-force radius sets.
CheckResult check_ball_query_oracle(std::size_t clouds, std::uint64_t seed);
/// FA taps against the loop oracle on tiny instances; metric = max abs error.
CheckResult check_fa_oracle(Scheme scheme, std::size_t instances, std::uint64_t seed);

/// Central differences per op, norm-relative error; one result per op.
std::vector<CheckResult> check_op_gradients(std::size_t trials, std::uint64_t seed);
/// Directional derivative of the full detector loss (L = 3, 32 points,
/// 8 seeds, K = 6) against central differences.
CheckResult check_end_to_end_gradient(Scheme scheme, std::size_t trials, std::uint64_t seed);

/// Every slot fused into any tap lies within the configured radius of its seed.
CheckResult check_principle1(const DpnConfig& cfg, const PointCloud& cloud, std::uint64_t seed);
/// The backbone config has one scalar radius; list-valued radii are rejected.
CheckResult check_single_radius_config();
/// Fused slot counts per tap equal the cumulative group sizes and strictly
/// increase. `detail` lists the sequence.
CheckResult check_principle2(const DpnConfig& cfg, const PointCloud& cloud, std::uint64_t seed);
/// One FPS and one ball query per forward, against L of each for the baseline.
CheckResult check_single_sampling(const DpnConfig& cfg, const PointCloud& cloud,
                                  std::uint64_t seed);
/// With one FA layer all schemes give bit-identical taps.
CheckResult check_single_layer_equivalence(std::uint64_t seed);
/// Permuting rows within each seed's group leaves every tap unchanged.
CheckResult check_permutation_invariance(Scheme scheme, std::uint64_t seed);
/// Top-head inference is bit-identical with auxiliary heads detached, and
/// adding auxiliary heads does not change initialisation of the rest.
CheckResult check_aux_neutrality(std::uint64_t seed);
/// Closed-form loss values.
CheckResult check_loss_units();

/// Validates the config, then runs every suite. Principle checks use the
/// configured backbone on a synthetic scene sampled to num_points.
CheckReport run_checks(const RunConfig& cfg, const CheckOptions& opts);

}  // namespace dpn
