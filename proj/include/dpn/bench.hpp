#pragma once

// Timing comparison between the single-sampling stack and the per-level
// sampling baseline, plus the ablation sweeps.
//
// Timing policy: warm-up repetitions are discarded, the two stacks alternate
// repetition by repetition on identical clouds, and every phase is reported as
// median and interquartile range in microseconds. Timed regions run on one
// thread.

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/config.hpp"
#include "dpn/dpointnet.hpp"
#include "dpn/pointcloud.hpp"
#include "dpn/train.hpp"

namespace dpn {

inline constexpr int kBenchSchemaVersion = 1;
inline constexpr int kSweepSchemaVersion = 1;

struct PhaseStats {
  double median_us = 0;
  double q1_us = 0;
  double q3_us = 0;
  double iqr_us = 0;
  std::size_t reps = 0;
};

/// Linear-interpolated quartiles. Throws InvalidArgument when empty.
PhaseStats summarize_us(std::span<const double> seconds);

struct BenchRecord {
  std::string stack;  // "dpointnet" or "sa_baseline"
  nlohmann::json config;
  SamplingCounters counters;  // per forward
  PhaseStats sampling;
  PhaseStats grouping;
  PhaseStats compute;
  std::size_t memory_bytes = 0;  // activation estimate of one forward
  std::size_t reps = 0;
  std::size_t warmup = 0;
  bool include_compute = false;
};

void to_json(nlohmann::json& j, const PhaseStats& s);
void to_json(nlohmann::json& j, const BenchRecord& r);

struct BenchOptions {
  std::size_t reps = 20;
  std::size_t warmup = 2;
  /// Also time grouping and MLP compute; otherwise only FPS + ball query chains.
  bool include_compute = false;
  std::uint64_t seed = 0;
};

/// Activation bytes of one untracked forward: grouped inputs plus every
/// tensor the FA layers produce.
std::size_t dpn_memory_bytes(const PointCloud& cloud, const DpnConfig& cfg,
                             const DpnParams& params, std::uint64_t seed);
std::size_t sa_memory_bytes(const PointCloud& cloud, const SaConfig& cfg,
                            const SaParams& params, std::uint64_t seed);

/// Throws InvalidArgument on an empty workload or reps < 5.
std::pair<BenchRecord, BenchRecord> run_bench(std::span<const PointCloud> workload,
                                              const DpnConfig& dpn_cfg, const SaConfig& sa_cfg,
                                              const BenchOptions& opts);

/// Uniform random cloud in a 80 x 80 x 4 m box with one intensity channel.
PointCloud random_cloud(std::size_t n, std::uint64_t seed);

enum class SweepAxis { Scheme, HeadLayer, Radius, K };

std::string_view to_string(SweepAxis a) noexcept;
/// scheme|head_layer|radius|k
SweepAxis parse_sweep_axis(std::string_view s);
/// scheme {a,b,c}; head_layer {2,3,4}; radius {1..5}; k {16,24,32}.
std::vector<std::string> default_sweep_values(SweepAxis axis);

struct SweepRow {
  SweepAxis axis = SweepAxis::Scheme;
  std::string value;
  DetectorConfig detector;
  double initial_loss = 0;
  double final_loss = 0;
  bool converged = false;
  EvalMetrics heldout;
  PhaseStats sampling;
  std::size_t memory_bytes = 0;
  std::string note;
};

/// Applies one axis value to `base`. Throws Validation for invalid values.
RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, std::string_view value);

/// Brief training and held-out evaluation per value. Rows train on up to
/// `threads` workers; timings are taken afterwards on one thread. A diverging
/// run is kept with converged = false and the diagnostic in `note`.
std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis,
                                std::span<const std::string> values, std::size_t threads = 1);

/// Header plus one line per row. The two timing columns precede `note`.
void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows);
/// RFC-4180 field quoting.
std::string csv_field(std::string_view s);

}  // namespace dpn
