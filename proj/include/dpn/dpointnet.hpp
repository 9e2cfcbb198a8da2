#pragma once

// Density-oriented point operator.
//
// One sampling-and-grouping (SG) pass selects seeds by FPS and gathers K
// neighbors per seed by a single ball query. The K neighbor slots are split
// into L ordered groups. Each fusion-and-abstraction (FA) layer l transforms
// the remaining groups with its MLP, fusing in the previous layer's pooled
// seed feature, then max-pools the first remaining group into the layer's tap
// and consumes it. Every tap therefore sees the same fixed radius but a
// strictly growing number of neighbor points.
//
// The three fusion schemes, for layer l > 0 with previous tap t:
//   Append      : g1 <- rows(g1) + [t];   g_i <- mlp(g_i) for all remaining i
//   CoordConcat : g1 <- mlp([xyz(g1), t]); later groups stay raw coordinates
//   FeatConcat  : g_i <- squeeze([g_i, t]) for all remaining i
// Layer 0 applies its MLP to the raw slot encoding (relative xyz ++ point
// features) of all groups, or of the first group only for CoordConcat.

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "dpn/pointcloud.hpp"
#include "dpn/sampling.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

enum class Scheme { Append, CoordConcat, FeatConcat };

std::string_view to_string(Scheme s) noexcept;
/// Accepts append|coordconcat|featconcat and the ablation labels a|b|c.
Scheme parse_scheme(std::string_view s);

struct DpnConfig {
  std::size_t num_seeds = 4096;
  double radius_m = 3.0;  // shared by every FA layer
  std::size_t k_neighbors = 24;
  std::size_t num_fa_layers = 4;
  Scheme scheme = Scheme::FeatConcat;
  std::vector<std::size_t> group_sizes{6, 6, 6, 6};
  /// Per FA layer: the MLP's layer widths (the last entry is the tap width).
  std::vector<std::vector<std::size_t>> mlp_widths{{32}, {64}, {128}, {256}};
  std::uint64_t rng_seed = 0;
  std::size_t fps_start = 0;

  /// Stage-1 settings: 4,096 seeds, 3.0 m, 24 neighbors, 4 FA layers.
  static DpnConfig paper_preset();
  /// Contiguous split of k slots into `layers` groups; the remainder goes to
  /// the earliest groups.
  static std::vector<std::size_t> equal_partition(std::size_t k, std::size_t layers);

  std::size_t tap_width(std::size_t layer) const { return mlp_widths.at(layer).back(); }

  /// Throws Error(Validation) describing the first violated constraint.
  void validate() const;
};

void to_json(nlohmann::json& j, const DpnConfig& c);
/// Missing keys keep their defaults; a changed k_neighbors or num_fa_layers
/// without explicit group_sizes gets an equal partition, and without explicit
/// mlp_widths gets the current widths truncated or extended.
void from_json(const nlohmann::json& j, DpnConfig& c);

/// Sorted slot positions (0..K-1) of a seed's neighbor row.
using SlotSet = std::vector<std::uint16_t>;

struct SgResult {
  SeedSet seeds;
  NeighborList neighbors;
  std::vector<std::size_t> group_sizes;
  std::vector<std::size_t> group_offsets;
  std::size_t input_dim = 0;          // 3 + point feature channels
  /// Per group: (num_seeds * size) x input_dim, seed-major rows of
  /// [neighbor_xyz - seed_xyz, neighbor features].
  std::vector<Tensor> group_inputs;
  SamplingCounters counters;
  double sampling_seconds = 0;
  double grouping_seconds = 0;

  std::size_t num_seeds() const noexcept { return seeds.size(); }
};

SgResult sg_layer(const PointCloud& cloud, const DpnConfig& cfg, std::uint64_t rng_seed,
                  std::size_t threads = 1);

/// Running state threaded through the FA layers.
struct FaState {
  std::size_t layer = 0;
  std::size_t num_seeds = 0;
  std::vector<Tensor> groups;                   // remaining groups, current features
  std::vector<std::size_t> rows_per_seed;       // rows of each remaining group per seed
  std::vector<Tensor> coords;                   // remaining groups' relative xyz
  Tensor tap;                                   // num_seeds x C, empty before layer 0
  /// Provenance (identical for every seed): which neighbor slots each row and
  /// the tap have been fused from.
  std::vector<std::vector<SlotSet>> row_sources;
  SlotSet tap_sources;
};

FaState make_fa_state(const SgResult& sg);
/// Builds a state directly from per-group inputs (first three channels are the
/// relative coordinates). Provenance slots are numbered consecutively across
/// groups.
FaState make_fa_state(std::size_t num_seeds, std::vector<Tensor> group_inputs,
                      std::vector<std::size_t> rows_per_seed);

/// Throws Error(EmptyGroup) when no group remains.
FaState fa_layer_append(Tape& tape, const FaState& state, const Mlp& mlp);
FaState fa_layer_coordconcat(Tape& tape, const FaState& state, const Mlp& mlp);
FaState fa_layer_featconcat(Tape& tape, const FaState& state, const Mlp& mlp);
FaState fa_layer(Tape& tape, Scheme scheme, const FaState& state, const Mlp& mlp);

/// Input width of FA layer `layer`'s MLP.
std::size_t fa_input_dim(const DpnConfig& cfg, std::size_t input_dim, std::size_t layer);

struct DpnParams {
  std::vector<Mlp> layers;

  static DpnParams init(const DpnConfig& cfg, std::size_t input_dim, Rng& rng);
  /// Throws Error(Dimension) if the layer widths do not match `cfg`.
  void check(const DpnConfig& cfg, std::size_t input_dim) const;
  std::vector<Tensor> parameters() const;
};

struct DpnOutput {
  SgResult sg;
  std::vector<Tensor> taps;           // L taps, num_seeds x tap_width(l)
  std::vector<SlotSet> tap_sources;   // slots fused into each tap
  double fa_seconds = 0;

  const Tensor& primary() const { return taps.back(); }
};

DpnOutput forward(Tape& tape, const PointCloud& cloud, const DpnConfig& cfg,
                  const DpnParams& params, std::uint64_t rng_seed, std::size_t threads = 1);
/// FA stack only, over an existing SG result.
DpnOutput forward_from(Tape& tape, SgResult sg, const DpnConfig& cfg, const DpnParams& params);

// Scale-oriented baseline: each level samples and groups again, on the previous
// level's seeds, with a larger radius.

struct SaLevel {
  std::size_t num_seeds = 0;
  double radius_m = 0;
  std::size_t k = 0;
  std::vector<std::size_t> widths;
};

struct SaConfig {
  std::vector<SaLevel> levels;

  /// Seeds shrink by 4x and radii double per level, starting at
  /// (num_seeds, base_radius); k and widths match the density-oriented stack.
  static SaConfig scale_oriented(const DpnConfig& dpn, double base_radius_m = 0.5);
  /// Seed counts strictly decreasing, radii strictly increasing.
  void validate() const;
};

void to_json(nlohmann::json& j, const SaConfig& c);

struct SaParams {
  std::vector<Mlp> levels;

  static SaParams init(const SaConfig& cfg, std::size_t input_dim, Rng& rng);
  std::vector<Tensor> parameters() const;
};

struct SaOutput {
  std::vector<SeedSet> seeds;
  std::vector<Tensor> features;  // per level: num_seeds(l) x width(l)
  SamplingCounters counters;
  double sampling_seconds = 0;
  double grouping_seconds = 0;
  double compute_seconds = 0;
};

SaOutput baseline_sa_stack(Tape& tape, const PointCloud& cloud, const SaConfig& cfg,
                           const SaParams& params, std::uint64_t rng_seed,
                           std::size_t threads = 1);
/// The per-level FPS + ball query chain of baseline_sa_stack without grouping
/// or compute; `features` stays empty.
SaOutput baseline_sa_sampling(const PointCloud& cloud, const SaConfig& cfg,
                              std::uint64_t rng_seed, std::size_t threads = 1);

namespace testing {

/// Deliberate faults the check suites must catch.
enum class Mutation { None, DropFusion };

void set_mutation(Mutation m) noexcept;
Mutation mutation() noexcept;

}  // namespace testing

}  // namespace dpn
