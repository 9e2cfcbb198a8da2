#include "dpn/dpointnet.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <numeric>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::atomic<testing::Mutation> g_mutation{testing::Mutation::None};

bool drop_fusion() { return g_mutation.load() == testing::Mutation::DropFusion; }

SlotSet merge(const SlotSet& a, const SlotSet& b) {
  SlotSet out;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
  return out;
}

SlotSet pooled_sources(const std::vector<SlotSet>& rows) {
  SlotSet out;
  for (const SlotSet& r : rows) out = merge(out, r);
  return out;
}

/// Row index that repeats each seed's pooled row `rows` times.
std::vector<std::size_t> repeat_index(std::size_t seeds, std::size_t rows) {
  std::vector<std::size_t> idx(seeds * rows);
  for (std::size_t s = 0; s < seeds; ++s)
    for (std::size_t r = 0; r < rows; ++r) idx[s * rows + r] = s;
  return idx;
}

/// Broadcasts the tap (seeds x C) onto every row of a group, or zeros when the
/// fusion is mutated away.
Tensor broadcast_tap(Tape& tape, const FaState& st, std::size_t rows) {
  if (drop_fusion()) return Tensor::zeros(st.num_seeds * rows, st.tap.cols());
  const auto idx = repeat_index(st.num_seeds, rows);
  return gather_rows(tape, st.tap, idx);
}

void check_layer_input(const FaState& st, const Mlp& mlp, const char* op) {
  require(!st.groups.empty(), ErrorCode::EmptyGroup,
          std::string(op) + ": no remaining neighbor group");
  require(st.groups.size() == st.rows_per_seed.size() && st.groups.size() == st.coords.size() &&
              st.groups.size() == st.row_sources.size(),
          ErrorCode::Internal, std::string(op) + ": inconsistent FA state");
  require(!mlp.layers().empty(), ErrorCode::Dimension, std::string(op) + ": empty MLP");
}

/// Pools the (already transformed) first group into the tap and drops it.
FaState pool_and_consume(Tape& tape, FaState st) {
  PoolResult pooled = max_pool_segments(tape, st.groups.front(), st.rows_per_seed.front());
  st.tap = std::move(pooled.values);
  st.tap_sources = pooled_sources(st.row_sources.front());
  st.groups.erase(st.groups.begin());
  st.rows_per_seed.erase(st.rows_per_seed.begin());
  st.coords.erase(st.coords.begin());
  st.row_sources.erase(st.row_sources.begin());
  ++st.layer;
  return st;
}

}  // namespace

namespace testing {
void set_mutation(Mutation m) noexcept { g_mutation.store(m); }
Mutation mutation() noexcept { return g_mutation.load(); }
}  // namespace testing

std::string_view to_string(Scheme s) noexcept {
  switch (s) {
    case Scheme::Append: return "append";
    case Scheme::CoordConcat: return "coordconcat";
    case Scheme::FeatConcat: return "featconcat";
  }
  return "?";
}

Scheme parse_scheme(std::string_view s) {
  if (s == "append" || s == "a") return Scheme::Append;
  if (s == "coordconcat" || s == "b") return Scheme::CoordConcat;
  if (s == "featconcat" || s == "c") return Scheme::FeatConcat;
  fail(ErrorCode::Validation, "unknown scheme '" + std::string(s) +
                                  "' (expected append|coordconcat|featconcat)");
}

DpnConfig DpnConfig::paper_preset() { return DpnConfig{}; }

std::vector<std::size_t> DpnConfig::equal_partition(std::size_t k, std::size_t layers) {
  require(layers >= 1 && k >= layers, ErrorCode::Validation,
          "equal_partition: need 1 <= layers <= k");
  std::vector<std::size_t> sizes(layers, k / layers);
  for (std::size_t i = 0; i < k % layers; ++i) ++sizes[i];
  return sizes;
}

void DpnConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::Validation, "config: " + msg); };
  if (num_seeds < 1) bad("num_seeds must be >= 1");
  if (!(radius_m > 0.0) || !std::isfinite(radius_m)) bad("radius_m must be positive");
  if (k_neighbors < 1) bad("k_neighbors must be >= 1");
  if (num_fa_layers < 1) bad("num_fa_layers must be >= 1");
  if (group_sizes.size() != num_fa_layers)
    bad("group_sizes has " + std::to_string(group_sizes.size()) + " entries for " +
        std::to_string(num_fa_layers) + " FA layers");
  if (std::any_of(group_sizes.begin(), group_sizes.end(), [](std::size_t g) { return g == 0; }))
    bad("group sizes must be positive");
  const std::size_t total = std::accumulate(group_sizes.begin(), group_sizes.end(), std::size_t{0});
  if (total != k_neighbors)
    bad("sum(group_sizes) = " + std::to_string(total) + " != k_neighbors = " +
        std::to_string(k_neighbors));
  if (k_neighbors > 65535) bad("k_neighbors too large");
  if (mlp_widths.size() != num_fa_layers)
    bad("mlp_widths has " + std::to_string(mlp_widths.size()) + " entries for " +
        std::to_string(num_fa_layers) + " FA layers");
  for (const auto& w : mlp_widths) {
    if (w.empty() || std::any_of(w.begin(), w.end(), [](std::size_t x) { return x == 0; }))
      bad("every FA layer needs non-empty positive MLP widths");
  }
}

void to_json(nlohmann::json& j, const DpnConfig& c) {
  j = nlohmann::json{{"num_seeds", c.num_seeds},
                     {"radius_m", c.radius_m},
                     {"k_neighbors", c.k_neighbors},
                     {"num_fa_layers", c.num_fa_layers},
                     {"scheme", std::string(to_string(c.scheme))},
                     {"group_sizes", c.group_sizes},
                     {"mlp_widths", c.mlp_widths},
                     {"rng_seed", c.rng_seed},
                     {"fps_start", c.fps_start}};
}

void from_json(const nlohmann::json& j, DpnConfig& c) {
  require(j.is_object(), ErrorCode::Validation, "config: expected a JSON object");
  try {
    const DpnConfig defaults;
    c.num_seeds = j.value("num_seeds", c.num_seeds);
    c.radius_m = j.value("radius_m", c.radius_m);
    c.k_neighbors = j.value("k_neighbors", c.k_neighbors);
    c.num_fa_layers = j.value("num_fa_layers", c.num_fa_layers);
    if (j.contains("scheme")) c.scheme = parse_scheme(j.at("scheme").get<std::string>());
    c.rng_seed = j.value("rng_seed", c.rng_seed);
    c.fps_start = j.value("fps_start", c.fps_start);
    if (j.contains("group_sizes")) {
      c.group_sizes = j.at("group_sizes").get<std::vector<std::size_t>>();
    } else if (c.group_sizes.size() != c.num_fa_layers ||
               std::accumulate(c.group_sizes.begin(), c.group_sizes.end(), std::size_t{0}) !=
                   c.k_neighbors) {
      c.group_sizes = DpnConfig::equal_partition(c.k_neighbors, c.num_fa_layers);
    }
    if (j.contains("mlp_widths")) {
      c.mlp_widths.clear();
      for (const auto& w : j.at("mlp_widths")) {
        if (w.is_array()) {
          c.mlp_widths.push_back(w.get<std::vector<std::size_t>>());
        } else {
          c.mlp_widths.push_back({w.get<std::size_t>()});
        }
      }
    } else if (c.mlp_widths.size() != c.num_fa_layers) {
      auto widths = c.mlp_widths.empty() ? defaults.mlp_widths : c.mlp_widths;
      while (widths.size() < c.num_fa_layers) widths.push_back(widths.back());
      widths.resize(c.num_fa_layers);
      c.mlp_widths = std::move(widths);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Validation, std::string("config: ") + e.what());
  }
}

SgResult sg_layer(const PointCloud& cloud, const DpnConfig& cfg, std::uint64_t rng_seed,
                  std::size_t threads) {
  cfg.validate();
  require(!cloud.empty(), ErrorCode::InvalidArgument, "sg_layer: empty cloud");
  require(cfg.num_seeds <= cloud.size(), ErrorCode::InvalidArgument,
          "sg_layer: num_seeds=" + std::to_string(cfg.num_seeds) + " exceeds cloud size " +
              std::to_string(cloud.size()));
  SgResult sg;
  const auto t0 = Clock::now();
  sg.seeds = farthest_point_sampling(cloud.xyz(), cfg.num_seeds, cfg.fps_start, &sg.counters);
  sg.neighbors = ball_query(cloud.xyz(), sg.seeds, cfg.radius_m, cfg.k_neighbors,
                            derive_seed(rng_seed, "ball_query"), threads, &sg.counters);
  sg.sampling_seconds = seconds_since(t0);

  const auto t1 = Clock::now();
  const std::size_t m = sg.seeds.size(), fdim = cloud.feature_dim();
  sg.group_sizes = cfg.group_sizes;
  sg.input_dim = 3 + fdim;
  std::size_t offset = 0;
  for (std::size_t size : cfg.group_sizes) {
    sg.group_offsets.push_back(offset);
    std::vector<double> rows;
    rows.reserve(m * size * sg.input_dim);
    for (std::size_t s = 0; s < m; ++s) {
      const Vec3& seed = sg.seeds.xyz[s];
      const auto nbrs = sg.neighbors.row(s);
      for (std::size_t slot = offset; slot < offset + size; ++slot) {
        const std::uint32_t p = nbrs[slot];
        const Vec3& q = cloud.xyz()[p];
        rows.push_back(q[0] - seed[0]);
        rows.push_back(q[1] - seed[1]);
        rows.push_back(q[2] - seed[2]);
        const auto f = cloud.features_of(p);
        rows.insert(rows.end(), f.begin(), f.end());
      }
    }
    sg.group_inputs.push_back(Tensor::from(m * size, sg.input_dim, std::move(rows)));
    offset += size;
  }
  sg.grouping_seconds = seconds_since(t1);
  return sg;
}

FaState make_fa_state(std::size_t num_seeds, std::vector<Tensor> group_inputs,
                      std::vector<std::size_t> rows_per_seed) {
  require(group_inputs.size() == rows_per_seed.size() && !group_inputs.empty(),
          ErrorCode::Dimension, "make_fa_state: need one row count per group");
  FaState st;
  st.num_seeds = num_seeds;
  std::uint16_t slot = 0;
  Tape untracked(false);
  for (std::size_t g = 0; g < group_inputs.size(); ++g) {
    const Tensor& in = group_inputs[g];
    require(in.rows() == num_seeds * rows_per_seed[g] && rows_per_seed[g] > 0,
            ErrorCode::Dimension, "make_fa_state: group rows do not match seeds x group size");
    require(in.cols() >= 3, ErrorCode::Dimension,
            "make_fa_state: group inputs need relative xyz in the first three channels");
    std::vector<double> xyz;
    xyz.reserve(in.rows() * 3);
    for (std::size_t r = 0; r < in.rows(); ++r)
      for (std::size_t c = 0; c < 3; ++c) xyz.push_back(in.at(r, c));
    st.coords.push_back(Tensor::from(in.rows(), 3, std::move(xyz)));
    std::vector<SlotSet> sources;
    for (std::size_t r = 0; r < rows_per_seed[g]; ++r) sources.push_back({slot++});
    st.row_sources.push_back(std::move(sources));
  }
  st.groups = std::move(group_inputs);
  st.rows_per_seed = std::move(rows_per_seed);
  return st;
}

FaState make_fa_state(const SgResult& sg) {
  return make_fa_state(sg.num_seeds(), sg.group_inputs, sg.group_sizes);
}

FaState fa_layer_append(Tape& tape, const FaState& state, const Mlp& mlp) {
  check_layer_input(state, mlp, "fa_layer_append");
  FaState st = state;
  if (st.layer > 0 && !drop_fusion()) {
    // Append the pooled row after each seed's rows of the first group.
    const std::size_t m = st.num_seeds, r = st.rows_per_seed[0];
    const Tensor stacked = concat_rows(tape, st.groups[0], st.tap);
    std::vector<std::size_t> idx;
    idx.reserve(m * (r + 1));
    for (std::size_t s = 0; s < m; ++s) {
      for (std::size_t i = 0; i < r; ++i) idx.push_back(s * r + i);
      idx.push_back(m * r + s);
    }
    st.groups[0] = gather_rows(tape, stacked, idx);
    st.rows_per_seed[0] = r + 1;
    st.row_sources[0].push_back(st.tap_sources);
  }
  for (Tensor& g : st.groups) g = mlp.forward(tape, g);
  return pool_and_consume(tape, std::move(st));
}

FaState fa_layer_coordconcat(Tape& tape, const FaState& state, const Mlp& mlp) {
  check_layer_input(state, mlp, "fa_layer_coordconcat");
  FaState st = state;
  if (st.layer == 0) {
    st.groups[0] = mlp.forward(tape, st.groups[0]);
  } else {
    const std::size_t r = st.rows_per_seed[0];
    const Tensor fused = concat_channels(tape, st.coords[0], broadcast_tap(tape, st, r));
    st.groups[0] = mlp.forward(tape, fused);
    if (!drop_fusion()) {
      for (SlotSet& src : st.row_sources[0]) src = merge(src, st.tap_sources);
    }
  }
  return pool_and_consume(tape, std::move(st));
}

FaState fa_layer_featconcat(Tape& tape, const FaState& state, const Mlp& mlp) {
  check_layer_input(state, mlp, "fa_layer_featconcat");
  FaState st = state;
  for (std::size_t g = 0; g < st.groups.size(); ++g) {
    if (st.layer == 0) {
      st.groups[g] = mlp.forward(tape, st.groups[g]);
      continue;
    }
    const Tensor fused =
        concat_channels(tape, st.groups[g], broadcast_tap(tape, st, st.rows_per_seed[g]));
    st.groups[g] = mlp.forward(tape, fused);
    if (!drop_fusion()) {
      for (SlotSet& src : st.row_sources[g]) src = merge(src, st.tap_sources);
    }
  }
  return pool_and_consume(tape, std::move(st));
}

FaState fa_layer(Tape& tape, Scheme scheme, const FaState& state, const Mlp& mlp) {
  switch (scheme) {
    case Scheme::Append: return fa_layer_append(tape, state, mlp);
    case Scheme::CoordConcat: return fa_layer_coordconcat(tape, state, mlp);
    case Scheme::FeatConcat: return fa_layer_featconcat(tape, state, mlp);
  }
  fail(ErrorCode::Internal, "fa_layer: unknown scheme");
}

std::size_t fa_input_dim(const DpnConfig& cfg, std::size_t input_dim, std::size_t layer) {
  if (layer == 0) return input_dim;
  const std::size_t prev = cfg.tap_width(layer - 1);
  switch (cfg.scheme) {
    case Scheme::Append: return prev;
    case Scheme::CoordConcat: return 3 + prev;
    case Scheme::FeatConcat: return 2 * prev;
  }
  return 0;
}

DpnParams DpnParams::init(const DpnConfig& cfg, std::size_t input_dim, Rng& rng) {
  cfg.validate();
  DpnParams p;
  for (std::size_t l = 0; l < cfg.num_fa_layers; ++l) {
    std::vector<std::size_t> dims{fa_input_dim(cfg, input_dim, l)};
    dims.insert(dims.end(), cfg.mlp_widths[l].begin(), cfg.mlp_widths[l].end());
    Rng layer_rng = rng.stream("fa_layer." + std::to_string(l));
    p.layers.push_back(Mlp::init(dims, Activation::Relu, layer_rng));
  }
  return p;
}

void DpnParams::check(const DpnConfig& cfg, std::size_t input_dim) const {
  require(layers.size() == cfg.num_fa_layers, ErrorCode::Dimension,
          "params: " + std::to_string(layers.size()) + " FA layer MLPs for " +
              std::to_string(cfg.num_fa_layers) + " configured layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Mlp& mlp = layers[l];
    bool ok = mlp.in_dim() == fa_input_dim(cfg, input_dim, l) &&
              mlp.layers().size() == cfg.mlp_widths[l].size();
    for (std::size_t i = 0; ok && i < mlp.layers().size(); ++i)
      ok = mlp.layers()[i].out_dim() == cfg.mlp_widths[l][i];
    require(ok, ErrorCode::Dimension,
            "params: FA layer " + std::to_string(l) + " widths do not match the config");
  }
}

std::vector<Tensor> DpnParams::parameters() const {
  std::vector<Tensor> out;
  for (const Mlp& m : layers) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

DpnOutput forward_from(Tape& tape, SgResult sg, const DpnConfig& cfg, const DpnParams& params) {
  params.check(cfg, sg.input_dim);
  DpnOutput out;
  const auto t0 = Clock::now();
  FaState st = make_fa_state(sg);
  for (std::size_t l = 0; l < cfg.num_fa_layers; ++l) {
    st = fa_layer(tape, cfg.scheme, st, params.layers[l]);
    out.taps.push_back(st.tap);
    out.tap_sources.push_back(st.tap_sources);
  }
  out.fa_seconds = seconds_since(t0);
  out.sg = std::move(sg);
  return out;
}

DpnOutput forward(Tape& tape, const PointCloud& cloud, const DpnConfig& cfg,
                  const DpnParams& params, std::uint64_t rng_seed, std::size_t threads) {
  params.check(cfg, 3 + cloud.feature_dim());
  return forward_from(tape, sg_layer(cloud, cfg, rng_seed, threads), cfg, params);
}

SaConfig SaConfig::scale_oriented(const DpnConfig& dpn, double base_radius_m) {
  SaConfig c;
  std::size_t seeds = dpn.num_seeds;
  double radius = base_radius_m;
  for (std::size_t l = 0; l < dpn.num_fa_layers; ++l) {
    c.levels.push_back({seeds, radius, dpn.k_neighbors, dpn.mlp_widths[l]});
    seeds = std::max<std::size_t>(1, seeds / 4);
    radius *= 2.0;
  }
  return c;
}

void SaConfig::validate() const {
  require(!levels.empty(), ErrorCode::Validation, "sa config: no levels");
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const SaLevel& lv = levels[l];
    require(lv.num_seeds >= 1 && lv.k >= 1 && lv.radius_m > 0 && !lv.widths.empty(),
            ErrorCode::Validation, "sa config: level " + std::to_string(l) + " malformed");
    if (l > 0) {
      require(lv.num_seeds < levels[l - 1].num_seeds, ErrorCode::Validation,
              "sa config: seed counts must decrease per level");
      require(lv.radius_m > levels[l - 1].radius_m, ErrorCode::Validation,
              "sa config: radii must strictly increase per level");
    }
  }
}

void to_json(nlohmann::json& j, const SaConfig& c) {
  j = nlohmann::json::array();
  for (const SaLevel& l : c.levels) {
    j.push_back({{"num_seeds", l.num_seeds}, {"radius_m", l.radius_m}, {"k", l.k},
                 {"widths", l.widths}});
  }
}

SaParams SaParams::init(const SaConfig& cfg, std::size_t input_dim, Rng& rng) {
  cfg.validate();
  SaParams p;
  std::size_t in = input_dim;
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    std::vector<std::size_t> dims{in};
    dims.insert(dims.end(), cfg.levels[l].widths.begin(), cfg.levels[l].widths.end());
    Rng level_rng = rng.stream("sa_level." + std::to_string(l));
    p.levels.push_back(Mlp::init(dims, Activation::Relu, level_rng));
    in = 3 + cfg.levels[l].widths.back();
  }
  return p;
}

std::vector<Tensor> SaParams::parameters() const {
  std::vector<Tensor> out;
  for (const Mlp& m : levels) {
    auto p = m.parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

namespace {

struct LevelSample {
  SeedSet seeds;
  NeighborList neighbors;
};

LevelSample sample_level(std::span<const Vec3> xyz, const SaLevel& lv, std::size_t level,
                         std::uint64_t rng_seed, std::size_t threads, SaOutput& out) {
  require(lv.num_seeds <= xyz.size(), ErrorCode::InvalidArgument,
          "baseline_sa_stack: level " + std::to_string(level) + " wants more seeds than points");
  const auto t0 = Clock::now();
  LevelSample s;
  s.seeds = farthest_point_sampling(xyz, lv.num_seeds, 0, &out.counters);
  s.neighbors = ball_query(xyz, s.seeds, lv.radius_m, lv.k,
                           derive_seed(rng_seed, "sa_ball_query." + std::to_string(level)),
                           threads, &out.counters);
  out.sampling_seconds += seconds_since(t0);
  return s;
}

}  // namespace

SaOutput baseline_sa_sampling(const PointCloud& cloud, const SaConfig& cfg,
                              std::uint64_t rng_seed, std::size_t threads) {
  cfg.validate();
  SaOutput out;
  std::vector<Vec3> xyz(cloud.xyz().begin(), cloud.xyz().end());
  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    LevelSample s = sample_level(xyz, cfg.levels[l], l, rng_seed, threads, out);
    xyz = s.seeds.xyz;
    out.seeds.push_back(std::move(s.seeds));
  }
  return out;
}

SaOutput baseline_sa_stack(Tape& tape, const PointCloud& cloud, const SaConfig& cfg,
                           const SaParams& params, std::uint64_t rng_seed, std::size_t threads) {
  cfg.validate();
  require(params.levels.size() == cfg.levels.size(), ErrorCode::Dimension,
          "baseline_sa_stack: parameter levels do not match config");
  SaOutput out;
  std::vector<Vec3> xyz(cloud.xyz().begin(), cloud.xyz().end());
  const std::size_t fdim = cloud.feature_dim();
  Tensor level_features;  // pooled features of the previous level's seeds

  for (std::size_t l = 0; l < cfg.levels.size(); ++l) {
    const SaLevel& lv = cfg.levels[l];
    LevelSample sampled = sample_level(xyz, lv, l, rng_seed, threads, out);
    SeedSet& seeds = sampled.seeds;
    const NeighborList& nl = sampled.neighbors;

    const auto t1 = Clock::now();
    const std::size_t m = seeds.size(), k = lv.k;
    std::vector<double> rel;
    rel.reserve(m * k * 3);
    std::vector<std::size_t> src;
    src.reserve(m * k);
    for (std::size_t s = 0; s < m; ++s) {
      const auto row = nl.row(s);
      for (std::size_t j = 0; j < k; ++j) {
        const Vec3& q = xyz[row[j]];
        for (int a = 0; a < 3; ++a) rel.push_back(q[a] - seeds.xyz[s][a]);
        src.push_back(row[j]);
      }
    }
    const Tensor rel_t = Tensor::from(m * k, 3, std::move(rel));
    Tensor grouped = rel_t;
    if (l == 0 && fdim > 0) {
      std::vector<double> f;
      f.reserve(m * k * fdim);
      for (std::size_t p : src) {
        const auto pf = cloud.features_of(p);
        f.insert(f.end(), pf.begin(), pf.end());
      }
      grouped = concat_channels(tape, rel_t, Tensor::from(m * k, fdim, std::move(f)));
    } else if (l > 0) {
      grouped = concat_channels(tape, rel_t, gather_rows(tape, level_features, src));
    }
    out.grouping_seconds += seconds_since(t1);

    const auto t2 = Clock::now();
    const Tensor h = params.levels[l].forward(tape, grouped);
    level_features = max_pool_segments(tape, h, k).values;
    out.compute_seconds += seconds_since(t2);

    xyz = seeds.xyz;
    out.seeds.push_back(std::move(seeds));
    out.features.push_back(level_features);
  }
  return out;
}

}  // namespace dpn
