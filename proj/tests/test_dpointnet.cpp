#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "dpn/bench.hpp"
#include "dpn/checks.hpp"
#include "dpn/dpointnet.hpp"
#include "dpn/error.hpp"
#include "dpn/oracle.hpp"
#include "dpn/rng.hpp"

using namespace dpn;

namespace {

Linear dense(std::size_t in, std::size_t out, std::vector<double> weight, Activation act) {
  return Linear{Tensor::from(in, out, std::move(weight), true), Tensor::zeros(1, out, true), act};
}

Mlp identity_mlp(std::size_t width) {
  std::vector<double> w(width * width, 0.0);
  for (std::size_t i = 0; i < width; ++i) w[i * width + i] = 1.0;
  return Mlp({dense(width, width, w, Activation::Identity)});
}

// One seed, single-channel features, zero coordinates, at `layer`.
FaState manual_state(std::size_t layer, std::vector<std::vector<double>> groups,
                     std::vector<double> tap = {}) {
  FaState st;
  st.layer = layer;
  st.num_seeds = 1;
  std::uint16_t slot = 0;
  for (auto& g : groups) {
    const std::size_t rows = g.size();
    st.groups.push_back(Tensor::from(rows, 1, std::move(g)));
    st.coords.push_back(Tensor::zeros(rows, 3));
    st.rows_per_seed.push_back(rows);
    std::vector<SlotSet> src;
    for (std::size_t r = 0; r < rows; ++r) src.push_back({slot++});
    st.row_sources.push_back(std::move(src));
  }
  if (!tap.empty()) {
    const std::size_t c = tap.size();
    st.tap = Tensor::from(1, c, std::move(tap));
  }
  return st;
}

DpnConfig small_config(std::size_t layers = 4) {
  DpnConfig c;
  c.num_seeds = 64;
  c.k_neighbors = 24;
  c.num_fa_layers = layers;
  c.group_sizes = DpnConfig::equal_partition(24, layers);
  c.mlp_widths.assign(layers, {8});
  return c;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::Internal;
}

}  // namespace

TEST(Config, EqualPartition) {
  EXPECT_EQ(DpnConfig::equal_partition(24, 4), (std::vector<std::size_t>{6, 6, 6, 6}));
  EXPECT_EQ(DpnConfig::equal_partition(24, 1), (std::vector<std::size_t>{24}));
  EXPECT_EQ(DpnConfig::equal_partition(10, 3), (std::vector<std::size_t>{4, 3, 3}));
}

TEST(Config, GroupSizesMustSumToK) {
  DpnConfig c;
  c.group_sizes = {6, 6, 6, 5};
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::Validation);
  c.group_sizes = {6, 6, 12};
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::Validation);
}

TEST(Config, SingleRadiusOnly) {
  const CheckResult r = check_single_radius_config();
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Config, JsonRoundTrip) {
  DpnConfig c = small_config(3);
  c.scheme = Scheme::CoordConcat;
  c.radius_m = 2.5;
  nlohmann::json j = c;
  DpnConfig back;
  from_json(j, back);
  EXPECT_EQ(nlohmann::json(back), j);
}

TEST(Config, SchemeLabels) {
  EXPECT_EQ(parse_scheme("a"), Scheme::Append);
  EXPECT_EQ(parse_scheme("coordconcat"), Scheme::CoordConcat);
  EXPECT_EQ(parse_scheme("c"), Scheme::FeatConcat);
  EXPECT_EQ(code_of([] { parse_scheme("d"); }), ErrorCode::Validation);
}

TEST(SgLayer, EqualGroupsAndSingleSampling) {
  const PointCloud cloud = random_cloud(2048, 5);
  const DpnConfig cfg = small_config(4);
  const SgResult sg = sg_layer(cloud, cfg, 1);
  EXPECT_EQ(sg.group_sizes, (std::vector<std::size_t>{6, 6, 6, 6}));
  EXPECT_EQ(sg.group_offsets, (std::vector<std::size_t>{0, 6, 12, 18}));
  for (const Tensor& g : sg.group_inputs) EXPECT_EQ(g.rows(), 64u * 6u);
  EXPECT_EQ(sg.counters.fps_calls, 1u);
  EXPECT_EQ(sg.counters.ball_query_calls, 1u);
}

TEST(SgLayer, SingleLayerIsOneGroup) {
  const PointCloud cloud = random_cloud(512, 6);
  const SgResult sg = sg_layer(cloud, small_config(1), 1);
  ASSERT_EQ(sg.group_inputs.size(), 1u);
  EXPECT_EQ(sg.group_inputs[0].rows(), 64u * 24u);
  EXPECT_EQ(sg.counters.fps_calls, 1u);
  EXPECT_EQ(sg.counters.ball_query_calls, 1u);
}

TEST(SgLayer, SeedOwnEntryIsOrigin) {
  const PointCloud cloud = random_cloud(1024, 8);
  const SgResult sg = sg_layer(cloud, small_config(4), 2);
  // The seed is a cloud point at distance 0, so it is the first in-radius
  // neighbor whenever it has the lowest index among coincident points.
  for (std::size_t s = 0; s < sg.num_seeds(); ++s) {
    bool found = false;
    for (std::size_t g = 0; g < sg.group_sizes.size() && !found; ++g)
      for (std::size_t r = 0; r < sg.group_sizes[g] && !found; ++r) {
        const Tensor& in = sg.group_inputs[g];
        const std::size_t row = s * sg.group_sizes[g] + r;
        if (sg.neighbors.row(s)[sg.group_offsets[g] + r] == sg.seeds.indices[s])
          found = in.at(row, 0) == 0 && in.at(row, 1) == 0 && in.at(row, 2) == 0;
      }
    EXPECT_TRUE(found) << "seed " << s;
  }
}

TEST(FaAppend, HandTraced) {
  Tape tape;
  const Mlp id = identity_mlp(1);
  const FaState s0 = manual_state(0, {{1, 3}, {2}});
  const FaState s1 = fa_layer_append(tape, s0, id);
  EXPECT_EQ(s1.tap.item(), 3.0);
  const FaState s2 = fa_layer_append(tape, s1, id);
  EXPECT_EQ(s2.tap.item(), 3.0);
  EXPECT_EQ(s2.tap_sources, (SlotSet{0, 1, 2}));
}

TEST(FaAppend, TerminalLayerPoolsOnly) {
  Tape tape;
  const FaState s = fa_layer_append(tape, manual_state(0, {{4, -1, 2}}), identity_mlp(1));
  EXPECT_EQ(s.tap.item(), 4.0);
  EXPECT_TRUE(s.groups.empty());
  EXPECT_EQ(code_of([&] { fa_layer_append(tape, s, identity_mlp(1)); }), ErrorCode::EmptyGroup);
}

TEST(FaCoordConcat, InputLayout) {
  Tape tape;
  FaState st = manual_state(1, {{0}}, {5});
  st.coords[0] = Tensor::from(1, 3, {0.1, 0, 0});
  const FaState out = fa_layer_coordconcat(tape, st, identity_mlp(4));
  ASSERT_EQ(out.tap.cols(), 4u);
  EXPECT_EQ(std::vector<double>(out.tap.values().begin(), out.tap.values().end()),
            (std::vector<double>{0.1, 0, 0, 5}));
}

TEST(FaCoordConcat, NewInformationFraction) {
  DpnConfig cfg = small_config(2);
  cfg.scheme = Scheme::CoordConcat;
  cfg.mlp_widths = {{64}, {64}};
  const std::size_t in = fa_input_dim(cfg, 4, 1);
  EXPECT_EQ(in, 67u);
  EXPECT_NEAR(3.0 / double(in), 0.0448, 1e-4);
}

TEST(FaFeatConcat, HandTraced) {
  Tape tape;
  const FaState s1 = fa_layer_featconcat(tape, manual_state(0, {{1, 3}, {2}}), identity_mlp(1));
  EXPECT_EQ(s1.tap.item(), 3.0);
  const Mlp squeeze({dense(2, 1, {1, 1}, Activation::Identity)});
  const FaState s2 = fa_layer_featconcat(tape, s1, squeeze);
  EXPECT_EQ(s2.tap.item(), 5.0);
}

TEST(FaFeatConcat, PermutationWithinGroupInvariant) {
  Tape tape;
  const Mlp id = identity_mlp(1);
  const FaState a = fa_layer_featconcat(tape, manual_state(0, {{1, 3, -2}, {2}}), id);
  const FaState b = fa_layer_featconcat(tape, manual_state(0, {{-2, 1, 3}, {2}}), id);
  EXPECT_EQ(a.tap.item(), b.tap.item());
  const Mlp squeeze({dense(2, 1, {1, 1}, Activation::Identity)});
  EXPECT_EQ(fa_layer_featconcat(tape, a, squeeze).tap.item(),
            fa_layer_featconcat(tape, b, squeeze).tap.item());
}

class SchemeTest : public ::testing::TestWithParam<Scheme> {};

TEST_P(SchemeTest, MatchesLoopOracle) {
  const CheckResult r = check_fa_oracle(GetParam(), 100, 31);
  EXPECT_TRUE(r.passed) << r.detail;
  EXPECT_LE(r.metric, kFaOracleTolerance);
}

TEST_P(SchemeTest, PermutationInvariant) {
  const CheckResult r = check_permutation_invariance(GetParam(), 5);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST_P(SchemeTest, EndToEndGradient) {
  const CheckResult r = check_end_to_end_gradient(GetParam(), 4, 9);
  EXPECT_TRUE(r.passed) << r.detail;
  EXPECT_LT(r.metric, kEndToEndGradTolerance);
}

TEST_P(SchemeTest, PrincipleChecksOnRandomCloud) {
  DpnConfig cfg = small_config(4);
  cfg.scheme = GetParam();
  const PointCloud cloud = random_cloud(2048, 12);
  EXPECT_TRUE(check_principle1(cfg, cloud, 3).passed);
  const CheckResult p2 = check_principle2(cfg, cloud, 3);
  EXPECT_TRUE(p2.passed) << p2.detail;
}

TEST_P(SchemeTest, TapProvenanceIsCumulative) {
  DpnConfig cfg = small_config(4);
  cfg.scheme = GetParam();
  Rng rng(4);
  const PointCloud cloud = random_cloud(1024, 13);
  const DpnParams params = DpnParams::init(cfg, 4, rng);
  Tape tape(false);
  const DpnOutput out = forward(tape, cloud, cfg, params, 7);
  ASSERT_EQ(out.tap_sources.size(), 4u);
  std::vector<std::size_t> counts;
  for (const SlotSet& s : out.tap_sources) counts.push_back(s.size());
  EXPECT_EQ(counts, (std::vector<std::size_t>{6, 12, 18, 24}));
}

INSTANTIATE_TEST_SUITE_P(AllSchemes, SchemeTest,
                         ::testing::Values(Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat),
                         [](const auto& info) { return std::string(to_string(info.param)); });

TEST(Forward, SingleLayerSchemesAgree) {
  const CheckResult r = check_single_layer_equivalence(3);
  EXPECT_TRUE(r.passed) << r.detail;
}

TEST(Forward, SingleLayerIsPooledMlpOfAllNeighbors) {
  DpnConfig cfg = small_config(1);
  Rng rng(2);
  const PointCloud cloud = random_cloud(1024, 3);
  const DpnParams params = DpnParams::init(cfg, 4, rng);
  Tape tape(false);
  const DpnOutput out = forward(tape, cloud, cfg, params, 5);
  const auto inputs = oracle::slot_inputs(out.sg);
  const oracle::DenseMlp mlp = oracle::to_dense(params.layers[0]);
  for (std::size_t s = 0; s < inputs.size(); ++s) {
    std::vector<double> best;
    for (const auto& slot : inputs[s]) {
      const auto y = oracle::apply_mlp(mlp, slot);
      if (best.empty()) best = y;
      for (std::size_t c = 0; c < y.size(); ++c) best[c] = std::max(best[c], y[c]);
    }
    for (std::size_t c = 0; c < best.size(); ++c) EXPECT_NEAR(out.taps[0].at(s, c), best[c], 1e-12);
  }
}

TEST(Forward, PaperScaleShapes) {
  DpnConfig cfg = DpnConfig::paper_preset();
  Rng rng(1);
  const PointCloud cloud = random_cloud(16384, 1);
  const DpnParams params = DpnParams::init(cfg, 4, rng);
  Tape tape(false);
  const DpnOutput out = forward(tape, cloud, cfg, params, 1);
  ASSERT_EQ(out.taps.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_EQ(out.taps[l].rows(), 4096u);
    EXPECT_EQ(out.taps[l].cols(), cfg.tap_width(l));
  }
  std::vector<std::size_t> counts;
  for (const SlotSet& s : out.tap_sources) counts.push_back(s.size());
  EXPECT_EQ(counts, (std::vector<std::size_t>{6, 12, 18, 24}));
}

TEST(Forward, DeterministicUnderSeed) {
  DpnConfig cfg = small_config(3);
  Rng rng(6);
  const PointCloud cloud = random_cloud(800, 4);
  const DpnParams params = DpnParams::init(cfg, 4, rng);
  Tape t1(false), t2(false);
  const DpnOutput a = forward(t1, cloud, cfg, params, 11);
  const DpnOutput b = forward(t2, cloud, cfg, params, 11, 3);
  for (std::size_t l = 0; l < a.taps.size(); ++l)
    EXPECT_TRUE(std::equal(a.taps[l].values().begin(), a.taps[l].values().end(),
                           b.taps[l].values().begin()));
}

TEST(Baseline, FourLevelsFourCalls) {
  const DpnConfig cfg = small_config(4);
  const SaConfig sa = SaConfig::scale_oriented(cfg);
  ASSERT_EQ(sa.levels.size(), 4u);
  for (std::size_t l = 1; l < 4; ++l) {
    EXPECT_GT(sa.levels[l].radius_m, sa.levels[l - 1].radius_m);
    EXPECT_LT(sa.levels[l].num_seeds, sa.levels[l - 1].num_seeds);
  }
  Rng rng(3);
  const SaParams params = SaParams::init(sa, 4, rng);
  Tape tape(false);
  const SaOutput out = baseline_sa_stack(tape, random_cloud(2048, 2), sa, params, 1);
  EXPECT_EQ(out.counters.fps_calls, 4u);
  EXPECT_EQ(out.counters.ball_query_calls, 4u);
  ASSERT_EQ(out.features.size(), 4u);
  for (std::size_t l = 0; l < 4; ++l) EXPECT_EQ(out.features[l].rows(), sa.levels[l].num_seeds);
}

TEST(Baseline, RejectsNonIncreasingRadii) {
  SaConfig sa = SaConfig::scale_oriented(small_config(2));
  sa.levels[1].radius_m = sa.levels[0].radius_m;
  EXPECT_EQ(code_of([&] { sa.validate(); }), ErrorCode::Validation);
}

TEST(Mutation, DropFusionIsCaught) {
  dpn::testing::set_mutation(dpn::testing::Mutation::DropFusion);
  const CheckResult r = check_fa_oracle(Scheme::FeatConcat, 20, 1);
  dpn::testing::set_mutation(dpn::testing::Mutation::None);
  EXPECT_FALSE(r.passed);
}
