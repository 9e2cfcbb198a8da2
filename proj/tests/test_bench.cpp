#include <gtest/gtest.h>

#include <sstream>
#include <string>
#include <vector>

#include "dpn/bench.hpp"
#include "dpn/error.hpp"
#include "dpn/rng.hpp"

using namespace dpn;

namespace {

DpnConfig bench_config(std::size_t layers, std::size_t k = 24) {
  DpnConfig c;
  c.num_seeds = 256;
  c.k_neighbors = k;
  c.num_fa_layers = layers;
  c.group_sizes = DpnConfig::equal_partition(k, layers);
  c.mlp_widths.assign(layers, {8});
  return c;
}

}  // namespace

TEST(Summary, Quartiles) {
  const std::vector<double> secs{5e-6, 1e-6, 4e-6, 2e-6, 3e-6};
  const PhaseStats s = summarize_us(secs);
  EXPECT_NEAR(s.median_us, 3.0, 1e-9);
  EXPECT_NEAR(s.q1_us, 2.0, 1e-9);
  EXPECT_NEAR(s.q3_us, 4.0, 1e-9);
  EXPECT_NEAR(s.iqr_us, 2.0, 1e-9);
  EXPECT_EQ(s.reps, 5u);
  EXPECT_THROW(summarize_us({}), Error);
}

TEST(Summary, EvenCountInterpolates) {
  const std::vector<double> secs{1e-6, 2e-6, 3e-6, 4e-6};
  EXPECT_NEAR(summarize_us(secs).median_us, 2.5, 1e-9);
}

TEST(Csv, FieldQuoting) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
}

TEST(Sweep, AxesAndGrids) {
  EXPECT_EQ(parse_sweep_axis("radius"), SweepAxis::Radius);
  EXPECT_EQ(to_string(SweepAxis::HeadLayer), "head_layer");
  EXPECT_THROW(parse_sweep_axis("depth"), Error);
  EXPECT_EQ(default_sweep_values(SweepAxis::Radius),
            (std::vector<std::string>{"1.0", "2.0", "3.0", "4.0", "5.0"}));
  EXPECT_EQ(default_sweep_values(SweepAxis::K), (std::vector<std::string>{"16", "24", "32"}));
  EXPECT_EQ(default_sweep_values(SweepAxis::Scheme), (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_EQ(default_sweep_values(SweepAxis::HeadLayer), (std::vector<std::string>{"2", "3", "4"}));
}

TEST(Sweep, ApplyValue) {
  const RunConfig base = desk_preset();
  EXPECT_EQ(apply_sweep_value(base, SweepAxis::Radius, "2.0").detector.backbone.radius_m, 2.0);
  const RunConfig k = apply_sweep_value(base, SweepAxis::K, "32");
  EXPECT_EQ(k.detector.backbone.group_sizes, (std::vector<std::size_t>{8, 8, 8, 8}));
  EXPECT_EQ(apply_sweep_value(base, SweepAxis::Scheme, "b").detector.backbone.scheme,
            Scheme::CoordConcat);
  const RunConfig h = apply_sweep_value(base, SweepAxis::HeadLayer, "2");
  EXPECT_EQ(h.resolved_detector().top_tap(), 1u);
  EXPECT_NO_THROW(h.validate());
  EXPECT_THROW(apply_sweep_value(base, SweepAxis::Radius, "-1"), Error);
  EXPECT_THROW(apply_sweep_value(base, SweepAxis::HeadLayer, "9"), Error);
}

TEST(Sweep, CsvLayout) {
  SweepRow row;
  row.axis = SweepAxis::Radius;
  row.value = "1.0";
  row.detector = desk_preset().detector;
  row.initial_loss = 10;
  row.final_loss = 5;
  row.converged = true;
  row.note = "ok, fine";
  std::ostringstream os;
  const std::vector<SweepRow> rows{row};
  write_sweep_csv(os, rows);
  const std::string csv = os.str();
  ASSERT_NE(csv.find("\r\n"), std::string::npos);
  const std::string header = csv.substr(0, csv.find("\r\n"));
  EXPECT_EQ(header.rfind("axis,value,", 0), 0u);
  EXPECT_NE(header.find("memory_bytes"), std::string::npos);
  EXPECT_NE(csv.find("\"ok, fine\""), std::string::npos);
}

TEST(Memory, StrictlyIncreasingInK) {
  const PointCloud cloud = random_cloud(4096, 3);
  std::size_t prev = 0;
  for (std::size_t k : {16u, 24u, 32u}) {
    const DpnConfig cfg = bench_config(4, k);
    Rng rng(1);
    const DpnParams params = DpnParams::init(cfg, 4, rng);
    const std::size_t bytes = dpn_memory_bytes(cloud, cfg, params, 1);
    EXPECT_GT(bytes, prev) << "k=" << k;
    prev = bytes;
  }
}

TEST(Bench, CountersAtFourLayers) {
  const std::vector<PointCloud> workload{random_cloud(4096, 1)};
  BenchOptions opts;
  opts.reps = 5;
  opts.warmup = 1;
  const DpnConfig cfg = bench_config(4);
  const auto [dpn, sa] = run_bench(workload, cfg, SaConfig::scale_oriented(cfg), opts);
  EXPECT_EQ(dpn.counters, (SamplingCounters{1, 1}));
  EXPECT_EQ(sa.counters, (SamplingCounters{4, 4}));
  EXPECT_EQ(dpn.sampling.reps, 5u);
  EXPECT_GT(dpn.memory_bytes, 0u);
  const nlohmann::json j = dpn;
  EXPECT_EQ(j.at("stack"), "dpointnet");
}

TEST(Bench, SingleLayerCountsEqual) {
  const std::vector<PointCloud> workload{random_cloud(2048, 2)};
  BenchOptions opts;
  opts.reps = 5;
  const DpnConfig cfg = bench_config(1);
  const auto [dpn, sa] = run_bench(workload, cfg, SaConfig::scale_oriented(cfg), opts);
  EXPECT_EQ(dpn.counters, sa.counters);
  EXPECT_EQ(dpn.counters, (SamplingCounters{1, 1}));
}

TEST(Bench, RejectsTooFewReps) {
  const std::vector<PointCloud> workload{random_cloud(512, 2)};
  BenchOptions opts;
  opts.reps = 4;
  const DpnConfig cfg = bench_config(2);
  EXPECT_THROW(run_bench(workload, cfg, SaConfig::scale_oriented(cfg), opts), Error);
  EXPECT_THROW(run_bench({}, cfg, SaConfig::scale_oriented(cfg), BenchOptions{}), Error);
}

TEST(Bench, IncludeComputeTimesAllPhases) {
  const std::vector<PointCloud> workload{random_cloud(1024, 4)};
  BenchOptions opts;
  opts.reps = 5;
  opts.include_compute = true;
  const DpnConfig cfg = bench_config(2);
  const auto [dpn, sa] = run_bench(workload, cfg, SaConfig::scale_oriented(cfg), opts);
  EXPECT_GT(dpn.compute.median_us, 0.0);
  EXPECT_GT(sa.compute.median_us, 0.0);
  EXPECT_TRUE(dpn.include_compute);
}
