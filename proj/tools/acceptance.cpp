// Prints one PASS/FAIL line per acceptance criterion and exits nonzero if any fail.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "dpn/bench.hpp"
#include "dpn/checks.hpp"
#include "dpn/config.hpp"
#include "dpn/heads.hpp"
#include "dpn/rng.hpp"
#include "dpn/train.hpp"

using namespace dpn;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
  bool passed = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

Outcome sampling_oracles() {
  const auto t0 = Clock::now();
  const CheckResult fps = check_fps_oracle(1000, 1);
  const CheckResult bq = check_ball_query_oracle(1000, 2);
  const double secs = seconds_since(t0);
  return {fps.passed && bq.passed && secs < 60.0,
          "fps " + fps.detail + "; ball query " + bq.detail + "; " + fmt("%.2f s", secs)};
}

Outcome fa_oracles() {
  Outcome o{true, ""};
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat}) {
    const CheckResult r = check_fa_oracle(s, 200, 3);
    o.passed = o.passed && r.passed && r.metric <= kFaOracleTolerance;
    o.detail += std::string(to_string(s)) + " max err " + fmt("%.2e", r.metric) + "; ";
  }
  o.detail += "200 instances each, tolerance 1e-12";
  return o;
}

Outcome gradients() {
  Outcome o{true, ""};
  double worst_op = 0;
  std::size_t ops = 0;
  for (const CheckResult& r : check_op_gradients(100, 4)) {
    o.passed = o.passed && r.passed && r.metric < kOpGradTolerance;
    worst_op = std::max(worst_op, r.metric);
    ++ops;
  }
  double worst_e2e = 0;
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat}) {
    const CheckResult r = check_end_to_end_gradient(s, 8, 5);
    o.passed = o.passed && r.passed && r.metric < kEndToEndGradTolerance;
    worst_e2e = std::max(worst_e2e, r.metric);
  }
  o.detail = std::to_string(ops) + " ops worst rel err " + fmt("%.2e", worst_op) +
             " (< 1e-6); L=3 end-to-end worst " + fmt("%.2e", worst_e2e) + " (< 1e-4); h = 1e-5";
  return o;
}

PointCloud paper_scale_cloud(const RunConfig& cfg) {
  const SyntheticScene scene = generate_scene(cfg.scene, derive_seed(cfg.seed(), "acceptance.scene"));
  return make_batch(scene, cfg.train.num_points, cfg.seed()).cloud;
}

Outcome principle1() {
  const RunConfig cfg = paper_preset();
  Outcome o{true, ""};
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat}) {
    DpnConfig b = cfg.detector.backbone;
    b.scheme = s;
    const CheckResult r = check_principle1(b, paper_scale_cloud(cfg), 6);
    o.passed = o.passed && r.passed;
    o.detail += std::string(to_string(s)) + ": " + r.detail + "; ";
  }
  const CheckResult single = check_single_radius_config();
  o.passed = o.passed && single.passed;
  o.detail += single.detail;
  return o;
}

Outcome principle2() {
  const RunConfig cfg = paper_preset();
  Outcome o{true, ""};
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat}) {
    DpnConfig b = cfg.detector.backbone;
    b.scheme = s;
    const CheckResult r = check_principle2(b, paper_scale_cloud(cfg), 7);
    o.passed = o.passed && r.passed && r.detail.find("per tap 6,12,18,24 ") != std::string::npos;
    o.detail += std::string(to_string(s)) + ": " + r.detail + "; ";
  }
  o.detail += "paper preset K=24, L=4";
  return o;
}

Outcome single_sampling() {
  DpnConfig cfg = paper_preset().detector.backbone;
  const std::vector<PointCloud> workload{random_cloud(16384, 8)};
  BenchOptions opts;
  opts.reps = 20;
  opts.warmup = 2;
  opts.seed = 8;
  const auto [dpn, sa] = run_bench(workload, cfg, SaConfig::scale_oriented(cfg), opts);
  const bool counts = dpn.counters == SamplingCounters{1, 1} && sa.counters == SamplingCounters{4, 4};
  const bool faster = dpn.sampling.median_us < sa.sampling.median_us;
  std::ostringstream os;
  os << "calls dpointnet (" << dpn.counters.fps_calls << "," << dpn.counters.ball_query_calls
     << ") vs baseline (" << sa.counters.fps_calls << "," << sa.counters.ball_query_calls
     << "); median sampling " << fmt("%.0f", dpn.sampling.median_us) << " us vs "
     << fmt("%.0f", sa.sampling.median_us) << " us (ratio "
     << fmt("%.3f", dpn.sampling.median_us / sa.sampling.median_us) << "), " << dpn.sampling.reps
     << " reps, N=16384 seeds=4096 K=24 L=4";
  return {counts && faster && dpn.sampling.reps >= 20, os.str()};
}

Outcome aux_neutrality() {
  const CheckResult r = check_aux_neutrality(9);
  return {r.passed, r.detail};
}

Outcome training() {
  const RunConfig cfg = desk_preset();
  const auto t0 = Clock::now();
  const auto scenes = make_scenes(cfg.scene, 50, cfg.seed(), env_thread_cap());
  std::vector<TrainResult> runs;
  for (int i = 0; i < 2; ++i) {
    Detector det = Detector::init(cfg.resolved_detector(), 4, cfg.seed());
    runs.push_back(train_detector(det, scenes, cfg.train));
  }
  const double secs = seconds_since(t0) / 2;
  const TrainResult& r = runs[0];
  bool identical = runs[0].steps.size() == runs[1].steps.size() &&
                   runs[0].final_dataset_loss == runs[1].final_dataset_loss;
  for (std::size_t i = 0; identical && i < r.steps.size(); ++i)
    identical = runs[0].steps[i].loss.total == runs[1].steps[i].loss.total;
  const double reduction = 1.0 - r.final_dataset_loss / r.initial_dataset_loss;
  std::ostringstream os;
  os << r.steps.size() << " steps on 50 scenes; total loss " << fmt("%.3f", r.initial_dataset_loss)
     << " -> " << fmt("%.3f", r.final_dataset_loss) << " (" << fmt("%.1f", 100 * reduction)
     << "% reduction); repeat run " << (identical ? "identical" : "DIFFERENT") << "; "
     << fmt("%.1f s", secs) << " per run";
  return {r.steps.size() == 200 && reduction >= 0.5 && identical && secs < 600, os.str()};
}

Outcome sweeps() {
  const RunConfig base = desk_preset();
  const std::size_t threads = env_thread_cap();
  Outcome o{true, ""};

  const auto radius_values = default_sweep_values(SweepAxis::Radius);
  const auto radius = run_sweep(base, SweepAxis::Radius, radius_values, threads);
  std::vector<double> radii;
  for (const SweepRow& r : radius) radii.push_back(r.detector.backbone.radius_m);
  const bool radius_ok = radii == std::vector<double>{1.0, 2.0, 3.0, 4.0, 5.0};
  o.detail += "radius rows {";
  for (std::size_t i = 0; i < radii.size(); ++i) o.detail += (i ? "," : "") + fmt("%.1f", radii[i]);
  o.detail += "}; ";

  const auto k_values = default_sweep_values(SweepAxis::K);
  const auto k = run_sweep(base, SweepAxis::K, k_values, threads);
  bool k_ok = k.size() == 3;
  o.detail += "K rows {";
  for (std::size_t i = 0; i < k.size(); ++i) {
    k_ok = k_ok && k[i].detector.backbone.k_neighbors == std::vector<std::size_t>{16, 24, 32}[i];
    if (i > 0) k_ok = k_ok && k[i].memory_bytes > k[i - 1].memory_bytes;
    o.detail += (i ? "," : "") + std::to_string(k[i].detector.backbone.k_neighbors) + ":" +
                std::to_string(k[i].memory_bytes) + "B";
  }
  o.detail += "}; ";

  const auto scheme_values = default_sweep_values(SweepAxis::Scheme);
  const auto scheme = run_sweep(base, SweepAxis::Scheme, scheme_values, threads);
  bool scheme_ok = scheme.size() == 3;
  o.detail += "scheme rows {";
  for (std::size_t i = 0; i < scheme.size(); ++i) {
    scheme_ok = scheme_ok && scheme[i].value == scheme_values[i] && scheme[i].converged;
    o.detail += (i ? "," : "") + scheme[i].value + ":" + fmt("%.3f", scheme[i].final_loss);
  }
  o.detail += "}";
  o.passed = radius_ok && k_ok && scheme_ok;
  return o;
}

Outcome loss_units() {
  Tape tape(false);
  const std::vector<std::uint8_t> pos{1};
  const std::vector<std::uint8_t> one{1};
  const double focal = focal_loss(tape, Tensor::scalar(0.0), pos, 0.25, 2.0).item();
  const double bce = bce_loss(tape, Tensor::scalar(0.0), pos).item();
  const double half = smooth_l1(tape, Tensor::scalar(0.5), Tensor::scalar(0.0), one, 1.0).item();
  const double two = smooth_l1(tape, Tensor::scalar(2.0), Tensor::scalar(0.0), one, 1.0).item();
  const double zero = smooth_l1(tape, Tensor::scalar(0.0), Tensor::scalar(0.0), one, 1.0).item();
  const double ln2 = std::log(2.0);
  const bool ok = std::abs(focal - 0.0625 * ln2) <= 1e-9 && std::abs(bce - ln2) <= 1e-9 &&
                  std::abs(half - 0.125) <= 1e-9 && std::abs(two - 1.5) <= 1e-9 && zero == 0.0;
  std::ostringstream os;
  os << "focal " << fmt("%.12f", focal) << ", bce " << fmt("%.12f", bce) << ", smooth-L1(0.5) "
     << fmt("%.6f", half) << ", smooth-L1(2) " << fmt("%.6f", two) << ", smooth-L1(0) " << zero;
  return {ok, os.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle equivalence, sampling", sampling_oracles},
      {"oracle equivalence, FA schemes", fa_oracles},
      {"gradient integrity", gradients},
      {"principle 1, single radius", principle1},
      {"principle 2, growing fused density", principle2},
      {"single-sampling efficiency", single_sampling},
      {"aux-head neutrality", aux_neutrality},
      {"toy training convergence", training},
      {"ablation sweep grids", sweeps},
      {"loss unit values", loss_units},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += o.passed ? 0 : 1;
    std::printf("%s criterion %zu (%s): %s\n", o.passed ? "PASS" : "FAIL", i + 1,
                criteria[i].first.c_str(), o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
