#include "dpn/bench.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"
#include "dpn/sampling.hpp"

namespace dpn {
namespace {

double quantile(const std::vector<double>& sorted, double q) {
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (pos - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

std::string format_double(double v) {
  if (!std::isfinite(v)) return "nan";
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ";" : "") + std::to_string(v[i]);
  return s;
}

}  // namespace

PhaseStats summarize_us(std::span<const double> seconds) {
  require(!seconds.empty(), ErrorCode::InvalidArgument, "summarize: no samples");
  std::vector<double> us;
  us.reserve(seconds.size());
  for (double s : seconds) us.push_back(s * 1e6);
  std::sort(us.begin(), us.end());
  PhaseStats st;
  st.reps = us.size();
  st.median_us = quantile(us, 0.5);
  st.q1_us = quantile(us, 0.25);
  st.q3_us = quantile(us, 0.75);
  st.iqr_us = st.q3_us - st.q1_us;
  return st;
}

void to_json(nlohmann::json& j, const PhaseStats& s) {
  j = nlohmann::json{{"median_us", s.median_us}, {"q1_us", s.q1_us}, {"q3_us", s.q3_us},
                     {"iqr_us", s.iqr_us}, {"reps", s.reps}};
}

void to_json(nlohmann::json& j, const BenchRecord& r) {
  j = nlohmann::json{{"schema_version", kBenchSchemaVersion},
                     {"stack", r.stack},
                     {"config", r.config},
                     {"fps_calls", r.counters.fps_calls},
                     {"ball_query_calls", r.counters.ball_query_calls},
                     {"sampling", r.sampling},
                     {"grouping", r.grouping},
                     {"compute", r.compute},
                     {"memory_bytes", r.memory_bytes},
                     {"reps", r.reps},
                     {"warmup", r.warmup},
                     {"include_compute", r.include_compute}};
}

std::size_t dpn_memory_bytes(const PointCloud& cloud, const DpnConfig& cfg,
                             const DpnParams& params, std::uint64_t seed) {
  Tape tape(false);
  const DpnOutput out = forward(tape, cloud, cfg, params, seed);
  std::size_t bytes = tape.bytes_allocated();
  for (const Tensor& g : out.sg.group_inputs) bytes += g.size() * sizeof(double);
  return bytes;
}

std::size_t sa_memory_bytes(const PointCloud& cloud, const SaConfig& cfg, const SaParams& params,
                            std::uint64_t seed) {
  Tape tape(false);
  baseline_sa_stack(tape, cloud, cfg, params, seed);
  return tape.bytes_allocated();
}

std::pair<BenchRecord, BenchRecord> run_bench(std::span<const PointCloud> workload,
                                              const DpnConfig& dpn_cfg, const SaConfig& sa_cfg,
                                              const BenchOptions& opts) {
  require(!workload.empty(), ErrorCode::InvalidArgument, "run_bench: empty workload");
  require(opts.reps >= 5, ErrorCode::InvalidArgument, "run_bench: need at least 5 repetitions");
  dpn_cfg.validate();
  sa_cfg.validate();
  const std::size_t input_dim = 3 + workload.front().feature_dim();
  Rng rng(opts.seed);
  Rng dpn_rng = rng.stream("bench.dpn_params");
  Rng sa_rng = rng.stream("bench.sa_params");
  const DpnParams dpn_params = DpnParams::init(dpn_cfg, input_dim, dpn_rng);
  const SaParams sa_params = SaParams::init(sa_cfg, input_dim, sa_rng);

  BenchRecord dpn, sa;
  dpn.stack = "dpointnet";
  sa.stack = "sa_baseline";
  dpn.config = dpn_cfg;
  sa.config = sa_cfg;
  for (BenchRecord* r : {&dpn, &sa}) {
    r->reps = opts.reps;
    r->warmup = opts.warmup;
    r->include_compute = opts.include_compute;
  }
  dpn.memory_bytes = dpn_memory_bytes(workload.front(), dpn_cfg, dpn_params, opts.seed);
  sa.memory_bytes = sa_memory_bytes(workload.front(), sa_cfg, sa_params, opts.seed);

  std::vector<double> dpn_s, dpn_g, dpn_c, sa_s, sa_g, sa_c;
  for (std::size_t rep = 0; rep < opts.warmup + opts.reps; ++rep) {
    const bool timed = rep >= opts.warmup;
    const PointCloud& cloud = workload[rep % workload.size()];
    const std::uint64_t seed = derive_seed(opts.seed, static_cast<std::uint64_t>(rep));

    SamplingCounters dc, sc;
    double ds = 0, dg = 0, dcomp = 0, ss = 0, sg = 0, scomp = 0;
    if (opts.include_compute) {
      Tape tape(false);
      const DpnOutput out = forward(tape, cloud, dpn_cfg, dpn_params, seed);
      ds = out.sg.sampling_seconds;
      dg = out.sg.grouping_seconds;
      dcomp = out.fa_seconds;
      dc = out.sg.counters;
      Tape sa_tape(false);
      const SaOutput so = baseline_sa_stack(sa_tape, cloud, sa_cfg, sa_params, seed);
      ss = so.sampling_seconds;
      sg = so.grouping_seconds;
      scomp = so.compute_seconds;
      sc = so.counters;
    } else {
      const SgResult r = sg_layer(cloud, dpn_cfg, seed);
      ds = r.sampling_seconds;
      dg = r.grouping_seconds;
      dc = r.counters;
      const SaOutput so = baseline_sa_sampling(cloud, sa_cfg, seed);
      ss = so.sampling_seconds;
      sc = so.counters;
    }
    dpn.counters = dc;
    sa.counters = sc;
    if (!timed) continue;
    dpn_s.push_back(ds);
    dpn_g.push_back(dg);
    dpn_c.push_back(dcomp);
    sa_s.push_back(ss);
    sa_g.push_back(sg);
    sa_c.push_back(scomp);
  }
  dpn.sampling = summarize_us(dpn_s);
  dpn.grouping = summarize_us(dpn_g);
  dpn.compute = summarize_us(dpn_c);
  sa.sampling = summarize_us(sa_s);
  sa.grouping = summarize_us(sa_g);
  sa.compute = summarize_us(sa_c);
  return {std::move(dpn), std::move(sa)};
}

PointCloud random_cloud(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Vec3> xyz(n);
  std::vector<double> intensity(n);
  for (std::size_t i = 0; i < n; ++i) {
    xyz[i] = {rng.uniform(-40.0, 40.0), rng.uniform(-40.0, 40.0), rng.uniform(-2.0, 2.0)};
    intensity[i] = rng.uniform();
  }
  return PointCloud(std::move(xyz), std::move(intensity), 1);
}

std::string_view to_string(SweepAxis a) noexcept {
  switch (a) {
    case SweepAxis::Scheme: return "scheme";
    case SweepAxis::HeadLayer: return "head_layer";
    case SweepAxis::Radius: return "radius";
    case SweepAxis::K: return "k";
  }
  return "unknown";
}

SweepAxis parse_sweep_axis(std::string_view s) {
  if (s == "scheme") return SweepAxis::Scheme;
  if (s == "head_layer") return SweepAxis::HeadLayer;
  if (s == "radius") return SweepAxis::Radius;
  if (s == "k") return SweepAxis::K;
  fail(ErrorCode::Validation,
       "unknown sweep axis '" + std::string(s) + "' (expected scheme|head_layer|radius|k)");
}

std::vector<std::string> default_sweep_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::Scheme: return {"a", "b", "c"};
    case SweepAxis::HeadLayer: return {"2", "3", "4"};
    case SweepAxis::Radius: return {"1.0", "2.0", "3.0", "4.0", "5.0"};
    case SweepAxis::K: return {"16", "24", "32"};
  }
  return {};
}

RunConfig apply_sweep_value(const RunConfig& base, SweepAxis axis, std::string_view value) {
  RunConfig c = base;
  DpnConfig& b = c.detector.backbone;
  const std::string v(value);
  try {
    switch (axis) {
      case SweepAxis::Scheme:
        b.scheme = parse_scheme(v);
        break;
      case SweepAxis::HeadLayer: {
        const long layer = std::stol(v);
        require(layer >= 1 && layer <= static_cast<long>(b.num_fa_layers), ErrorCode::Validation,
                "sweep: head_layer must be in 1..num_fa_layers");
        c.detector.head_tap = static_cast<int>(layer - 1);
        break;
      }
      case SweepAxis::Radius:
        b.radius_m = std::stod(v);
        break;
      case SweepAxis::K:
        b.k_neighbors = static_cast<std::size_t>(std::stoul(v));
        require(b.k_neighbors >= b.num_fa_layers, ErrorCode::Validation,
                "sweep: k must be at least num_fa_layers");
        b.group_sizes = DpnConfig::equal_partition(b.k_neighbors, b.num_fa_layers);
        break;
    }
  } catch (const std::logic_error&) {
    fail(ErrorCode::Validation, "sweep: bad value '" + v + "' for axis " +
                                    std::string(to_string(axis)));
  }
  c.validate();
  return c;
}

std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis,
                                std::span<const std::string> values, std::size_t threads) {
  require(!values.empty(), ErrorCode::InvalidArgument, "sweep: no values");
  std::vector<RunConfig> configs;
  for (const std::string& v : values) configs.push_back(apply_sweep_value(base, axis, v));

  const std::uint64_t seed = base.seed();
  const auto train_scenes = make_scenes(base.scene, base.sweep.scenes, seed, threads);
  const auto eval_scenes =
      make_scenes(base.scene, base.sweep.eval_scenes, derive_seed(seed, "heldout"), threads);
  const std::size_t input_dim = 3 + train_scenes.front().cloud.feature_dim();

  std::vector<SweepRow> rows(values.size());
  parallel_for(values.size(), threads, [&](std::size_t i) {
    const RunConfig& rc = configs[i];
    SweepRow& row = rows[i];
    row.axis = axis;
    row.value = values[i];
    row.detector = rc.resolved_detector();
    Detector det = Detector::init(row.detector, input_dim, seed);
    TrainOptions opts = rc.train;
    opts.epochs = rc.sweep.epochs;
    try {
      const TrainResult tr = train_detector(det, train_scenes, opts);
      row.initial_loss = tr.initial_dataset_loss;
      row.final_loss = tr.final_dataset_loss;
      row.converged = std::isfinite(row.final_loss) && row.final_loss < row.initial_loss;
      if (!row.converged) row.note = "loss did not decrease";
      row.heldout = evaluate(det, eval_scenes, opts.num_points, seed);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Numeric) throw;
      row.initial_loss = row.final_loss = std::numeric_limits<double>::quiet_NaN();
      row.converged = false;
      row.note = e.what();
    }
    const SceneBatch batch = make_batch(eval_scenes.front(), opts.num_points, seed);
    row.memory_bytes =
        dpn_memory_bytes(batch.cloud, row.detector.backbone, det.backbone, batch.sampling_seed);
  });

  // Timing after training so that no other worker competes for the core.
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const SceneBatch batch = make_batch(eval_scenes.front(), configs[i].train.num_points, seed);
    std::vector<double> samples;
    for (std::size_t rep = 0; rep < base.sweep.bench_reps + 1; ++rep) {
      const SgResult sg = sg_layer(batch.cloud, rows[i].detector.backbone, batch.sampling_seed);
      if (rep > 0) samples.push_back(sg.sampling_seconds);
    }
    rows[i].sampling = summarize_us(samples);
  }
  return rows;
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

void write_sweep_csv(std::ostream& os, std::span<const SweepRow> rows) {
  os << "axis,value,scheme,num_fa_layers,head_layer,radius_m,k_neighbors,group_sizes,"
        "num_seeds,initial_loss,final_loss,converged,fg_accuracy,mean_reg_error,"
        "memory_bytes,sampling_median_us,sampling_iqr_us,note\r\n";
  for (const SweepRow& r : rows) {
    const DpnConfig& b = r.detector.backbone;
    const std::vector<std::string> fields{
        std::string(to_string(r.axis)),
        r.value,
        std::string(to_string(b.scheme)),
        std::to_string(b.num_fa_layers),
        std::to_string(r.detector.top_tap() + 1),
        format_double(b.radius_m),
        std::to_string(b.k_neighbors),
        join_sizes(b.group_sizes),
        std::to_string(b.num_seeds),
        format_double(r.initial_loss),
        format_double(r.final_loss),
        r.converged ? "1" : "0",
        format_double(r.heldout.foreground_accuracy),
        format_double(r.heldout.mean_regression_error),
        std::to_string(r.memory_bytes),
        format_double(r.sampling.median_us),
        format_double(r.sampling.iqr_us),
        r.note};
    for (std::size_t i = 0; i < fields.size(); ++i) os << (i ? "," : "") << csv_field(fields[i]);
    os << "\r\n";
  }
}

}  // namespace dpn
