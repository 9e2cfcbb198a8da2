#include "dpn/checks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numbers>
#include <set>
#include <sstream>

#include "dpn/error.hpp"
#include "dpn/heads.hpp"
#include "dpn/model.hpp"
#include "dpn/oracle.hpp"
#include "dpn/rng.hpp"
#include "dpn/sampling.hpp"
#include "dpn/train.hpp"

namespace dpn {
namespace {

using Clock = std::chrono::steady_clock;

CheckResult timed(std::string suite, std::string name, const std::function<void(CheckResult&)>& body) {
  CheckResult r;
  r.suite = std::move(suite);
  r.name = std::move(name);
  const auto t0 = Clock::now();
  try {
    body(r);
  } catch (const std::exception& e) {
    r.passed = false;
    r.detail = std::string("exception: ") + e.what();
  }
  r.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return r;
}

std::vector<Vec3> random_points(Rng& rng, std::size_t n, bool grid) {
  std::vector<Vec3> xyz(n);
  for (Vec3& p : xyz) {
    for (double& c : p) {
      c = grid ? static_cast<double>(rng.below(4)) : rng.uniform(-2.0, 2.0);
    }
  }
  return xyz;
}

PointCloud random_point_cloud(Rng& rng, std::size_t n, double extent, std::size_t feature_dim) {
  std::vector<Vec3> xyz(n);
  for (Vec3& p : xyz)
    for (double& c : p) c = rng.uniform(-extent, extent);
  std::vector<double> f(n * feature_dim);
  for (double& v : f) v = rng.uniform();
  return PointCloud(std::move(xyz), std::move(f), feature_dim);
}

std::string join(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

double norm2(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// --- gradient checking -------------------------------------------------------

using Builder = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

/// sum(f(inputs) * weights) with fixed random weights.
double weighted_value(const Builder& f, const std::vector<Tensor>& inputs, const Tensor& weights) {
  Tape tape(false);
  return sum(tape, mul(tape, f(tape, inputs), weights)).item();
}

/// Norm-relative error between the analytic and central-difference gradients
/// of sum(f * weights) with respect to every input.
double gradient_error(const Builder& f, const std::vector<Tensor>& inputs, Rng& rng) {
  Tape probe(false);
  const Tensor out = f(probe, inputs);
  std::vector<double> w(out.size());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  const Tensor weights = Tensor::from(out.rows(), out.cols(), std::move(w));

  for (const Tensor& t : inputs) t.zero_grad();
  Tape tape;
  const Tensor loss = sum(tape, mul(tape, f(tape, inputs), weights));
  // A constant output (e.g. an empty regression mask) has zero gradient.
  if (loss.requires_grad()) tape.backward(loss);

  std::vector<double> analytic, numeric;
  const double h = kFiniteDifferenceStep;
  for (Tensor t : inputs) {
    if (!t.requires_grad()) continue;
    const auto g = t.grad_mut();  // zeros when backward never reached t
    analytic.insert(analytic.end(), g.begin(), g.end());
    auto v = t.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double orig = v[i];
      v[i] = orig + h;
      const double up = weighted_value(f, inputs, weights);
      v[i] = orig - h;
      const double down = weighted_value(f, inputs, weights);
      v[i] = orig;
      numeric.push_back((up - down) / (2 * h));
    }
  }
  std::vector<double> diff(analytic.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = analytic[i] - numeric[i];
  const double scale = std::max(norm2(analytic), norm2(numeric));
  return scale < 1e-12 ? norm2(diff) : norm2(diff) / scale;
}

Tensor random_tensor(Rng& rng, std::size_t rows, std::size_t cols, bool grad = true,
                     double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(rows * cols);
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(rows, cols, std::move(v), grad);
}

std::size_t dim(Rng& rng, std::size_t max) { return 1 + rng.below(max); }

/// True when every value stays at least `gap` away from the ReLU kink.
bool clear_of_kink(const Tensor& x, const Tensor& w, const Tensor& b, double gap) {
  Tape t(false);
  const Tensor z = linear(t, x, w, b, Activation::Identity);
  return std::all_of(z.values().begin(), z.values().end(),
                     [gap](double v) { return std::abs(v) > gap; });
}

/// True when each channel's maximum beats the runner-up in its segment by `gap`.
bool clear_maxima(const Tensor& x, std::size_t segment, double gap) {
  for (std::size_t s = 0; s < x.rows() / segment; ++s) {
    for (std::size_t c = 0; c < x.cols(); ++c) {
      std::vector<double> col;
      for (std::size_t r = 0; r < segment; ++r) col.push_back(x.at(s * segment + r, c));
      std::sort(col.rbegin(), col.rend());
      if (col.size() > 1 && col[0] - col[1] < gap) return false;
    }
  }
  return true;
}

struct OpCase {
  std::string name;
  /// Fills inputs and the builder; returns false to redraw.
  std::function<bool(Rng&, std::vector<Tensor>&, Builder&)> make;
};

std::vector<OpCase> op_cases() {
  const double gap = 1e-3;
  std::vector<OpCase> cases;
  for (Activation act : {Activation::Identity, Activation::Relu}) {
    cases.push_back({act == Activation::Relu ? "linear_relu" : "linear",
                     [act, gap](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                       const std::size_t p = dim(rng, 4), ci = dim(rng, 4), co = dim(rng, 4);
                       in = {random_tensor(rng, p, ci), random_tensor(rng, ci, co),
                             random_tensor(rng, 1, co)};
                       f = [act](Tape& t, const std::vector<Tensor>& x) {
                         return linear(t, x[0], x[1], x[2], act);
                       };
                       return act == Activation::Identity || clear_of_kink(in[0], in[1], in[2], gap);
                     }});
  }
  cases.push_back({"max_pool_segments", [gap](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t seg = dim(rng, 4), n = dim(rng, 3), c = dim(rng, 4);
                     in = {random_tensor(rng, seg * n, c)};
                     f = [seg](Tape& t, const std::vector<Tensor>& x) {
                       return max_pool_segments(t, x[0], seg).values;
                     };
                     return clear_maxima(in[0], seg, gap);
                   }});
  cases.push_back({"concat_channels", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t r = dim(rng, 4);
                     in = {random_tensor(rng, r, dim(rng, 3)), random_tensor(rng, r, dim(rng, 3))};
                     f = [](Tape& t, const std::vector<Tensor>& x) {
                       return concat_channels(t, x[0], x[1]);
                     };
                     return true;
                   }});
  cases.push_back({"concat_rows", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t c = dim(rng, 4);
                     in = {random_tensor(rng, dim(rng, 3), c), random_tensor(rng, dim(rng, 3), c)};
                     f = [](Tape& t, const std::vector<Tensor>& x) {
                       return concat_rows(t, x[0], x[1]);
                     };
                     return true;
                   }});
  cases.push_back({"gather_rows", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t r = dim(rng, 4);
                     in = {random_tensor(rng, r, dim(rng, 3))};
                     std::vector<std::size_t> idx(dim(rng, 8));
                     for (auto& i : idx) i = rng.below(r);
                     f = [idx](Tape& t, const std::vector<Tensor>& x) {
                       return gather_rows(t, x[0], idx);
                     };
                     return true;
                   }});
  cases.push_back({"add", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t r = dim(rng, 4), c = dim(rng, 4);
                     in = {random_tensor(rng, r, c), random_tensor(rng, r, c)};
                     f = [](Tape& t, const std::vector<Tensor>& x) { return add(t, x[0], x[1]); };
                     return true;
                   }});
  cases.push_back({"mul", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t r = dim(rng, 4), c = dim(rng, 4);
                     in = {random_tensor(rng, r, c), random_tensor(rng, r, c)};
                     f = [](Tape& t, const std::vector<Tensor>& x) { return mul(t, x[0], x[1]); };
                     return true;
                   }});
  cases.push_back({"scale", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     in = {random_tensor(rng, dim(rng, 4), dim(rng, 4))};
                     const double s = rng.uniform(-2.0, 2.0);
                     f = [s](Tape& t, const std::vector<Tensor>& x) { return scale(t, x[0], s); };
                     return true;
                   }});
  cases.push_back({"sum", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     in = {random_tensor(rng, dim(rng, 4), dim(rng, 4))};
                     f = [](Tape& t, const std::vector<Tensor>& x) { return sum(t, x[0]); };
                     return true;
                   }});
  cases.push_back({"focal_loss", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t m = dim(rng, 6);
                     in = {random_tensor(rng, m, 1, true, -3.0, 3.0)};
                     std::vector<std::uint8_t> labels(m);
                     for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(2));
                     const double alpha = rng.uniform() < 0.5 ? 0.25 : -1.0;
                     const double gamma = rng.uniform(0.0, 3.0);
                     f = [labels, alpha, gamma](Tape& t, const std::vector<Tensor>& x) {
                       return focal_loss(t, x[0], labels, alpha, gamma);
                     };
                     return true;
                   }});
  cases.push_back({"bce_loss", [](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t m = dim(rng, 6);
                     in = {random_tensor(rng, m, 1, true, -3.0, 3.0)};
                     std::vector<std::uint8_t> labels(m);
                     for (auto& l : labels) l = static_cast<std::uint8_t>(rng.below(2));
                     f = [labels](Tape& t, const std::vector<Tensor>& x) {
                       return bce_loss(t, x[0], labels);
                     };
                     return true;
                   }});
  cases.push_back({"smooth_l1", [gap](Rng& rng, std::vector<Tensor>& in, Builder& f) {
                     const std::size_t m = dim(rng, 4), c = dim(rng, 7);
                     in = {random_tensor(rng, m, c, true, -3.0, 3.0),
                           random_tensor(rng, m, c, true, -3.0, 3.0)};
                     std::vector<std::uint8_t> mask(m);
                     for (auto& v : mask) v = static_cast<std::uint8_t>(rng.below(2));
                     const double beta = rng.uniform(0.5, 1.5);
                     f = [mask, beta](Tape& t, const std::vector<Tensor>& x) {
                       return smooth_l1(t, x[0], x[1], mask, beta);
                     };
                     for (std::size_t i = 0; i < m * c; ++i) {
                       const double d = std::abs(in[0].values()[i] - in[1].values()[i]);
                       if (std::abs(d - beta) < gap) return false;
                     }
                     return true;
                   }});
  return cases;
}

// --- tiny detector for the end-to-end check --------------------------------

DetectorConfig tiny_detector(Scheme scheme) {
  DetectorConfig c;
  DpnConfig& b = c.backbone;
  b.num_seeds = 8;
  b.radius_m = 1.5;
  b.k_neighbors = 6;
  b.num_fa_layers = 3;
  b.scheme = scheme;
  b.group_sizes = {2, 2, 2};
  b.mlp_widths = {{4}, {5}, {6}};
  c.head_hidden = 4;
  c.num_aux_heads = 2;
  return c;
}

}  // namespace

bool CheckReport::passed() const { return failures() == 0; }

std::size_t CheckReport::failures() const {
  return static_cast<std::size_t>(
      std::count_if(results.begin(), results.end(), [](const CheckResult& r) { return !r.passed; }));
}

std::string CheckReport::to_text() const {
  std::ostringstream os;
  for (const CheckResult& r : results) {
    os << (r.passed ? "PASS " : "FAIL ") << r.suite << "/" << r.name;
    if (!r.detail.empty()) os << "  " << r.detail;
    os << "\n";
  }
  os << (results.size() - failures()) << "/" << results.size() << " checks passed\n";
  return os.str();
}

nlohmann::json CheckReport::to_json() const {
  nlohmann::json arr = nlohmann::json::array();
  for (const CheckResult& r : results) {
    arr.push_back({{"suite", r.suite}, {"name", r.name}, {"passed", r.passed},
                   {"metric", r.metric}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  return {{"passed", passed()}, {"failures", failures()}, {"results", arr}};
}

CheckResult check_fps_oracle(std::size_t clouds, std::uint64_t seed) {
  return timed("sampling", "fps_oracle", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.fps");
    std::size_t mismatches = 0, sequences = 0;
    for (std::size_t c = 0; c < clouds; ++c) {
      const std::size_t n = 1 + rng.below(64);
      const auto xyz = random_points(rng, n, c % 2 == 1);
      const std::size_t start = rng.below(n);
      const auto expected = oracle::fps_order(xyz, n, start);
      for (std::size_t m = 1; m <= n; ++m) {
        const SeedSet got = farthest_point_sampling(xyz, m, start);
        ++sequences;
        if (!std::equal(got.indices.begin(), got.indices.end(), expected.begin(),
                        expected.begin() + static_cast<std::ptrdiff_t>(m)) ||
            got.indices.size() != m) {
          ++mismatches;
        }
      }
    }
    r.metric = static_cast<double>(mismatches);
    r.passed = mismatches == 0;
    r.detail = std::to_string(clouds) + " clouds, " + std::to_string(sequences) +
               " sequences, " + std::to_string(mismatches) + " mismatches";
  });
}

CheckResult check_ball_query_oracle(std::size_t clouds, std::uint64_t seed) {
  return timed("sampling", "ball_query_oracle", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.ball_query");
    std::size_t bad = 0, rows = 0;
    for (std::size_t c = 0; c < clouds; ++c) {
      const std::size_t n = 1 + rng.below(64);
      const auto xyz = random_points(rng, n, c % 2 == 1);
      const std::size_t m = 1 + rng.below(n);
      const SeedSet seeds = farthest_point_sampling(xyz, m, 0);
      const double radius = rng.uniform(0.2, 2.5);
      const std::size_t k = 1 + rng.below(8);
      const NeighborList nl = ball_query(xyz, seeds, radius, k, rng.next_u64());
      const auto sets = oracle::ball_sets(xyz, seeds.xyz, radius);
      for (std::size_t s = 0; s < m; ++s, ++rows) {
        const auto row = nl.row(s);
        const auto& expect = sets[s];
        const std::size_t found = std::min(expect.size(), k);
        bool ok = nl.found[s] == found;
        for (std::size_t j = 0; ok && j < found; ++j)
          ok = row[j] == expect[j] && !nl.duplicate[s * k + j];
        for (std::size_t j = found; ok && j < k; ++j)
          ok = nl.duplicate[s * k + j] &&
               std::binary_search(expect.begin(), expect.begin() + static_cast<std::ptrdiff_t>(found),
                                  static_cast<std::size_t>(row[j]));
        const std::set<std::size_t> distinct(row.begin(), row.end());
        ok = ok && std::equal(distinct.begin(), distinct.end(), expect.begin(),
                              expect.begin() + static_cast<std::ptrdiff_t>(found)) &&
             distinct.size() == found;
        bad += ok ? 0 : 1;
      }
    }
    r.metric = static_cast<double>(bad);
    r.passed = bad == 0;
    r.detail = std::to_string(rows) + " seed rows, " + std::to_string(bad) + " mismatches";
  });
}

CheckResult check_fa_oracle(Scheme scheme, std::size_t instances, std::uint64_t seed) {
  return timed("fa", std::string("oracle_") + std::string(to_string(scheme)), [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.fa." + std::string(to_string(scheme)));
    double worst = 0;
    for (std::size_t i = 0; i < instances; ++i) {
      const std::size_t seeds = 1 + rng.below(4);
      const std::size_t layers = 1 + rng.below(4);
      const std::size_t k = layers + rng.below(8 - layers + 1);
      const std::size_t fdim = rng.below(2);
      DpnConfig cfg;
      cfg.num_seeds = seeds;
      cfg.k_neighbors = k;
      cfg.num_fa_layers = layers;
      cfg.scheme = scheme;
      cfg.radius_m = rng.uniform(0.5, 2.0);
      cfg.group_sizes.assign(layers, 1);
      for (std::size_t extra = k - layers; extra > 0; --extra) ++cfg.group_sizes[rng.below(layers)];
      cfg.mlp_widths.clear();
      for (std::size_t l = 0; l < layers; ++l) {
        std::vector<std::size_t> w{1 + rng.below(4)};
        if (rng.below(2)) w.insert(w.begin(), 1 + rng.below(4));
        cfg.mlp_widths.push_back(w);
      }
      const PointCloud cloud = random_point_cloud(rng, seeds + rng.below(12), 1.5, fdim);
      Rng prng = rng.stream(static_cast<std::uint64_t>(i));
      const DpnParams params = DpnParams::init(cfg, 3 + fdim, prng);
      Tape tape(false);
      const DpnOutput out = forward(tape, cloud, cfg, params, rng.next_u64());

      std::vector<oracle::DenseMlp> dense;
      for (const Mlp& m : params.layers) dense.push_back(oracle::to_dense(m));
      const auto expect = oracle::fa_taps(scheme, oracle::slot_inputs(out.sg), cfg.group_sizes, dense);
      for (std::size_t l = 0; l < layers; ++l) {
        for (std::size_t s = 0; s < seeds; ++s) {
          for (std::size_t c = 0; c < out.taps[l].cols(); ++c) {
            worst = std::max(worst, std::abs(out.taps[l].at(s, c) - expect[l][s][c]));
          }
        }
      }
    }
    r.metric = worst;
    r.passed = worst <= kFaOracleTolerance;
    std::ostringstream os;
    os << instances << " instances, max abs error " << worst;
    r.detail = os.str();
  });
}

std::vector<CheckResult> check_op_gradients(std::size_t trials, std::uint64_t seed) {
  std::vector<CheckResult> out;
  for (const OpCase& op : op_cases()) {
    out.push_back(timed("gradient", op.name, [&](CheckResult& r) {
      Rng rng = Rng(seed).stream("check.grad." + op.name);
      double worst = 0;
      std::size_t done = 0, redraws = 0;
      while (done < trials) {
        std::vector<Tensor> inputs;
        Builder f;
        if (!op.make(rng, inputs, f)) {
          require(++redraws < 100 * trials, ErrorCode::Internal, "too many redraws");
          continue;
        }
        worst = std::max(worst, gradient_error(f, inputs, rng));
        ++done;
      }
      r.metric = worst;
      r.passed = worst < kOpGradTolerance;
      std::ostringstream os;
      os << trials << " trials, max relative error " << worst;
      r.detail = os.str();
    }));
  }
  return out;
}

CheckResult check_end_to_end_gradient(Scheme scheme, std::size_t trials, std::uint64_t seed) {
  return timed("gradient", std::string("end_to_end_") + std::string(to_string(scheme)),
               [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.e2e." + std::string(to_string(scheme)));
    double worst = 0;
    for (std::size_t t = 0; t < trials; ++t) {
      const PointCloud cloud = random_point_cloud(rng, 32, 2.0, 1);
      const Detector det = Detector::init(tiny_detector(scheme), 4, rng.next_u64());
      const std::uint64_t sample_seed = rng.next_u64();
      Box3 box;
      box.center = cloud.xyz()[0];
      box.length = 2.0;
      box.width = 2.0;
      box.height = 2.0;
      const std::vector<Box3> boxes{box};

      std::vector<Tensor> tap_weights;
      for (std::size_t l = 0; l < 3; ++l)
        tap_weights.push_back(random_tensor(rng, 8, det.cfg.backbone.tap_width(l), false));

      auto objective = [&](Tape& tape) {
        const DetectorOutput out = run_detector(tape, det, cloud, sample_seed);
        const Targets targets = assign_targets(boxes, out.backbone.sg.seeds.xyz, det.cfg.anchor);
        Tensor total = detector_loss(tape, det, out, targets).total;
        for (std::size_t l = 0; l < 3; ++l)
          total = add(tape, total, sum(tape, mul(tape, out.backbone.taps[l], tap_weights[l])));
        return total;
      };

      const std::vector<Tensor> params = det.parameters();
      // Zero-initialised biases put a ReLU input exactly at 0 whenever a row is
      // all zeros (a seed's own slot with a dead tap); move off that kink.
      for (auto& [name, p] : det.named_parameters()) {
        if (!name.ends_with(".bias")) continue;
        for (double& b : p.mutable_values()) b = rng.uniform(-0.1, 0.1);
      }
      std::vector<std::vector<double>> dir;
      double dir_norm = 0;
      for (const Tensor& p : params) {
        std::vector<double> d(p.size());
        for (double& x : d) {
          x = rng.normal();
          dir_norm += x * x;
        }
        dir.push_back(std::move(d));
      }
      dir_norm = std::sqrt(dir_norm);

      for (const Tensor& p : params) p.zero_grad();
      Tape tape;
      tape.backward(objective(tape));
      double analytic = 0;
      for (std::size_t i = 0; i < params.size(); ++i) {
        if (!params[i].has_grad()) continue;
        const auto g = params[i].grad();
        for (std::size_t k = 0; k < g.size(); ++k) analytic += g[k] * dir[i][k] / dir_norm;
      }
      auto shifted = [&](double step) {
        std::vector<Tensor> ps = params;
        for (std::size_t i = 0; i < ps.size(); ++i) {
          auto v = ps[i].mutable_values();
          for (std::size_t k = 0; k < v.size(); ++k) v[k] += step * dir[i][k] / dir_norm;
        }
        Tape off(false);
        const double value = objective(off).item();
        for (std::size_t i = 0; i < ps.size(); ++i) {
          auto v = ps[i].mutable_values();
          for (std::size_t k = 0; k < v.size(); ++k) v[k] -= step * dir[i][k] / dir_norm;
        }
        return value;
      };
      const double h = kFiniteDifferenceStep;
      const double numeric = (shifted(h) - shifted(-h)) / (2 * h);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(analytic - numeric) / denom);
    }
    r.metric = worst;
    r.passed = worst < kEndToEndGradTolerance;
    std::ostringstream os;
    os << trials << " directions, max relative error " << worst;
    r.detail = os.str();
  });
}

CheckResult check_principle1(const DpnConfig& cfg, const PointCloud& cloud, std::uint64_t seed) {
  return timed("principles", "single_radius_fusion", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.principle1");
    const DpnParams params = DpnParams::init(cfg, 3 + cloud.feature_dim(), rng);
    Tape tape(false);
    const DpnOutput out = forward(tape, cloud, cfg, params, seed);
    double worst_excess = -std::numeric_limits<double>::infinity();
    std::size_t checked = 0, violations = 0;
    for (std::size_t l = 0; l < out.taps.size(); ++l) {
      for (std::size_t s = 0; s < out.sg.num_seeds(); ++s) {
        const auto row = out.sg.neighbors.row(s);
        for (std::uint16_t slot : out.tap_sources[l]) {
          const double d = std::sqrt(squared_distance(cloud.xyz()[row[slot]], out.sg.seeds.xyz[s]));
          worst_excess = std::max(worst_excess, d - cfg.radius_m);
          ++checked;
          violations += d <= cfg.radius_m + kRadiusEpsilon ? 0 : 1;
        }
      }
    }
    r.metric = worst_excess;
    r.passed = violations == 0 && checked > 0;
    std::ostringstream os;
    os << checked << " fused (tap, seed, slot) triples, " << violations
       << " beyond radius " << cfg.radius_m << " m";
    r.detail = os.str();
  });
}

CheckResult check_single_radius_config() {
  return timed("principles", "single_radius_config", [&](CheckResult& r) {
    DpnConfig c;
    bool rejected = false;
    try {
      from_json(nlohmann::json{{"radius_m", {1.0, 2.0, 3.0, 4.0}}}, c);
    } catch (const Error& e) {
      rejected = e.code() == ErrorCode::Validation;
    }
    r.passed = rejected;
    r.detail = rejected ? "per-layer radius list rejected" : "per-layer radius list accepted";
  });
}

CheckResult check_principle2(const DpnConfig& cfg, const PointCloud& cloud, std::uint64_t seed) {
  return timed("principles", "growing_fusion", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.principle2");
    const DpnParams params = DpnParams::init(cfg, 3 + cloud.feature_dim(), rng);
    Tape tape(false);
    const DpnOutput out = forward(tape, cloud, cfg, params, seed);
    std::vector<std::size_t> counts, expected, distinct_points;
    std::size_t cumulative = 0;
    bool ok = true;
    for (std::size_t l = 0; l < out.taps.size(); ++l) {
      cumulative += cfg.group_sizes[l];
      expected.push_back(cumulative);
      counts.push_back(out.tap_sources[l].size());
      ok = ok && counts.back() == expected.back() && (l == 0 || counts[l] > counts[l - 1]);
      // Distinct cloud points behind the fused slots, averaged over seeds.
      std::size_t total = 0;
      for (std::size_t s = 0; s < out.sg.num_seeds(); ++s) {
        const auto row = out.sg.neighbors.row(s);
        std::set<std::uint32_t> pts;
        for (std::uint16_t slot : out.tap_sources[l]) pts.insert(row[slot]);
        total += pts.size();
      }
      distinct_points.push_back(total / std::max<std::size_t>(1, out.sg.num_seeds()));
    }
    r.passed = ok;
    r.metric = counts.empty() ? 0 : static_cast<double>(counts.back());
    r.detail = "fused slots per tap " + join(counts) + " (expected " + join(expected) +
               "); mean distinct points " + join(distinct_points);
  });
}

CheckResult check_single_sampling(const DpnConfig& cfg, const PointCloud& cloud,
                                  std::uint64_t seed) {
  return timed("principles", "single_sampling", [&](CheckResult& r) {
    const SgResult sg = sg_layer(cloud, cfg, seed);
    const SaConfig sa_cfg = SaConfig::scale_oriented(cfg);
    const SaOutput sa = baseline_sa_sampling(cloud, sa_cfg, seed);
    const std::size_t layers = cfg.num_fa_layers;
    r.passed = sg.counters.fps_calls == 1 && sg.counters.ball_query_calls == 1 &&
               sa.counters.fps_calls == layers && sa.counters.ball_query_calls == layers;
    r.detail = "dpointnet (" + std::to_string(sg.counters.fps_calls) + "," +
               std::to_string(sg.counters.ball_query_calls) + ") vs baseline (" +
               std::to_string(sa.counters.fps_calls) + "," +
               std::to_string(sa.counters.ball_query_calls) + ")";
  });
}

CheckResult check_single_layer_equivalence(std::uint64_t seed) {
  return timed("fa", "single_layer_equivalence", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.l1");
    const PointCloud cloud = random_point_cloud(rng, 64, 2.0, 1);
    DpnConfig cfg;
    cfg.num_seeds = 16;
    cfg.radius_m = 1.5;
    cfg.k_neighbors = 6;
    cfg.num_fa_layers = 1;
    cfg.group_sizes = {6};
    cfg.mlp_widths = {{8, 8}};
    const DpnParams params = DpnParams::init(cfg, 4, rng);
    std::vector<Tensor> taps;
    for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat}) {
      cfg.scheme = s;
      Tape tape(false);
      taps.push_back(forward(tape, cloud, cfg, params, seed).primary());
    }
    bool same = true;
    for (std::size_t i = 1; i < taps.size(); ++i)
      same = same && std::equal(taps[0].values().begin(), taps[0].values().end(),
                                taps[i].values().begin(), taps[i].values().end());
    r.passed = same;
    r.detail = same ? "append, coordconcat, featconcat taps bit-identical" : "taps differ";
  });
}

CheckResult check_permutation_invariance(Scheme scheme, std::uint64_t seed) {
  return timed("fa", std::string("permutation_") + std::string(to_string(scheme)),
               [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.perm." + std::string(to_string(scheme)));
    const PointCloud cloud = random_point_cloud(rng, 96, 2.0, 1);
    DpnConfig cfg;
    cfg.num_seeds = 12;
    cfg.radius_m = 1.5;
    cfg.k_neighbors = 12;
    cfg.num_fa_layers = 3;
    cfg.scheme = scheme;
    cfg.group_sizes = {4, 4, 4};
    cfg.mlp_widths = {{6}, {6}, {6}};
    const DpnParams params = DpnParams::init(cfg, 4, rng);
    const SgResult sg = sg_layer(cloud, cfg, seed);
    SgResult shuffled = sg;
    for (std::size_t g = 0; g < sg.group_inputs.size(); ++g) {
      const std::size_t size = sg.group_sizes[g];
      std::vector<std::size_t> idx;
      for (std::size_t s = 0; s < sg.num_seeds(); ++s) {
        std::vector<std::size_t> perm(size);
        for (std::size_t j = 0; j < size; ++j) perm[j] = s * size + j;
        for (std::size_t j = size; j > 1; --j) std::swap(perm[j - 1], perm[rng.below(j)]);
        idx.insert(idx.end(), perm.begin(), perm.end());
      }
      Tape t(false);
      shuffled.group_inputs[g] = gather_rows(t, sg.group_inputs[g], idx);
    }
    Tape a(false), b(false);
    const DpnOutput x = forward_from(a, sg, cfg, params);
    const DpnOutput y = forward_from(b, shuffled, cfg, params);
    double worst = 0;
    for (std::size_t l = 0; l < x.taps.size(); ++l)
      for (std::size_t i = 0; i < x.taps[l].size(); ++i)
        worst = std::max(worst, std::abs(x.taps[l].values()[i] - y.taps[l].values()[i]));
    r.metric = worst;
    r.passed = worst <= kFaOracleTolerance;
    std::ostringstream os;
    os << "max abs tap change " << worst;
    r.detail = os.str();
  });
}

CheckResult check_aux_neutrality(std::uint64_t seed) {
  return timed("heads", "aux_neutrality", [&](CheckResult& r) {
    Rng rng = Rng(seed).stream("check.aux");
    const PointCloud cloud = random_point_cloud(rng, 128, 3.0, 1);
    DetectorConfig cfg = tiny_detector(Scheme::FeatConcat);
    cfg.backbone.num_fa_layers = 3;
    cfg.backbone.num_seeds = 16;
    const Detector with_aux = Detector::init(cfg, 4, seed);
    const Detector detached = with_aux.without_aux();
    DetectorConfig no_aux_cfg = cfg;
    no_aux_cfg.num_aux_heads = 0;
    const Detector fresh = Detector::init(no_aux_cfg, 4, seed);
    const HeadOutput a = infer(with_aux, cloud, seed);
    const HeadOutput b = infer(detached, cloud, seed);
    const HeadOutput c = infer(fresh, cloud, seed);
    auto identical = [](const HeadOutput& x, const HeadOutput& y) {
      return std::equal(x.logits.values().begin(), x.logits.values().end(),
                        y.logits.values().begin(), y.logits.values().end()) &&
             std::equal(x.residuals.values().begin(), x.residuals.values().end(),
                        y.residuals.values().begin(), y.residuals.values().end());
    };
    const bool detach_ok = identical(a, b);
    const bool init_ok = identical(a, c);
    r.passed = detach_ok && init_ok && !with_aux.rpn_aux.empty() && detached.rpn_aux.empty();
    r.detail = std::string("detached ") + (detach_ok ? "bit-identical" : "differs") +
               ", init without aux " + (init_ok ? "bit-identical" : "differs");
  });
}

CheckResult check_loss_units() {
  return timed("heads", "loss_units", [&](CheckResult& r) {
    Tape t(false);
    const std::vector<std::uint8_t> pos{1};
    const Tensor zero = Tensor::scalar(0.0);
    const double ln2 = std::numbers::ln2;
    const double focal = focal_loss(t, zero, pos, 0.25, 2.0).item();
    const double bce = bce_loss(t, zero, pos).item();
    const Tensor pred = Tensor::from(1, 3, {0.5, 2.0, 0.0});
    const Tensor target = Tensor::zeros(1, 3);
    const double sl1 = smooth_l1(t, pred, target, pos, 1.0).item();
    const double focal_err = std::abs(focal - 0.25 * 0.25 * ln2);
    const double bce_err = std::abs(bce - ln2);
    const double sl1_err = std::abs(smooth_l1_value(0.5) - 0.125) +
                           std::abs(smooth_l1_value(2.0) - 1.5) +
                           std::abs(smooth_l1_value(0.0)) + std::abs(sl1 - 1.625);
    r.metric = std::max({focal_err, bce_err, sl1_err});
    r.passed = r.metric <= 1e-9;
    std::ostringstream os;
    os.precision(12);
    os << "focal " << focal << ", bce " << bce << ", smooth-L1 row " << sl1;
    r.detail = os.str();
  });
}

CheckReport run_checks(const RunConfig& cfg, const CheckOptions& opts) {
  cfg.validate();
  CheckReport rep;
  const std::uint64_t seed = opts.seed;
  rep.results.push_back(check_fps_oracle(opts.fps_clouds, seed));
  rep.results.push_back(check_ball_query_oracle(opts.ball_clouds, seed));
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat})
    rep.results.push_back(check_fa_oracle(s, opts.fa_instances, seed));
  rep.results.push_back(check_single_layer_equivalence(seed));
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat})
    rep.results.push_back(check_permutation_invariance(s, seed));
  for (CheckResult& r : check_op_gradients(opts.grad_trials, seed)) rep.results.push_back(std::move(r));
  for (Scheme s : {Scheme::Append, Scheme::CoordConcat, Scheme::FeatConcat})
    rep.results.push_back(check_end_to_end_gradient(s, opts.e2e_trials, seed));

  const SyntheticScene scene = generate_scene(cfg.scene, derive_seed(seed, "check.scene"));
  const SceneBatch batch = make_batch(scene, cfg.train.num_points, derive_seed(seed, "check.batch"));
  const DpnConfig& backbone = cfg.detector.backbone;
  rep.results.push_back(check_principle1(backbone, batch.cloud, batch.sampling_seed));
  rep.results.push_back(check_single_radius_config());
  rep.results.push_back(check_principle2(backbone, batch.cloud, batch.sampling_seed));
  rep.results.push_back(check_single_sampling(backbone, batch.cloud, batch.sampling_seed));
  rep.results.push_back(check_aux_neutrality(seed));
  rep.results.push_back(check_loss_units());
  return rep;
}

}  // namespace dpn
