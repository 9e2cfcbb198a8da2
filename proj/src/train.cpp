#include "dpn/train.hpp"

#include <cmath>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"
#include "dpn/sampling.hpp"

namespace dpn {

Adam::Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  require(lr > 0, ErrorCode::InvalidArgument, "Adam: learning rate must be positive");
  for (const Tensor& p : params_) {
    m_.emplace_back(p.size(), 0.0);
    v_.emplace_back(p.size(), 0.0);
  }
}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor& p = params_[i];
    if (!p.has_grad()) continue;
    auto w = p.mutable_values();
    const auto g = p.grad();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m_[i][k] = beta1_ * m_[i][k] + (1.0 - beta1_) * g[k];
      v_[i][k] = beta2_ * v_[i][k] + (1.0 - beta2_) * g[k] * g[k];
      w[k] -= lr_ * (m_[i][k] / c1) / (std::sqrt(v_[i][k] / c2) + eps_);
    }
  }
}

SceneBatch make_batch(const SyntheticScene& scene, std::size_t num_points, std::uint64_t seed) {
  Rng rng(seed);
  SceneBatch b;
  b.cloud = sample_n_points(scene.cloud, num_points, rng);
  b.sampling_seed = derive_seed(seed, "forward");
  return b;
}

namespace {

std::uint64_t batch_seed(std::uint64_t seed, std::string_view phase, std::size_t index) {
  return derive_seed(derive_seed(seed, phase), static_cast<std::uint64_t>(index));
}

}  // namespace

double dataset_loss(const Detector& det, std::span<const SyntheticScene> scenes,
                    std::size_t num_points, std::uint64_t seed) {
  require(!scenes.empty(), ErrorCode::InvalidArgument, "dataset_loss: no scenes");
  double total = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SceneBatch b = make_batch(scenes[i], num_points, batch_seed(seed, "eval", i));
    Tape tape(false);
    const DetectorOutput out = run_detector(tape, det, b.cloud, b.sampling_seed);
    const Targets t = assign_targets(scenes[i].boxes, out.backbone.sg.seeds.xyz, det.cfg.anchor);
    total += detector_loss(tape, det, out, t).report.total;
  }
  return total / static_cast<double>(scenes.size());
}

EvalMetrics evaluate(const Detector& det, std::span<const SyntheticScene> scenes,
                     std::size_t num_points, std::uint64_t seed) {
  EvalMetrics m;
  std::size_t correct = 0;
  double reg_err = 0;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const SceneBatch b = make_batch(scenes[i], num_points, batch_seed(seed, "heldout", i));
    Tape tape(false);
    const DpnOutput bb = forward(tape, b.cloud, det.cfg.backbone, det.backbone, b.sampling_seed);
    const HeadOutput out = det.rpn_top.forward(tape, bb.taps[det.cfg.top_tap()]);
    const Targets t = assign_targets(scenes[i].boxes, bb.sg.seeds.xyz, det.cfg.anchor);
    for (std::size_t s = 0; s < t.labels.size(); ++s) {
      const bool predicted = out.logits.values()[s] > 0.0;
      correct += (predicted == (t.labels[s] != 0)) ? 1 : 0;
      if (!t.labels[s]) continue;
      for (std::size_t c = 0; c < kBoxResiduals; ++c) {
        reg_err += std::abs(out.residuals.at(s, c) - t.residuals.at(s, c));
      }
    }
    m.seeds += t.labels.size();
    m.positives += t.num_positive;
  }
  m.foreground_accuracy = m.seeds ? static_cast<double>(correct) / static_cast<double>(m.seeds) : 0;
  m.mean_regression_error =
      m.positives ? reg_err / static_cast<double>(m.positives * kBoxResiduals) : 0;
  return m;
}

TrainResult train_detector(Detector& det, std::span<const SyntheticScene> scenes,
                           const TrainOptions& opts, const StepCallback& on_step,
                           const DivergenceCallback& on_diverge) {
  require(!scenes.empty(), ErrorCode::InvalidArgument, "train: no scenes");
  require(opts.epochs >= 1, ErrorCode::InvalidArgument, "train: epochs must be >= 1");
  TrainResult result;
  result.initial_dataset_loss = dataset_loss(det, scenes, opts.num_points, opts.seed);
  Adam adam(det.parameters(), opts.learning_rate);
  const std::size_t total_steps = opts.epochs * scenes.size();
  for (std::size_t step = 0; step < total_steps; ++step) {
    const std::size_t scene = step % scenes.size();
    StepRecord rec{step, scene, {}};
    const SceneBatch b =
        make_batch(scenes[scene], opts.num_points, batch_seed(opts.seed, "train", step));
    try {
      Tape tape;
      const DetectorOutput out = run_detector(tape, det, b.cloud, b.sampling_seed);
      const Targets t = assign_targets(scenes[scene].boxes, out.backbone.sg.seeds.xyz, det.cfg.anchor);
      DetectorLoss loss = detector_loss(tape, det, out, t);
      require(std::isfinite(loss.report.total), ErrorCode::Numeric, "non-finite loss");
      adam.zero_grad();
      tape.backward(loss.total);
      adam.step();
      rec.loss = std::move(loss.report);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Numeric) throw;
      if (on_diverge) on_diverge(rec, b);
      fail(ErrorCode::Numeric, "training diverged at step " + std::to_string(step) +
                                   " (scene " + std::to_string(scene) + "): " + e.what());
    }
    if (on_step) on_step(rec);
    result.steps.push_back(std::move(rec));
  }
  result.final_dataset_loss = dataset_loss(det, scenes, opts.num_points, opts.seed);
  return result;
}

std::vector<SyntheticScene> make_scenes(const SceneSpec& spec, std::size_t count,
                                        std::uint64_t seed, std::size_t threads) {
  std::vector<SyntheticScene> scenes(count);
  parallel_for(count, threads, [&](std::size_t i) {
    scenes[i] = generate_scene(spec, derive_seed(derive_seed(seed, "scene"), i));
  });
  return scenes;
}

}  // namespace dpn
