#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dpn/model.hpp"
#include "dpn/pointcloud.hpp"

namespace dpn {

class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
       double eps = 1e-8);

  void zero_grad();
  /// One update from the accumulated gradients.
  void step();

  double learning_rate() const noexcept { return lr_; }
  std::size_t steps() const noexcept { return t_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

struct TrainOptions {
  std::size_t epochs = 4;
  double learning_rate = 1e-3;
  std::size_t num_points = 2048;  // points sampled from each scene per step
  std::uint64_t seed = 7;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t scene = 0;
  LossReport loss;
};

struct TrainResult {
  std::vector<StepRecord> steps;
  /// Mean total loss over every training scene with fixed sampling, before the
  /// first update and after the last.
  double initial_dataset_loss = 0;
  double final_dataset_loss = 0;
};

/// Deterministic per-scene input: the sampled cloud and its targets.
struct SceneBatch {
  PointCloud cloud;
  std::uint64_t sampling_seed = 0;
};

SceneBatch make_batch(const SyntheticScene& scene, std::size_t num_points, std::uint64_t seed);

/// Mean total loss of `det` over `scenes` (no gradient).
double dataset_loss(const Detector& det, std::span<const SyntheticScene> scenes,
                    std::size_t num_points, std::uint64_t seed);

struct EvalMetrics {
  double foreground_accuracy = 0;  // sigmoid(logit) > 0.5 vs label, over all seeds
  double mean_regression_error = 0;  // mean |residual error| over positive seeds
  std::size_t seeds = 0;
  std::size_t positives = 0;
};

EvalMetrics evaluate(const Detector& det, std::span<const SyntheticScene> scenes,
                     std::size_t num_points, std::uint64_t seed);

using StepCallback = std::function<void(const StepRecord&)>;
/// Called with the failing step and its batch before a divergence is raised.
using DivergenceCallback = std::function<void(const StepRecord&, const SceneBatch&)>;

/// Adam on the detector loss, one scene per step, epochs * scenes steps.
/// A non-finite loss aborts with Error(Numeric) naming the step and scene.
TrainResult train_detector(Detector& det, std::span<const SyntheticScene> scenes,
                           const TrainOptions& opts, const StepCallback& on_step = {},
                           const DivergenceCallback& on_diverge = {});

/// Scenes for toy training, one named stream per scene index.
std::vector<SyntheticScene> make_scenes(const SceneSpec& spec, std::size_t count,
                                        std::uint64_t seed, std::size_t threads = 1);

}  // namespace dpn
