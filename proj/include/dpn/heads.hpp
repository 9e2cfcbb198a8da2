#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "dpn/pointcloud.hpp"
#include "dpn/tensor.hpp"

namespace dpn {

/// Residual channels, in order: x, y, z, l, h, w, yaw.
inline constexpr std::size_t kBoxResiduals = 7;

/// Mean size of the synthetic "car" class, used as the regression anchor.
struct AnchorSize {
  double length = 3.9;
  double height = 1.56;
  double width = 1.6;
};

struct HeadOutput {
  Tensor logits;     // seeds x 1
  Tensor residuals;  // seeds x 7
};

/// Per-seed detection head: shared trunk, then a classification and a
/// box-regression branch. Heads on different taps differ only in input width.
struct DetectionHead {
  Mlp trunk;
  Mlp cls;
  Mlp reg;

  static DetectionHead init(std::size_t in_dim, std::size_t hidden, Rng& rng);
  HeadOutput forward(Tape& tape, const Tensor& tap) const;
  std::vector<Tensor> parameters() const;
};

/// Mean over seeds of -a_t (1 - p_t)^gamma log p_t with p = sigmoid(logit).
/// a_t = alpha for positives and 1 - alpha for negatives; alpha < 0 disables
/// the weighting (a_t = 1). p_t is clamped at 1e-12 before the log.
Tensor focal_loss(Tape& tape, const Tensor& logits, std::span<const std::uint8_t> labels,
                  double alpha = 0.25, double gamma = 2.0);

/// Mean sigmoid binary cross entropy, same clamping as focal_loss.
Tensor bce_loss(Tape& tape, const Tensor& logits, std::span<const std::uint8_t> labels);

/// Smooth-L1 summed over channels and averaged over rows with mask != 0.
/// Zero (not NaN) when no row is selected.
Tensor smooth_l1(Tape& tape, const Tensor& pred, const Tensor& target,
                 std::span<const std::uint8_t> mask, double beta = 1.0);

/// Plain smooth-L1 of one difference.
double smooth_l1_value(double diff, double beta = 1.0) noexcept;

/// Wraps to (-pi, pi].
double wrap_angle(double a) noexcept;

struct Targets {
  std::vector<std::uint8_t> labels;  // 1 = inside a ground-truth box
  Tensor residuals;                  // seeds x 7, zero rows for background
  std::size_t num_positive = 0;
};

/// Foreground iff the seed lies in a box (first match wins). Residuals: center
/// offset box - seed, log size ratio against the anchor, yaw wrapped.
Targets assign_targets(std::span<const Box3> boxes, std::span<const Vec3> seeds,
                       const AnchorSize& anchor = {});

enum class ClassificationLoss { Focal, Bce };

struct LossOptions {
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double smooth_l1_beta = 1.0;
};

struct HeadLoss {
  std::string name;
  double classification = 0;
  double regression = 0;
  double total = 0;
};

struct HeadLossTensors {
  Tensor classification;
  Tensor regression;
  Tensor total;

  HeadLoss values(std::string name) const;
};

/// L_cls + sum over the 7 residual channels of smooth-L1.
HeadLossTensors head_loss(Tape& tape, const HeadOutput& out, const Targets& targets,
                          ClassificationLoss kind, const LossOptions& opts = {});

struct LossReport {
  std::vector<HeadLoss> heads;  // main heads first, then auxiliaries
  double total = 0;
};

/// Unweighted sum of the main and auxiliary head totals.
double total_loss(const HeadLoss& main, std::span<const HeadLoss> aux);

}  // namespace dpn
