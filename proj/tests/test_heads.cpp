#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "dpn/checks.hpp"
#include "dpn/heads.hpp"
#include "dpn/rng.hpp"

using namespace dpn;

namespace {

const double kLn2 = std::log(2.0);

double focal(double logit, std::uint8_t label, double alpha, double gamma) {
  Tape tape(false);
  const std::vector<std::uint8_t> labels{label};
  return focal_loss(tape, Tensor::scalar(logit), labels, alpha, gamma).item();
}

double bce(double logit, std::uint8_t label) {
  Tape tape(false);
  const std::vector<std::uint8_t> labels{label};
  return bce_loss(tape, Tensor::scalar(logit), labels).item();
}

double smooth_row(double diff, double beta = 1.0) {
  Tape tape(false);
  const std::vector<std::uint8_t> mask{1};
  return smooth_l1(tape, Tensor::scalar(diff), Tensor::scalar(0.0), mask, beta).item();
}

}  // namespace

TEST(Focal, ClosedFormAtZeroLogit) {
  EXPECT_NEAR(focal(0.0, 1, 0.25, 2.0), 0.25 * 0.25 * kLn2, 1e-9);
  EXPECT_NEAR(focal(0.0, 1, 0.25, 2.0), 0.04332, 1e-5);
}

TEST(Focal, CertainPredictionContributesZero) {
  EXPECT_EQ(focal(1e6, 1, 0.25, 2.0), 0.0);
  EXPECT_EQ(focal(-1e6, 0, 0.25, 2.0), 0.0);
}

TEST(Focal, GammaZeroUnweightedIsBce) {
  Rng rng(1);
  std::vector<double> logits;
  std::vector<std::uint8_t> labels;
  for (int i = 0; i < 64; ++i) {
    logits.push_back(rng.uniform(-6, 6));
    labels.push_back(static_cast<std::uint8_t>(rng.below(2)));
  }
  Tape tape(false);
  const Tensor x = Tensor::from(64, 1, logits);
  const double f = focal_loss(tape, x, labels, -1.0, 0.0).item();
  const double b = bce_loss(tape, x, labels).item();
  EXPECT_LT(std::abs(f - b) / b, 1e-10);
}

TEST(Bce, ZeroLogit) { EXPECT_NEAR(bce(0.0, 1), kLn2, 1e-9); }

TEST(Bce, Saturates) {
  EXPECT_LT(bce(40.0, 1), 1e-15);
  EXPECT_TRUE(std::isfinite(bce(-1e6, 1)));
}

TEST(SmoothL1, PiecewiseValues) {
  EXPECT_EQ(smooth_row(0.0), 0.0);
  EXPECT_DOUBLE_EQ(smooth_row(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_row(2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_row(-2.0), 1.5);
  EXPECT_DOUBLE_EQ(smooth_l1_value(0.5), 0.125);
  EXPECT_DOUBLE_EQ(smooth_l1_value(2.0), 1.5);
}

TEST(SmoothL1, SummedOverChannelsMeanOverMaskedRows) {
  Tape tape(false);
  const Tensor pred = Tensor::from(3, 2, {0.5, 2.0, 100, 100, 0.5, 0.5});
  const Tensor zero = Tensor::zeros(3, 2);
  const std::vector<std::uint8_t> mask{1, 0, 1};
  // rows 0 and 2: (0.125 + 1.5) and (0.125 + 0.125)
  EXPECT_DOUBLE_EQ(smooth_l1(tape, pred, zero, mask).item(), (1.625 + 0.25) / 2);
}

TEST(SmoothL1, EmptyMaskIsZero) {
  Tape tape(false);
  const std::vector<std::uint8_t> mask{0, 0};
  EXPECT_EQ(smooth_l1(tape, Tensor::from(2, 1, {3, 4}), Tensor::zeros(2, 1), mask).item(), 0.0);
}

TEST(TotalLoss, SumsMainAndAux) {
  const HeadLoss main{"top", 1.5, 2.0, 3.5};
  EXPECT_EQ(total_loss(main, {}), 3.5);
  const std::vector<HeadLoss> zeros{{"a", 0, 0, 0}, {"b", 0, 0, 0}};
  EXPECT_EQ(total_loss(main, zeros), 3.5);
  const std::vector<HeadLoss> aux{{"a", 0.25, 0.5, 0.75}, {"b", 1.0, 0.125, 1.125}};
  EXPECT_EQ(total_loss(main, aux), 3.5 + 0.75 + 1.125);
}

TEST(Targets, CenteredAnchorSizedBoxHasZeroResiduals) {
  Box3 box;
  box.center = {10, 2, -0.5};
  box.length = 3.9;
  box.height = 1.56;
  box.width = 1.6;
  const std::vector<Box3> boxes{box};
  const std::vector<Vec3> seeds{box.center};
  const Targets t = assign_targets(boxes, seeds);
  ASSERT_EQ(t.labels, (std::vector<std::uint8_t>{1}));
  for (double r : t.residuals.values()) EXPECT_NEAR(r, 0.0, 1e-12);
}

TEST(Targets, OutsideIsBackground) {
  Box3 box;
  box.center = {10, 0, 0};
  box.length = 4;
  box.height = 2;
  box.width = 2;
  const std::vector<Box3> boxes{box};
  const std::vector<Vec3> seeds{{0, 0, 0}};
  const Targets t = assign_targets(boxes, seeds);
  EXPECT_EQ(t.labels[0], 0);
  EXPECT_EQ(t.num_positive, 0u);
  for (double r : t.residuals.values()) EXPECT_EQ(r, 0.0);
}

TEST(Targets, YawWraps) {
  Box3 box;
  box.center = {0, 0, 0};
  box.length = 4;
  box.height = 2;
  box.width = 4;
  box.yaw = 1.5 * std::numbers::pi;
  const std::vector<Box3> boxes{box};
  const std::vector<Vec3> seeds{{0, 0, 0}};
  const Targets t = assign_targets(boxes, seeds);
  ASSERT_EQ(t.labels[0], 1);
  EXPECT_NEAR(t.residuals.at(0, 6), -std::numbers::pi / 2, 1e-12);
}

TEST(WrapAngle, Range) {
  EXPECT_NEAR(wrap_angle(1.5 * std::numbers::pi), -0.5 * std::numbers::pi, 1e-12);
  EXPECT_NEAR(wrap_angle(-std::numbers::pi), std::numbers::pi, 1e-12);
  EXPECT_NEAR(wrap_angle(7.0), 7.0 - 2 * std::numbers::pi, 1e-12);
}

TEST(Head, OutputShapes) {
  Rng rng(2);
  const DetectionHead head = DetectionHead::init(8, 16, rng);
  Tape tape(false);
  const HeadOutput out = head.forward(tape, Tensor::zeros(5, 8));
  EXPECT_EQ(out.logits.rows(), 5u);
  EXPECT_EQ(out.logits.cols(), 1u);
  EXPECT_EQ(out.residuals.cols(), kBoxResiduals);
}

TEST(LossUnits, CheckSuitePasses) {
  const CheckResult r = check_loss_units();
  EXPECT_TRUE(r.passed) << r.detail;
}
