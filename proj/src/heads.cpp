#include "dpn/heads.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {
namespace {

constexpr double kProbFloor = 1e-12;

void check_logits(const Tensor& logits, std::span<const std::uint8_t> labels, const char* op) {
  require(logits.defined() && logits.cols() == 1, ErrorCode::Dimension,
          std::string(op) + ": logits must be seeds x 1");
  require(logits.rows() == labels.size(), ErrorCode::Dimension,
          std::string(op) + ": one label per logit required");
  require(logits.rows() > 0, ErrorCode::EmptyGroup, std::string(op) + ": no seeds");
  for (std::uint8_t y : labels) {
    require(y <= 1, ErrorCode::InvalidArgument, std::string(op) + ": labels must be 0 or 1");
  }
}

double sigmoid(double z) noexcept {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

DetectionHead DetectionHead::init(std::size_t in_dim, std::size_t hidden, Rng& rng) {
  DetectionHead h;
  Rng trunk_rng = rng.stream("trunk");
  Rng cls_rng = rng.stream("cls");
  Rng reg_rng = rng.stream("reg");
  const std::size_t trunk_dims[] = {in_dim, hidden};
  const std::size_t cls_dims[] = {hidden, 1};
  const std::size_t reg_dims[] = {hidden, kBoxResiduals};
  h.trunk = Mlp::init(trunk_dims, Activation::Relu, trunk_rng);
  h.cls = Mlp::init(cls_dims, Activation::Identity, cls_rng);
  h.reg = Mlp::init(reg_dims, Activation::Identity, reg_rng);
  return h;
}

HeadOutput DetectionHead::forward(Tape& tape, const Tensor& tap) const {
  const Tensor t = trunk.forward(tape, tap);
  return {cls.forward(tape, t), reg.forward(tape, t)};
}

std::vector<Tensor> DetectionHead::parameters() const {
  std::vector<Tensor> out = trunk.parameters();
  for (const Mlp* m : {&cls, &reg}) {
    auto p = m->parameters();
    out.insert(out.end(), p.begin(), p.end());
  }
  return out;
}

Tensor focal_loss(Tape& tape, const Tensor& logits, std::span<const std::uint8_t> labels,
                  double alpha, double gamma) {
  check_logits(logits, labels, "focal_loss");
  require(gamma >= 0 && alpha <= 1.0, ErrorCode::InvalidArgument,
          "focal_loss: need gamma >= 0 and alpha <= 1");
  const std::size_t m = logits.rows();
  std::vector<double> dz(m);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double sign = labels[i] ? 1.0 : -1.0;
    const double a_t = alpha < 0 ? 1.0 : (labels[i] ? alpha : 1.0 - alpha);
    const double p_t = sigmoid(sign * logits.values()[i]);
    const double log_p = std::log(std::max(p_t, kProbFloor));
    const double q = 1.0 - p_t;
    loss += -a_t * std::pow(q, gamma) * log_p;
    // d/dz of -a_t q^g log p_t, with dp_t/dz = sign p_t q.
    dz[i] = -a_t * sign * (std::pow(q, gamma + 1.0) - gamma * p_t * std::pow(q, gamma) * log_p);
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const bool grad = tape.records({&logits});
  Tensor out = Tensor::scalar(loss * inv_m, grad);
  tape.note_alloc(out);
  if (grad) {
    tape.push(out, [logits, out, dz = std::move(dz), inv_m]() mutable {
      auto g = logits.grad_mut();
      const double up = out.grad()[0];
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += up * dz[i] * inv_m;
    });
  }
  return out;
}

Tensor bce_loss(Tape& tape, const Tensor& logits, std::span<const std::uint8_t> labels) {
  check_logits(logits, labels, "bce_loss");
  const std::size_t m = logits.rows();
  std::vector<double> dz(m);
  double loss = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    const double p = sigmoid(logits.values()[i]);
    const double y = labels[i];
    loss += -(y * std::log(std::max(p, kProbFloor)) +
              (1.0 - y) * std::log(std::max(1.0 - p, kProbFloor)));
    dz[i] = p - y;
  }
  const double inv_m = 1.0 / static_cast<double>(m);
  const bool grad = tape.records({&logits});
  Tensor out = Tensor::scalar(loss * inv_m, grad);
  tape.note_alloc(out);
  if (grad) {
    tape.push(out, [logits, out, dz = std::move(dz), inv_m]() mutable {
      auto g = logits.grad_mut();
      const double up = out.grad()[0];
      for (std::size_t i = 0; i < dz.size(); ++i) g[i] += up * dz[i] * inv_m;
    });
  }
  return out;
}

double smooth_l1_value(double diff, double beta) noexcept {
  const double a = std::abs(diff);
  return a < beta ? 0.5 * a * a / beta : a - 0.5 * beta;
}

Tensor smooth_l1(Tape& tape, const Tensor& pred, const Tensor& target,
                 std::span<const std::uint8_t> mask, double beta) {
  require(pred.defined() && target.defined() && pred.shape() == target.shape(),
          ErrorCode::Dimension, "smooth_l1: prediction and target shapes differ");
  require(mask.size() == pred.rows(), ErrorCode::Dimension, "smooth_l1: one mask entry per row");
  require(beta > 0, ErrorCode::InvalidArgument, "smooth_l1: beta must be positive");
  const std::size_t c = pred.cols();
  const std::size_t npos =
      static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto v) { return v != 0; }));
  if (npos == 0) {
    Tensor zero = Tensor::scalar(0.0);
    tape.note_alloc(zero);
    return zero;
  }
  const double inv = 1.0 / static_cast<double>(npos);
  double loss = 0.0;
  std::vector<double> dpred(pred.size(), 0.0);
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    if (!mask[r]) continue;
    for (std::size_t k = r * c; k < (r + 1) * c; ++k) {
      const double d = pred.values()[k] - target.values()[k];
      loss += smooth_l1_value(d, beta);
      dpred[k] = std::abs(d) < beta ? d / beta : (d > 0 ? 1.0 : -1.0);
    }
  }
  const bool grad = tape.records({&pred, &target});
  Tensor out = Tensor::scalar(loss * inv, grad);
  tape.note_alloc(out);
  if (grad) {
    tape.push(out, [pred, target, out, dpred = std::move(dpred), inv]() mutable {
      const double up = out.grad()[0];
      if (pred.requires_grad()) {
        auto g = pred.grad_mut();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] += up * dpred[k] * inv;
      }
      if (target.requires_grad()) {
        auto g = target.grad_mut();
        for (std::size_t k = 0; k < g.size(); ++k) g[k] -= up * dpred[k] * inv;
      }
    });
  }
  return out;
}

double wrap_angle(double a) noexcept {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  double w = std::fmod(a, two_pi);
  if (w <= -std::numbers::pi) w += two_pi;
  if (w > std::numbers::pi) w -= two_pi;
  return w;
}

Targets assign_targets(std::span<const Box3> boxes, std::span<const Vec3> seeds,
                       const AnchorSize& anchor) {
  Targets t;
  t.labels.assign(seeds.size(), 0);
  std::vector<double> res(seeds.size() * kBoxResiduals, 0.0);
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    for (const Box3& b : boxes) {
      if (!b.contains(seeds[i])) continue;
      t.labels[i] = 1;
      ++t.num_positive;
      double* r = res.data() + i * kBoxResiduals;
      for (int a = 0; a < 3; ++a) r[a] = b.center[a] - seeds[i][a];
      r[3] = std::log(b.length / anchor.length);
      r[4] = std::log(b.height / anchor.height);
      r[5] = std::log(b.width / anchor.width);
      r[6] = wrap_angle(b.yaw);
      break;
    }
  }
  t.residuals = Tensor::from(seeds.size(), kBoxResiduals, std::move(res));
  return t;
}

HeadLoss HeadLossTensors::values(std::string name) const {
  return {std::move(name), classification.item(), regression.item(), total.item()};
}

HeadLossTensors head_loss(Tape& tape, const HeadOutput& out, const Targets& targets,
                          ClassificationLoss kind, const LossOptions& opts) {
  HeadLossTensors l;
  l.classification = kind == ClassificationLoss::Focal
                         ? focal_loss(tape, out.logits, targets.labels, opts.focal_alpha,
                                      opts.focal_gamma)
                         : bce_loss(tape, out.logits, targets.labels);
  l.regression = smooth_l1(tape, out.residuals, targets.residuals, targets.labels,
                           opts.smooth_l1_beta);
  l.total = add(tape, l.classification, l.regression);
  return l;
}

double total_loss(const HeadLoss& main, std::span<const HeadLoss> aux) {
  double t = main.total;
  for (const HeadLoss& h : aux) t += h.total;
  return t;
}

}  // namespace dpn
