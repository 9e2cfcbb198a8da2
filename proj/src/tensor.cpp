#include "dpn/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dpn/error.hpp"
#include "dpn/rng.hpp"

namespace dpn {
namespace {

std::string shape_str(const Tensor& t) {
  return "[" + std::to_string(t.rows()) + "x" + std::to_string(t.cols()) + "]";
}

void check_defined(const Tensor& t, const char* op) {
  require(t.defined(), ErrorCode::InvalidArgument, std::string(op) + ": undefined tensor");
}

void check_finite(const std::vector<double>& v, const char* op) {
  for (double x : v) {
    if (!std::isfinite(x)) fail(ErrorCode::Numeric, std::string(op) + ": non-finite output");
  }
}

Tensor make_output(Tape& tape, std::size_t rows, std::size_t cols, std::vector<double> values,
                   bool grad, const char* op) {
  check_finite(values, op);
  Tensor out = Tensor::from(rows, cols, std::move(values), grad);
  tape.note_alloc(out);
  return out;
}

}  // namespace

const char* to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "invalid argument";
    case ErrorCode::Dimension: return "dimension error";
    case ErrorCode::EmptyGroup: return "empty group";
    case ErrorCode::Format: return "format error";
    case ErrorCode::Io: return "io error";
    case ErrorCode::Validation: return "validation error";
    case ErrorCode::Numeric: return "numeric error";
    case ErrorCode::CheckFailed: return "check failed";
    case ErrorCode::Internal: return "internal error";
  }
  return "unknown error";
}

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return from(rows, cols, std::vector<double>(rows * cols, 0.0), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::vector<double> values,
                    bool requires_grad) {
  require(values.size() == rows * cols, ErrorCode::Dimension,
          "Tensor::from: " + std::to_string(values.size()) + " values for shape [" +
              std::to_string(rows) + "x" + std::to_string(cols) + "]");
  Tensor t;
  t.impl_ = std::make_shared<Impl>();
  t.impl_->shape = {rows, cols};
  t.impl_->values = std::move(values);
  t.impl_->requires_grad = requires_grad;
  return t;
}

double Tensor::item() const {
  require(defined() && size() == 1, ErrorCode::Dimension, "Tensor::item: not a scalar");
  return impl_->values[0];
}

std::span<double> Tensor::grad_mut() const {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->values.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() const {
  if (impl_) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

bool Tape::records(std::initializer_list<const Tensor*> inputs) const noexcept {
  if (!enabled_) return false;
  return std::any_of(inputs.begin(), inputs.end(),
                     [](const Tensor* t) { return t->requires_grad(); });
}

void Tape::push(Tensor output, std::function<void()> backward) {
  entries_.push_back({std::move(output), std::move(backward)});
}

void Tape::backward(const Tensor& root) {
  require(root.defined() && root.size() == 1, ErrorCode::Dimension,
          "backward: root must be a scalar");
  require(!entries_.empty(), ErrorCode::InvalidArgument, "backward: tape is empty");
  require(root.requires_grad(), ErrorCode::InvalidArgument,
          "backward: root does not depend on any tensor requiring grad");
  for (auto& e : entries_) e.output.zero_grad();
  Tensor r = root;
  r.grad_mut()[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
    if (it->output.has_grad()) it->backward();
  }
}

Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              Activation act) {
  check_defined(x, "linear");
  check_defined(weight, "linear");
  check_defined(bias, "linear");
  require(x.cols() == weight.rows() && bias.rows() == 1 && bias.cols() == weight.cols(),
          ErrorCode::Dimension,
          "linear: x" + shape_str(x) + " W" + shape_str(weight) + " b" + shape_str(bias));
  const std::size_t p = x.rows(), cin = x.cols(), cout = weight.cols();
  const auto xv = x.values();
  const auto wv = weight.values();
  const auto bv = bias.values();
  std::vector<double> y(p * cout);
  for (std::size_t r = 0; r < p; ++r) {
    double* yr = y.data() + r * cout;
    std::copy(bv.begin(), bv.end(), yr);
    for (std::size_t i = 0; i < cin; ++i) {
      const double xi = xv[r * cin + i];
      const double* wi = wv.data() + i * cout;
      for (std::size_t o = 0; o < cout; ++o) yr[o] += xi * wi[o];
    }
    if (act == Activation::Relu) {
      for (std::size_t o = 0; o < cout; ++o) yr[o] = yr[o] > 0.0 ? yr[o] : 0.0;
    }
  }
  const bool grad = tape.records({&x, &weight, &bias});
  Tensor out = make_output(tape, p, cout, std::move(y), grad, "linear");
  if (grad) {
    tape.push(out, [x, weight, bias, out, act, p, cin, cout]() mutable {
      const auto gy_raw = out.grad();
      const auto yv = out.values();
      std::vector<double> gy(gy_raw.begin(), gy_raw.end());
      if (act == Activation::Relu) {
        for (std::size_t k = 0; k < gy.size(); ++k) {
          if (yv[k] <= 0.0) gy[k] = 0.0;
        }
      }
      if (x.requires_grad()) {
        auto gx = x.grad_mut();
        const auto wv = weight.values();
        for (std::size_t r = 0; r < p; ++r) {
          for (std::size_t i = 0; i < cin; ++i) {
            double acc = 0.0;
            const double* wi = wv.data() + i * cout;
            for (std::size_t o = 0; o < cout; ++o) acc += gy[r * cout + o] * wi[o];
            gx[r * cin + i] += acc;
          }
        }
      }
      if (weight.requires_grad()) {
        auto gw = weight.grad_mut();
        const auto xv = x.values();
        for (std::size_t r = 0; r < p; ++r) {
          for (std::size_t i = 0; i < cin; ++i) {
            const double xi = xv[r * cin + i];
            double* gwi = gw.data() + i * cout;
            for (std::size_t o = 0; o < cout; ++o) gwi[o] += xi * gy[r * cout + o];
          }
        }
      }
      if (bias.requires_grad()) {
        auto gb = bias.grad_mut();
        for (std::size_t r = 0; r < p; ++r) {
          for (std::size_t o = 0; o < cout; ++o) gb[o] += gy[r * cout + o];
        }
      }
    });
  }
  return out;
}

PoolResult max_pool_segments(Tape& tape, const Tensor& x, std::size_t segment_rows) {
  check_defined(x, "max_pool");
  require(segment_rows > 0 && x.rows() > 0, ErrorCode::EmptyGroup, "max_pool: empty group");
  require(x.rows() % segment_rows == 0, ErrorCode::Dimension,
          "max_pool: " + std::to_string(x.rows()) + " rows not divisible into segments of " +
              std::to_string(segment_rows));
  const std::size_t segments = x.rows() / segment_rows, c = x.cols();
  const auto xv = x.values();
  std::vector<double> y(segments * c);
  std::vector<std::size_t> arg(segments * c);
  for (std::size_t s = 0; s < segments; ++s) {
    const std::size_t base = s * segment_rows;
    for (std::size_t ch = 0; ch < c; ++ch) {
      std::size_t best = base;
      double best_v = xv[base * c + ch];
      for (std::size_t r = base + 1; r < base + segment_rows; ++r) {
        if (xv[r * c + ch] > best_v) {
          best_v = xv[r * c + ch];
          best = r;
        }
      }
      y[s * c + ch] = best_v;
      arg[s * c + ch] = best;
    }
  }
  const bool grad = tape.records({&x});
  Tensor out = make_output(tape, segments, c, std::move(y), grad, "max_pool");
  if (grad) {
    tape.push(out, [x, out, arg, c]() mutable {
      auto gx = x.grad_mut();
      const auto gy = out.grad();
      for (std::size_t k = 0; k < arg.size(); ++k) gx[arg[k] * c + k % c] += gy[k];
    });
  }
  return {std::move(out), std::move(arg)};
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_channels");
  check_defined(b, "concat_channels");
  require(a.rows() == b.rows(), ErrorCode::Dimension,
          "concat_channels: point counts differ " + shape_str(a) + " vs " + shape_str(b));
  const std::size_t p = a.rows(), ca = a.cols(), cb = b.cols();
  std::vector<double> y;
  y.reserve(p * (ca + cb));
  const auto av = a.values(), bv = b.values();
  for (std::size_t r = 0; r < p; ++r) {
    y.insert(y.end(), av.begin() + r * ca, av.begin() + (r + 1) * ca);
    y.insert(y.end(), bv.begin() + r * cb, bv.begin() + (r + 1) * cb);
  }
  const bool grad = tape.records({&a, &b});
  Tensor out = make_output(tape, p, ca + cb, std::move(y), grad, "concat_channels");
  if (grad) {
    tape.push(out, [a, b, out, p, ca, cb]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t i = 0; i < ca; ++i) ga[r * ca + i] += gy[r * (ca + cb) + i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t r = 0; r < p; ++r)
          for (std::size_t i = 0; i < cb; ++i) gb[r * cb + i] += gy[r * (ca + cb) + ca + i];
      }
    });
  }
  return out;
}

Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  check_defined(a, "concat_rows");
  check_defined(b, "concat_rows");
  require(a.cols() == b.cols(), ErrorCode::Dimension,
          "concat_rows: channel counts differ " + shape_str(a) + " vs " + shape_str(b));
  std::vector<double> y(a.values().begin(), a.values().end());
  y.insert(y.end(), b.values().begin(), b.values().end());
  const bool grad = tape.records({&a, &b});
  Tensor out = make_output(tape, a.rows() + b.rows(), a.cols(), std::move(y), grad, "concat_rows");
  if (grad) {
    tape.push(out, [a, b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += gy[k];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        const std::size_t off = a.size();
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += gy[off + k];
      }
    });
  }
  return out;
}

Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index) {
  check_defined(x, "gather_rows");
  const std::size_t c = x.cols();
  std::vector<double> y;
  y.reserve(index.size() * c);
  const auto xv = x.values();
  for (std::size_t i : index) {
    require(i < x.rows(), ErrorCode::Dimension,
            "gather_rows: index " + std::to_string(i) + " out of range for " + shape_str(x));
    y.insert(y.end(), xv.begin() + i * c, xv.begin() + (i + 1) * c);
  }
  const bool grad = tape.records({&x});
  Tensor out = make_output(tape, index.size(), c, std::move(y), grad, "gather_rows");
  if (grad) {
    std::vector<std::size_t> idx(index.begin(), index.end());
    tape.push(out, [x, out, idx = std::move(idx), c]() mutable {
      auto gx = x.grad_mut();
      const auto gy = out.grad();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t ch = 0; ch < c; ++ch) gx[idx[r] * c + ch] += gy[r * c + ch];
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_defined(a, "add");
  check_defined(b, "add");
  require(a.shape() == b.shape(), ErrorCode::Dimension,
          "add: " + shape_str(a) + " vs " + shape_str(b));
  std::vector<double> y(a.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = a.values()[k] + b.values()[k];
  const bool grad = tape.records({&a, &b});
  Tensor out = make_output(tape, a.rows(), a.cols(), std::move(y), grad, "add");
  if (grad) {
    tape.push(out, [a, b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += gy[k];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += gy[k];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_defined(a, "mul");
  check_defined(b, "mul");
  require(a.shape() == b.shape(), ErrorCode::Dimension,
          "mul: " + shape_str(a) + " vs " + shape_str(b));
  std::vector<double> y(a.size());
  for (std::size_t k = 0; k < y.size(); ++k) y[k] = a.values()[k] * b.values()[k];
  const bool grad = tape.records({&a, &b});
  Tensor out = make_output(tape, a.rows(), a.cols(), std::move(y), grad, "mul");
  if (grad) {
    tape.push(out, [a, b, out]() mutable {
      const auto gy = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad_mut();
        for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += gy[k] * b.values()[k];
      }
      if (b.requires_grad()) {
        auto gb = b.grad_mut();
        for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += gy[k] * a.values()[k];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& x, double s) {
  check_defined(x, "scale");
  std::vector<double> y(x.values().begin(), x.values().end());
  for (double& v : y) v *= s;
  const bool grad = tape.records({&x});
  Tensor out = make_output(tape, x.rows(), x.cols(), std::move(y), grad, "scale");
  if (grad) {
    tape.push(out, [x, out, s]() mutable {
      auto gx = x.grad_mut();
      const auto gy = out.grad();
      for (std::size_t k = 0; k < gx.size(); ++k) gx[k] += s * gy[k];
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& x) {
  check_defined(x, "sum");
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  const bool grad = tape.records({&x});
  Tensor out = make_output(tape, 1, 1, {acc}, grad, "sum");
  if (grad) {
    tape.push(out, [x, out]() mutable {
      auto gx = x.grad_mut();
      const double g = out.grad()[0];
      for (double& v : gx) v += g;
    });
  }
  return out;
}

Mlp::Mlp(std::vector<Linear> layers) : layers_(std::move(layers)) {
  require(!layers_.empty(), ErrorCode::Dimension, "Mlp: no layers");
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Linear& l = layers_[i];
    require(l.weight.defined() && l.bias.defined() && l.bias.rows() == 1 &&
                l.bias.cols() == l.weight.cols(),
            ErrorCode::Dimension, "Mlp: layer " + std::to_string(i) + " malformed");
    if (i + 1 < layers_.size()) {
      require(l.out_dim() == layers_[i + 1].in_dim(), ErrorCode::Dimension,
              "Mlp: layer " + std::to_string(i) + " output width " +
                  std::to_string(l.out_dim()) + " does not feed layer input width " +
                  std::to_string(layers_[i + 1].in_dim()));
    }
  }
}

Mlp Mlp::init(std::span<const std::size_t> dims, Activation last, Rng& rng) {
  require(dims.size() >= 2, ErrorCode::Dimension, "Mlp::init: need at least input and output dims");
  std::vector<Linear> layers;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t cin = dims[i], cout = dims[i + 1];
    require(cin > 0 && cout > 0, ErrorCode::Dimension, "Mlp::init: zero width");
    const double bound = std::sqrt(6.0 / static_cast<double>(cin));
    std::vector<double> w(cin * cout);
    for (double& v : w) v = rng.uniform(-bound, bound);
    Linear l;
    l.weight = Tensor::from(cin, cout, std::move(w), true);
    l.bias = Tensor::zeros(1, cout, true);
    l.act = (i + 2 == dims.size()) ? last : Activation::Relu;
    layers.push_back(std::move(l));
  }
  return Mlp(std::move(layers));
}

Tensor Mlp::forward(Tape& tape, const Tensor& x) const {
  require(!layers_.empty(), ErrorCode::Dimension, "Mlp::forward: empty MLP");
  Tensor h = x;
  for (const Linear& l : layers_) h = linear(tape, h, l.weight, l.bias, l.act);
  return h;
}

std::size_t Mlp::in_dim() const { return layers_.empty() ? 0 : layers_.front().in_dim(); }
std::size_t Mlp::out_dim() const { return layers_.empty() ? 0 : layers_.back().out_dim(); }

std::vector<Tensor> Mlp::parameters() const {
  std::vector<Tensor> out;
  for (const Linear& l : layers_) {
    out.push_back(l.weight);
    out.push_back(l.bias);
  }
  return out;
}

}  // namespace dpn
