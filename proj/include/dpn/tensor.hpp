#pragma once

// Dense row-major matrices with a reverse-mode tape.
//
// Every learned quantity in the library is a rows x cols matrix: point rows by
// channel columns. Scalars are 1x1. A Tensor is a shared handle; its values are
// never modified after construction, only its gradient buffer is.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <vector>

namespace dpn {

class Rng;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const noexcept { return rows * cols; }
  friend bool operator==(const Shape&, const Shape&) = default;
};

class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false) {
    return from(1, 1, {v}, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  Shape shape() const noexcept { return impl_ ? impl_->shape : Shape{}; }
  std::size_t rows() const noexcept { return shape().rows; }
  std::size_t cols() const noexcept { return shape().cols; }
  std::size_t size() const noexcept { return shape().size(); }

  std::span<const double> values() const noexcept { return impl_->values; }
  double at(std::size_t r, std::size_t c) const { return impl_->values[r * impl_->shape.cols + c]; }
  double item() const;

  bool requires_grad() const noexcept { return impl_ && impl_->requires_grad; }
  bool has_grad() const noexcept { return impl_ && !impl_->grad.empty(); }
  std::span<const double> grad() const noexcept { return impl_->grad; }
  /// Gradient buffer, allocated (zeroed) on first access.
  std::span<double> grad_mut() const;
  void zero_grad() const;

  /// Parameters are updated in place by optimizers; nothing else should call this.
  std::span<double> mutable_values() noexcept { return impl_->values; }

  /// True if both handles refer to the same storage.
  bool same(const Tensor& o) const noexcept { return impl_ == o.impl_; }

 private:
  struct Impl {
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Impl> impl_;
};

/// Records the backward closures of one forward pass.
///
/// A disabled tape records nothing (inference) but still tallies the bytes of
/// every tensor the ops produce, which the bench harness reports as the
/// activation-memory estimate.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool enabled() const noexcept { return enabled_; }
  bool records(std::initializer_list<const Tensor*> inputs) const noexcept;

  void push(Tensor output, std::function<void()> backward);
  void note_alloc(const Tensor& t) noexcept { bytes_ += t.size() * sizeof(double); }

  /// Reverse sweep from a 1x1 root. Intermediate gradients are reset first;
  /// leaf gradients (parameters, inputs) accumulate across calls.
  void backward(const Tensor& root);

  std::size_t num_entries() const noexcept { return entries_.size(); }
  std::size_t bytes_allocated() const noexcept { return bytes_; }

 private:
  struct Entry {
    Tensor output;
    std::function<void()> backward;
  };
  bool enabled_;
  std::vector<Entry> entries_;
  std::size_t bytes_ = 0;
};

enum class Activation { Identity, Relu };

// Ops. Each throws dpn::Error(Dimension) on shape mismatch and
// dpn::Error(Numeric) if a finite input yields a non-finite output.

/// act(x W + b); x: P x Cin, W: Cin x Cout, b: 1 x Cout.
Tensor linear(Tape& tape, const Tensor& x, const Tensor& weight, const Tensor& bias,
              Activation act);

struct PoolResult {
  Tensor values;                     // segments x C
  std::vector<std::size_t> argmax;   // segments*C source rows, lowest index on ties
};

/// Channelwise max over consecutive blocks of `segment_rows` rows.
PoolResult max_pool_segments(Tape& tape, const Tensor& x, std::size_t segment_rows);

/// Channelwise max over all rows (1 x C).
inline PoolResult max_pool_over_points(Tape& tape, const Tensor& x) {
  return max_pool_segments(tape, x, x.rows());
}

Tensor concat_channels(Tape& tape, const Tensor& a, const Tensor& b);
Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b);
/// out[i] = x[index[i]]; backward scatter-adds.
Tensor gather_rows(Tape& tape, const Tensor& x, std::span<const std::size_t> index);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double s);
Tensor sum(Tape& tape, const Tensor& x);

struct Linear {
  Tensor weight;  // Cin x Cout
  Tensor bias;    // 1 x Cout
  Activation act = Activation::Relu;

  std::size_t in_dim() const noexcept { return weight.rows(); }
  std::size_t out_dim() const noexcept { return weight.cols(); }
};

/// Shared MLP: the same layers applied to every row.
class Mlp {
 public:
  Mlp() = default;
  explicit Mlp(std::vector<Linear> layers);

  /// dims = {Cin, h1, ..., Cout}. Hidden layers use ReLU; the last layer uses
  /// `last`. Weights are uniform in +-sqrt(6 / fan_in), biases zero.
  static Mlp init(std::span<const std::size_t> dims, Activation last, Rng& rng);

  Tensor forward(Tape& tape, const Tensor& x) const;

  std::size_t in_dim() const;
  std::size_t out_dim() const;
  const std::vector<Linear>& layers() const noexcept { return layers_; }
  std::vector<Tensor> parameters() const;

 private:
  std::vector<Linear> layers_;
};

}  // namespace dpn
