// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "vidflow/rng.hpp"

namespace vf {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

namespace detail {
struct TensorImpl;
}

/// Passed to a backward rule. `in_grads[i]` is empty when input i does not
/// record, in which case the rule must skip it.
struct GradContext {
  std::span<const double> out_grad;
  std::span<const double> out_values;
  std::vector<std::span<double>> in_grads;

  bool wants(std::size_t i) const { return !in_grads[i].empty(); }
};

using BackwardFn = std::function<void(GradContext&)>;

/// Dense row-major float64 tensor with optional reverse-mode recording.
///
/// Copies share storage: a Tensor is a handle, like a parameter reference in
/// most frameworks. A tensor records when it is a parameter (`requires_grad`)
/// or was produced by an op whose inputs recorded while recording was
/// enabled on this thread. Tensors created under a NoGradGuard never acquire
/// a node.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  static Tensor parameter(Shape shape, std::vector<double> values);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> values() const;
  /// In-place access; only meaningful on leaves (optimizer updates, tests).
  std::span<double> mutable_values();
  double item() const;
  double operator[](std::size_t flat_index) const { return values()[flat_index]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool records() const;
  bool has_node() const;
  /// Name of the producing op, or "leaf".
  std::string op_name() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Value copy that never records.
  Tensor detach() const;

  /// Identity of the underlying storage.
  const void* id() const { return impl_.get(); }

  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

/// Disables recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool recording_enabled();

/// While alive, logs every node recorded on this thread and the order in
/// which backward visits nodes.
class GradTape {
 public:
  struct Entry {
    std::uint64_t seq;
    std::string op;
  };

  GradTape();
  ~GradTape();
  GradTape(const GradTape&) = delete;
  GradTape& operator=(const GradTape&) = delete;

  const std::vector<Entry>& recorded() const { return recorded_; }
  const std::vector<std::uint64_t>& backward_order() const { return backward_order_; }

 private:
  friend struct TapeAccess;
  std::vector<Entry> recorded_;
  std::vector<std::uint64_t> backward_order_;
  GradTape* previous_;
};

/// Builds an op result. A node is attached only when recording is enabled and
/// at least one input records. Exposed so callers can add custom ops.
Tensor record_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 BackwardFn backward);

/// Populates `grad` on every recording ancestor of `loss`. Leaf gradients
/// accumulate across calls; intermediate gradients are recomputed.
void backward(const Tensor& loss);

void zero_grad(std::span<Tensor> params);

// Elementwise, identical shapes.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);
Tensor square(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor silu(const Tensor& a);
/// tanh approximation.
Tensor gelu(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);

// Trailing-axis broadcast: `row` has one entry per element of the last axis.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor mul_row(const Tensor& a, const Tensor& row);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduces one axis away.
Tensor sum_axis(const Tensor& a, std::size_t axis);
Tensor mean_axis(const Tensor& a, std::size_t axis);

Tensor softmax(const Tensor& x, std::size_t axis);
/// y = gain * x / sqrt(mean(x^2) + eps) over the last axis. eps >= 0.
Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps);
/// Non-affine layer normalization over the last axis.
Tensor layer_norm(const Tensor& x, double eps);

Tensor reshape(const Tensor& a, Shape shape);
/// out[i] = a[indices[i]], laid out as `shape`.
Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);

/// Same values, never records, and contributes nothing to x's gradient.
Tensor stop_gradient(const Tensor& x);

/// Pairwise rotation of the last axis: (x[2i], x[2i+1]) rotated by the angle
/// whose cosine/sine are given per row. x is [rows, d]; cos/sin are
/// [rows, d/2] constants.
Tensor rotate_pairs(const Tensor& x, std::vector<double> cos, std::vector<double> sin);

}  // namespace vf
