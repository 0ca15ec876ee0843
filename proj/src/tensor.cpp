// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <unordered_set>

#include "vidflow/error.hpp"

namespace vf {

namespace detail {

struct Node {
  std::uint64_t seq = 0;
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  bool records() const { return requires_grad || node != nullptr; }
};

}  // namespace detail

using detail::Node;
using detail::TensorImpl;

namespace {

thread_local bool t_recording = true;
thread_local std::uint64_t t_next_seq = 0;
thread_local GradTape* t_tape = nullptr;

std::shared_ptr<TensorImpl> make_impl(Shape shape, std::vector<double> values) {
  if (numel(shape) != values.size()) {
    throw ShapeError("tensor of shape " + to_string(shape) + " given " + std::to_string(values.size()) +
                     " values");
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  return impl;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

void require_defined(const char* op, const Tensor& a) {
  if (!a.defined()) throw ContractError(std::string(op) + ": undefined tensor");
}

// Splits a shape around `axis` into (outer, extent, inner).
struct AxisView {
  std::size_t outer = 1, extent = 1, inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.extent = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <class F, class DF>
Tensor unary(const char* op, const Tensor& a, F f, DF df) {
  require_defined(op, a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  return record_op(op, a.shape(), std::move(out), {a}, [a, df](GradContext& ctx) {
    auto x = a.values();
    for (std::size_t i = 0; i < x.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i] * df(x[i], ctx.out_values[i]);
  });
}

}  // namespace

struct TapeAccess {
  static void on_record(std::uint64_t seq, const char* op) {
    if (t_tape) t_tape->recorded_.push_back({seq, op});
  }
  static void on_visit(std::uint64_t seq) {
    if (t_tape) t_tape->backward_order_.push_back(seq);
  }
};

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

// --- Tensor --------------------------------------------------------------

Tensor Tensor::zeros(Shape shape) {
  const auto n = vf::numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, 0.0)));
}

Tensor Tensor::full(Shape shape, double value) {
  const auto n = vf::numel(shape);
  return Tensor(make_impl(std::move(shape), std::vector<double>(n, value)));
}

Tensor Tensor::from(Shape shape, std::vector<double> values) {
  return Tensor(make_impl(std::move(shape), std::move(values)));
}

Tensor Tensor::scalar(double value) { return Tensor(make_impl({}, {value})); }

Tensor Tensor::parameter(Shape shape, std::vector<double> values) {
  auto impl = make_impl(std::move(shape), std::move(values));
  impl->requires_grad = true;
  return Tensor(std::move(impl));
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  std::vector<double> v(vf::numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(make_impl(std::move(shape), std::move(v)));
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  std::vector<double> v(vf::numel(shape));
  for (auto& x : v) x = lo + (hi - lo) * rng.uniform();
  return Tensor(make_impl(std::move(shape), std::move(v)));
}

const Shape& Tensor::shape() const {
  require_defined("shape", *this);
  return impl_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + to_string(shape()));
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return defined() ? impl_->values.size() : 0; }

std::span<const double> Tensor::values() const {
  require_defined("values", *this);
  return impl_->values;
}

std::span<double> Tensor::mutable_values() {
  require_defined("mutable_values", *this);
  return impl_->values;
}

double Tensor::item() const {
  if (numel() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return defined() && impl_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  require_defined("set_requires_grad", *this);
  if (impl_->node) throw ContractError("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
}

bool Tensor::records() const { return defined() && impl_->records(); }

bool Tensor::has_node() const { return defined() && impl_->node != nullptr; }

std::string Tensor::op_name() const { return has_node() ? impl_->node->op : "leaf"; }

bool Tensor::has_grad() const { return defined() && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!has_grad()) throw ContractError("tensor has no gradient");
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (defined()) impl_->grad.clear();
}

Tensor Tensor::detach() const { return Tensor(make_impl(shape(), impl_->values)); }

// --- recording -----------------------------------------------------------

NoGradGuard::NoGradGuard() : previous_(t_recording) { t_recording = false; }
NoGradGuard::~NoGradGuard() { t_recording = previous_; }

bool recording_enabled() { return t_recording; }

GradTape::GradTape() : previous_(t_tape) { t_tape = this; }
GradTape::~GradTape() { t_tape = previous_; }

Tensor record_op(const char* op, Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                 BackwardFn backward) {
  auto impl = make_impl(std::move(shape), std::move(values));
  if (!t_recording) return Tensor(std::move(impl));
  const bool any = std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.records(); });
  if (!any) return Tensor(std::move(impl));
  auto node = std::make_shared<Node>();
  node->seq = t_next_seq++;
  node->op = op;
  node->inputs.reserve(inputs.size());
  for (auto& in : inputs) node->inputs.push_back(in.impl());
  node->backward = std::move(backward);
  TapeAccess::on_record(node->seq, op);
  impl->node = std::move(node);
  return Tensor(std::move(impl));
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ContractError("backward: loss must be a scalar, got " +
                        (loss.defined() ? to_string(loss.shape()) : std::string("undefined")));
  }
  if (!loss.records()) throw ContractError("backward: loss does not record");

  // Every recording ancestor, then nodes in exact reverse recording order.
  std::vector<TensorImpl*> nodes;
  std::vector<TensorImpl*> leaves;
  std::unordered_set<TensorImpl*> seen;
  std::vector<TensorImpl*> stack{loss.impl().get()};
  seen.insert(stack.back());
  while (!stack.empty()) {
    TensorImpl* t = stack.back();
    stack.pop_back();
    if (t->node) {
      nodes.push_back(t);
      for (auto& in : t->node->inputs) {
        if (in->records() && seen.insert(in.get()).second) stack.push_back(in.get());
      }
    } else {
      leaves.push_back(t);
    }
  }
  std::sort(nodes.begin(), nodes.end(),
            [](const TensorImpl* a, const TensorImpl* b) { return a->node->seq > b->node->seq; });

  for (auto* t : nodes) t->grad.assign(t->values.size(), 0.0);
  for (auto* t : leaves) {
    if (t->grad.size() != t->values.size()) t->grad.assign(t->values.size(), 0.0);
  }
  loss.impl()->grad[0] += 1.0;

  GradContext ctx;
  for (auto* t : nodes) {
    TapeAccess::on_visit(t->node->seq);
    ctx.out_grad = t->grad;
    ctx.out_values = t->values;
    ctx.in_grads.clear();
    for (auto& in : t->node->inputs) {
      ctx.in_grads.push_back(in->records() ? std::span<double>(in->grad) : std::span<double>());
    }
    t->node->backward(ctx);
  }
}

void zero_grad(std::span<Tensor> params) {
  for (auto& p : params) p.zero_grad();
}

// --- elementwise ---------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return record_op("add", a.shape(), std::move(out), {a, b}, [](GradContext& ctx) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (!ctx.wants(k)) continue;
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[k][i] += ctx.out_grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return record_op("sub", a.shape(), std::move(out), {a, b}, [](GradContext& ctx) {
    if (ctx.wants(0))
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i];
    if (ctx.wants(1))
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[1][i] -= ctx.out_grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return record_op("mul", a.shape(), std::move(out), {a, b}, [a, b](GradContext& ctx) {
    auto av = a.values(), bv = b.values();
    if (ctx.wants(0))
      for (std::size_t i = 0; i < av.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i] * bv[i];
    if (ctx.wants(1))
      for (std::size_t i = 0; i < av.size(); ++i) ctx.in_grads[1][i] += ctx.out_grad[i] * av[i];
  });
}

Tensor scale(const Tensor& a, double s) {
  require_defined("scale", a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return record_op("scale", a.shape(), std::move(out), {a}, [s](GradContext& ctx) {
    for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += s * ctx.out_grad[i];
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  require_defined("add_scalar", a);
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + s;
  return record_op("add_scalar", a.shape(), std::move(out), {a}, [](GradContext& ctx) {
    for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor square(const Tensor& a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Tensor exp(const Tensor& a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor tanh(const Tensor& a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor sigmoid(const Tensor& a) {
  return unary(
      "sigmoid", a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor silu(const Tensor& a) {
  return unary(
      "silu", a, [](double x) { return x / (1.0 + std::exp(-x)); },
      [](double x, double) {
        const double s = 1.0 / (1.0 + std::exp(-x));
        return s * (1.0 + x * (1.0 - s));
      });
}

Tensor gelu(const Tensor& a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  return unary(
      "gelu", a, [](double x) { return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x))); },
      [](double x, double) {
        const double u = c * (x + 0.044715 * x * x * x);
        const double th = std::tanh(u);
        const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
        return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du;
      });
}

Tensor abs(const Tensor& a) {
  return unary(
      "abs", a, [](double x) { return std::fabs(x); },
      [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(
      "clamp", a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x, double) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

// --- broadcast -----------------------------------------------------------

namespace {

void require_row(const char* op, const Tensor& a, const Tensor& row) {
  require_defined(op, a);
  require_defined(op, row);
  if (a.rank() == 0 || row.rank() != 1 || row.dim(0) != a.shape().back()) {
    throw ShapeError(std::string(op) + ": row " + to_string(row.shape()) + " does not match trailing axis of " +
                     to_string(a.shape()));
  }
}

}  // namespace

Tensor add_row(const Tensor& a, const Tensor& row) {
  require_row("add_row", a, row);
  const std::size_t n = row.numel();
  auto av = a.values(), rv = row.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + rv[i % n];
  return record_op("add_row", a.shape(), std::move(out), {a, row}, [n](GradContext& ctx) {
    if (ctx.wants(0))
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i];
    if (ctx.wants(1))
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[1][i % n] += ctx.out_grad[i];
  });
}

Tensor mul_row(const Tensor& a, const Tensor& row) {
  require_row("mul_row", a, row);
  const std::size_t n = row.numel();
  auto av = a.values(), rv = row.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * rv[i % n];
  return record_op("mul_row", a.shape(), std::move(out), {a, row}, [a, row, n](GradContext& ctx) {
    auto av = a.values(), rv = row.values();
    if (ctx.wants(0))
      for (std::size_t i = 0; i < av.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i] * rv[i % n];
    if (ctx.wants(1))
      for (std::size_t i = 0; i < av.size(); ++i) ctx.in_grads[1][i % n] += ctx.out_grad[i] * av[i];
  });
}

// --- linear algebra ------------------------------------------------------

namespace {

// c[m,n] += a[m,k] * b[k,n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " + to_string(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.values().data(), b.values().data(), out.data(), m, k, n);
  return record_op("matmul", {m, n}, std::move(out), {a, b}, [a, b, m, k, n](GradContext& ctx) {
    const double* av = a.values().data();
    const double* bv = b.values().data();
    const double* g = ctx.out_grad.data();
    if (ctx.wants(0)) {
      // dA = dC * B^T
      double* ga = ctx.in_grads[0].data();
      for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          const double* brow = bv + p * n;
          const double* grow = g + i * n;
          for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
          ga[i * k + p] += acc;
        }
      }
    }
    if (ctx.wants(1)) {
      // dB = A^T * dC
      double* gb = ctx.in_grads[1].data();
      for (std::size_t i = 0; i < m; ++i) {
        const double* grow = g + i * n;
        for (std::size_t p = 0; p < k; ++p) {
          const double aip = av[i * k + p];
          if (aip == 0.0) continue;
          double* gbrow = gb + p * n;
          for (std::size_t j = 0; j < n; ++j) gbrow[j] += aip * grow[j];
        }
      }
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_defined("transpose", a);
  if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + to_string(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(m * n);
  for (std::size_t j = 0; j < n; ++j)
    for (std::size_t i = 0; i < m; ++i) idx[j * m + i] = i * n + j;
  return gather(a, std::move(idx), {n, m});
}

// --- reductions ----------------------------------------------------------

Tensor sum(const Tensor& a) {
  require_defined("sum", a);
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record_op("sum", {}, {s}, {a}, [](GradContext& ctx) {
    const double g = ctx.out_grad[0];
    for (auto& x : ctx.in_grads[0]) x += g;
  });
}

Tensor mean(const Tensor& a) {
  require_defined("mean", a);
  const double n = static_cast<double>(a.numel());
  double s = 0.0;
  for (double v : a.values()) s += v;
  return record_op("mean", {}, {s / n}, {a}, [n](GradContext& ctx) {
    const double g = ctx.out_grad[0] / n;
    for (auto& x : ctx.in_grads[0]) x += g;
  });
}

Tensor sum_axis(const Tensor& a, std::size_t axis) {
  require_defined("sum_axis", a);
  if (axis >= a.rank()) throw ShapeError("sum_axis: axis out of range for " + to_string(a.shape()));
  const auto v = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  std::vector<double> out(v.outer * v.inner, 0.0);
  auto av = a.values();
  for (std::size_t o = 0; o < v.outer; ++o)
    for (std::size_t e = 0; e < v.extent; ++e)
      for (std::size_t i = 0; i < v.inner; ++i) out[o * v.inner + i] += av[(o * v.extent + e) * v.inner + i];
  return record_op("sum_axis", std::move(out_shape), std::move(out), {a}, [v](GradContext& ctx) {
    for (std::size_t o = 0; o < v.outer; ++o)
      for (std::size_t e = 0; e < v.extent; ++e)
        for (std::size_t i = 0; i < v.inner; ++i)
          ctx.in_grads[0][(o * v.extent + e) * v.inner + i] += ctx.out_grad[o * v.inner + i];
  });
}

Tensor mean_axis(const Tensor& a, std::size_t axis) {
  return scale(sum_axis(a, axis), 1.0 / static_cast<double>(a.dim(axis)));
}

// --- normalization -------------------------------------------------------

Tensor softmax(const Tensor& x, std::size_t axis) {
  require_defined("softmax", x);
  if (axis >= x.rank()) {
    throw ContractError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(x.shape()));
  }
  const auto v = axis_view(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t i = 0; i < v.inner; ++i) {
      const std::size_t base = o * v.extent * v.inner + i;
      double mx = -INFINITY;
      for (std::size_t e = 0; e < v.extent; ++e) mx = std::max(mx, xv[base + e * v.inner]);
      double s = 0.0;
      for (std::size_t e = 0; e < v.extent; ++e) {
        const double z = std::exp(xv[base + e * v.inner] - mx);
        out[base + e * v.inner] = z;
        s += z;
      }
      for (std::size_t e = 0; e < v.extent; ++e) out[base + e * v.inner] /= s;
    }
  }
  return record_op("softmax", x.shape(), std::move(out), {x}, [v](GradContext& ctx) {
    const auto& y = ctx.out_values;
    const auto& g = ctx.out_grad;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t i = 0; i < v.inner; ++i) {
        const std::size_t base = o * v.extent * v.inner + i;
        double dot = 0.0;
        for (std::size_t e = 0; e < v.extent; ++e) dot += g[base + e * v.inner] * y[base + e * v.inner];
        for (std::size_t e = 0; e < v.extent; ++e) {
          const std::size_t k = base + e * v.inner;
          ctx.in_grads[0][k] += y[k] * (g[k] - dot);
        }
      }
    }
  });
}

Tensor rms_norm(const Tensor& x, const Tensor& gain, double eps) {
  require_row("rms_norm", x, gain);
  if (eps < 0) throw ContractError("rms_norm: eps must be non-negative");
  const std::size_t n = gain.numel();
  const std::size_t rows = x.numel() / n;
  auto xv = x.values(), gv = gain.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_rms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double ms = 0.0;
    for (std::size_t j = 0; j < n; ++j) ms += xv[r * n + j] * xv[r * n + j];
    ms /= static_cast<double>(n);
    inv_rms[r] = 1.0 / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = gv[j] * (xv[r * n + j] * inv_rms[r]);
  }
  return record_op("rms_norm", x.shape(), std::move(out), {x, gain},
                   [x, gain, n, rows, inv_rms = std::move(inv_rms)](GradContext& ctx) {
                     auto xv = x.values(), gv = gain.values();
                     const auto& g = ctx.out_grad;
                     for (std::size_t r = 0; r < rows; ++r) {
                       const double ir = inv_rms[r];
                       if (ctx.wants(1))
                         for (std::size_t j = 0; j < n; ++j) ctx.in_grads[1][j] += g[r * n + j] * xv[r * n + j] * ir;
                       if (ctx.wants(0)) {
                         double dot = 0.0;
                         for (std::size_t j = 0; j < n; ++j) dot += g[r * n + j] * gv[j] * xv[r * n + j] * ir;
                         dot /= static_cast<double>(n);
                         for (std::size_t j = 0; j < n; ++j) {
                           const double xhat = xv[r * n + j] * ir;
                           ctx.in_grads[0][r * n + j] += (g[r * n + j] * gv[j] - xhat * dot) * ir;
                         }
                       }
                     }
                   });
}

Tensor layer_norm(const Tensor& x, double eps) {
  require_defined("layer_norm", x);
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  auto xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += xv[r * n + j];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xv[r * n + j] - mu) * (xv[r * n + j] - mu);
    var /= static_cast<double>(n);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) out[r * n + j] = (xv[r * n + j] - mu) * inv_std[r];
  }
  return record_op("layer_norm", x.shape(), std::move(out), {x},
                   [n, rows, inv_std = std::move(inv_std)](GradContext& ctx) {
                     const auto& y = ctx.out_values;
                     const auto& g = ctx.out_grad;
                     for (std::size_t r = 0; r < rows; ++r) {
                       double gm = 0.0, gy = 0.0;
                       for (std::size_t j = 0; j < n; ++j) {
                         gm += g[r * n + j];
                         gy += g[r * n + j] * y[r * n + j];
                       }
                       gm /= static_cast<double>(n);
                       gy /= static_cast<double>(n);
                       for (std::size_t j = 0; j < n; ++j) {
                         ctx.in_grads[0][r * n + j] += inv_std[r] * (g[r * n + j] - gm - y[r * n + j] * gy);
                       }
                     }
                   });
}

// --- layout --------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape shape) {
  require_defined("reshape", a);
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.values().begin(), a.values().end());
  return record_op("reshape", std::move(shape), std::move(out), {a}, [](GradContext& ctx) {
    for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i];
  });
}

Tensor gather(const Tensor& a, std::vector<std::size_t> indices, Shape shape) {
  require_defined("gather", a);
  if (numel(shape) != indices.size()) {
    throw ShapeError("gather: " + std::to_string(indices.size()) + " indices for shape " + to_string(shape));
  }
  auto av = a.values();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= av.size()) throw ShapeError("gather: index out of range");
    out[i] = av[indices[i]];
  }
  return record_op("gather", std::move(shape), std::move(out), {a},
                   [indices = std::move(indices)](GradContext& ctx) {
                     for (std::size_t i = 0; i < indices.size(); ++i) ctx.in_grads[0][indices[i]] += ctx.out_grad[i];
                   });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length) {
  require_defined("slice", a);
  if (axis >= a.rank() || start + length > a.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", " + std::to_string(start + length) + ") on axis " +
                     std::to_string(axis) + " of " + to_string(a.shape()));
  }
  const auto v = axis_view(a.shape(), axis);
  Shape out_shape = a.shape();
  out_shape[axis] = length;
  std::vector<double> out(v.outer * length * v.inner);
  auto av = a.values();
  for (std::size_t o = 0; o < v.outer; ++o) {
    const double* src = av.data() + (o * v.extent + start) * v.inner;
    std::copy(src, src + length * v.inner, out.begin() + static_cast<std::ptrdiff_t>(o * length * v.inner));
  }
  return record_op("slice", std::move(out_shape), std::move(out), {a}, [v, start, length](GradContext& ctx) {
    for (std::size_t o = 0; o < v.outer; ++o) {
      double* dst = ctx.in_grads[0].data() + (o * v.extent + start) * v.inner;
      const double* src = ctx.out_grad.data() + o * length * v.inner;
      for (std::size_t i = 0; i < length * v.inner; ++i) dst[i] += src[i];
    }
  });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ContractError("concat: no inputs");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) throw ShapeError("concat: axis out of range for " + to_string(first));
  std::vector<std::size_t> extents;
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != first.size()) throw ShapeError("concat: rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i != axis && s[i] != first[i]) {
        throw ShapeError("concat: cannot join " + to_string(first) + " and " + to_string(s) + " on axis " +
                         std::to_string(axis));
      }
    }
    extents.push_back(s[axis]);
    total += s[axis];
  }
  Shape out_shape = first;
  out_shape[axis] = total;
  const auto v = axis_view(out_shape, axis);
  std::vector<double> out(numel(out_shape));
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    auto pv = parts[k].values();
    const std::size_t len = extents[k] * v.inner;
    for (std::size_t o = 0; o < v.outer; ++o) {
      std::copy(pv.begin() + static_cast<std::ptrdiff_t>(o * len), pv.begin() + static_cast<std::ptrdiff_t>((o + 1) * len),
                out.begin() + static_cast<std::ptrdiff_t>((o * total + offset) * v.inner));
    }
    offset += extents[k];
  }
  return record_op("concat", std::move(out_shape), std::move(out), parts,
                   [v, total, extents = std::move(extents)](GradContext& ctx) {
                     std::size_t offset = 0;
                     for (std::size_t k = 0; k < extents.size(); ++k) {
                       const std::size_t len = extents[k] * v.inner;
                       if (ctx.wants(k)) {
                         for (std::size_t o = 0; o < v.outer; ++o) {
                           const double* src = ctx.out_grad.data() + (o * total + offset) * v.inner;
                           double* dst = ctx.in_grads[k].data() + o * len;
                           for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
                         }
                       }
                       offset += extents[k];
                     }
                   });
}

Tensor stop_gradient(const Tensor& x) {
  require_defined("stop_gradient", x);
  return Tensor::from(x.shape(), std::vector<double>(x.values().begin(), x.values().end()));
}

Tensor rotate_pairs(const Tensor& x, std::vector<double> cos, std::vector<double> sin) {
  require_defined("rotate_pairs", x);
  if (x.rank() != 2 || x.dim(1) % 2 != 0) throw ShapeError("rotate_pairs: expected [rows, even d], got " + to_string(x.shape()));
  const std::size_t rows = x.dim(0), half = x.dim(1) / 2;
  if (cos.size() != rows * half || sin.size() != rows * half) throw ShapeError("rotate_pairs: angle table size mismatch");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < half; ++i) {
      const double c = cos[r * half + i], s = sin[r * half + i];
      const double a = xv[r * 2 * half + 2 * i], b = xv[r * 2 * half + 2 * i + 1];
      out[r * 2 * half + 2 * i] = a * c - b * s;
      out[r * 2 * half + 2 * i + 1] = a * s + b * c;
    }
  }
  return record_op("rotate_pairs", x.shape(), std::move(out), {x},
                   [rows, half, cos = std::move(cos), sin = std::move(sin)](GradContext& ctx) {
                     for (std::size_t r = 0; r < rows; ++r) {
                       for (std::size_t i = 0; i < half; ++i) {
                         const double c = cos[r * half + i], s = sin[r * half + i];
                         const double g0 = ctx.out_grad[r * 2 * half + 2 * i];
                         const double g1 = ctx.out_grad[r * 2 * half + 2 * i + 1];
                         ctx.in_grads[0][r * 2 * half + 2 * i] += g0 * c + g1 * s;
                         ctx.in_grads[0][r * 2 * half + 2 * i + 1] += -g0 * s + g1 * c;
                       }
                     }
                   });
}

}  // namespace vf
