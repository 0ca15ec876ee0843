// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/flowmatch.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "vidflow/error.hpp"

namespace vf {

void TimestepSampler::validate() const {
  if (kind == TimestepKind::kLogitNormal && !(logit_std > 0)) {
    throw ConfigError("logit-normal timestep sampler needs logit_std > 0");
  }
  if (!(train_shift >= 1.0)) throw ConfigError("train_shift must be >= 1");
}

double shift_transform_any(double t, double s) { return t / (s - (s - 1.0) * t); }

double shift_transform(double t, double s) {
  if (!(s >= 1.0)) throw ConfigError("shift must be >= 1, got " + std::to_string(s));
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("shift_transform: t outside [0,1]");
  if (s == 1.0) return t;
  return shift_transform_any(t, s);
}

double sample_timestep(const TimestepSampler& sampler, Rng& rng) {
  sampler.validate();
  double t;
  if (sampler.kind == TimestepKind::kUniform) {
    t = rng.uniform_open();
  } else {
    const double z = sampler.logit_mean + sampler.logit_std * rng.normal();
    t = 1.0 / (1.0 + std::exp(-z));
  }
  t = shift_transform(t, sampler.train_shift);
  return std::clamp(t, kTimeClamp, 1.0 - kTimeClamp);
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw ContractError("interpolate: t outside [0,1]");
  if (x0.shape() != x1.shape()) throw ShapeError("interpolate: x0/x1 shapes differ");
  if (t == 0.0) return add_scalar(x0, 0.0);
  if (t == 1.0) return add_scalar(x1, 0.0);
  return add(scale(x0, 1.0 - t), scale(x1, t));
}

Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t) {
  if (x0.shape() != x1.shape()) throw ShapeError("interpolate: x0/x1 shapes differ");
  if (x0.rank() == 0 || t.size() != x0.dim(0)) throw ShapeError("interpolate: need one t per sample");
  for (double ti : t)
    if (!(ti >= 0.0 && ti <= 1.0)) throw ContractError("interpolate: t outside [0,1]");
  const std::size_t per = x0.numel() / t.size();
  std::vector<double> w(x0.numel());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = t[i / per];
  auto tw = Tensor::from(x0.shape(), w);
  for (auto& v : w) v = 1.0 - v;
  auto sw = Tensor::from(x0.shape(), std::move(w));
  return add(mul(x0, sw), mul(x1, tw));
}

Tensor velocity_target(const Tensor& x0, const Tensor& x1) {
  if (x0.shape() != x1.shape()) throw ShapeError("velocity_target: x0/x1 shapes differ");
  return sub(x1, x0);
}

Tensor fm_loss(const Tensor& v_pred, const Tensor& v_target) {
  if (v_pred.shape() != v_target.shape()) {
    throw ShapeError("fm_loss: prediction " + to_string(v_pred.shape()) + " vs target " + to_string(v_target.shape()));
  }
  return mean(square(sub(v_pred, v_target)));
}

FlowBatch make_flow_batch(Tensor x1, Tensor cond, const TimestepSampler& sampler, Rng& rng) {
  FlowBatch b;
  b.x0 = Tensor::randn(x1.shape(), rng);
  b.t.resize(x1.dim(0));
  for (auto& t : b.t) t = sample_timestep(sampler, rng);
  b.x1 = std::move(x1);
  b.cond = std::move(cond);
  return b;
}

namespace {

[[noreturn]] void non_finite(const char* what, double loss, const FlowBatch& b, const VelocityModel& model) {
  std::ostringstream os;
  os << what << ": non-finite loss " << loss << " (batch " << b.size() << ", t in [";
  if (!b.t.empty()) os << *std::min_element(b.t.begin(), b.t.end()) << ", " << *std::max_element(b.t.begin(), b.t.end());
  os << "]";
  for (auto& [name, p] : model.named_parameters()) {
    double s = 0;
    for (double v : p.values()) s += v * v;
    if (!std::isfinite(s)) os << ", non-finite parameter " << name;
  }
  os << ")";
  throw NumericError(os.str());
}

Tensor batch_loss(VelocityModel& model, const FlowBatch& b) {
  auto xt = interpolate(b.x0, b.x1, b.t);
  auto v = model.velocity(xt, b.t, b.cond);
  return fm_loss(v, velocity_target(b.x0, b.x1));
}

}  // namespace

double train_step(VelocityModel& model, const FlowBatch& batch, Optimizer& opt) {
  auto loss = batch_loss(model, batch);
  const double value = loss.item();
  if (!std::isfinite(value)) non_finite("train_step", value, batch, model);
  backward(loss);
  opt.step();
  return value;
}

double train_step_joint(VelocityModel& model, std::span<const FlowBatch> parts, Optimizer& opt) {
  std::size_t total = 0;
  for (const auto& p : parts) total += p.size();
  if (total == 0) throw ContractError("train_step_joint: empty batch");
  Tensor loss;
  for (const auto& p : parts) {
    if (p.size() == 0) continue;
    auto part = scale(batch_loss(model, p), static_cast<double>(p.size()) / static_cast<double>(total));
    loss = loss.defined() ? add(loss, part) : part;
  }
  const double value = loss.item();
  if (!std::isfinite(value)) non_finite("train_step_joint", value, parts.front(), model);
  backward(loss);
  opt.step();
  return value;
}

double sft_step(VelocityModel& model, VelocityModel& reference, const FlowBatch& batch, Optimizer& opt,
                double anchor_weight) {
  auto xt = interpolate(batch.x0, batch.x1, batch.t);
  auto v = model.velocity(xt, batch.t, batch.cond);
  auto loss = fm_loss(v, velocity_target(batch.x0, batch.x1));
  if (anchor_weight != 0.0) {
    Tensor v_ref;
    {
      NoGradGuard guard;
      v_ref = reference.velocity(xt, batch.t, batch.cond);
    }
    loss = add(loss, scale(mean(square(sub(v, v_ref))), anchor_weight));
  }
  const double value = loss.item();
  if (!std::isfinite(value)) non_finite("sft_step", value, batch, model);
  backward(loss);
  opt.step();
  return value;
}

}  // namespace vf
