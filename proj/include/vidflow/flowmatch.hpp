// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <vector>

#include "vidflow/nn.hpp"
#include "vidflow/optim.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

// Flow matching with the convention t = 0 at noise and t = 1 at data:
// x_t = (1 - t) x0 + t x1, target velocity x1 - x0.

namespace vf {

enum class TimestepKind { kUniform, kLogitNormal };

/// Sampled training times are clamped into [kTimeClamp, 1 - kTimeClamp].
inline constexpr double kTimeClamp = 1e-5;

struct TimestepSampler {
  TimestepKind kind = TimestepKind::kUniform;
  double logit_mean = 0.0;
  double logit_std = 1.0;
  double train_shift = 1.0;

  void validate() const;
};

/// t' = t / (s - (s - 1) t). Monotone bijection of [0, 1] with t' <= t for
/// s > 1, pushing mass toward the noise end. Requires s >= 1.
double shift_transform(double t, double s);
/// The same map for any s > 0; shift_transform_any(., 1/s) inverts shift s.
double shift_transform_any(double t, double s);

double sample_timestep(const TimestepSampler& sampler, Rng& rng);

Tensor interpolate(const Tensor& x0, const Tensor& x1, double t);
/// Batched form: one t per index of the leading axis.
Tensor interpolate(const Tensor& x0, const Tensor& x1, std::span<const double> t);
Tensor velocity_target(const Tensor& x0, const Tensor& x1);
/// Mean over every element of the squared difference.
Tensor fm_loss(const Tensor& v_pred, const Tensor& v_target);

struct FlowBatch {
  Tensor x0;  // noise
  Tensor x1;  // data
  std::vector<double> t;
  Tensor cond;

  std::size_t size() const { return t.size(); }
};

/// Draws x0 ~ N(0, I) and one timestep per sample.
FlowBatch make_flow_batch(Tensor x1, Tensor cond, const TimestepSampler& sampler, Rng& rng);

/// One optimizer step on the flow-matching loss. Returns the loss.
double train_step(VelocityModel& model, const FlowBatch& batch, Optimizer& opt);

/// One step over several homogeneous sub-batches (e.g. an image part with a
/// single latent frame and a video part). The loss is the sample-weighted
/// mean of the per-part losses.
double train_step_joint(VelocityModel& model, std::span<const FlowBatch> parts, Optimizer& opt);

/// Flow-matching step plus an anchor penalty weight * mean((v - v_ref)^2)
/// against a frozen reference model. Returns the total loss.
double sft_step(VelocityModel& model, VelocityModel& reference, const FlowBatch& batch, Optimizer& opt,
                double anchor_weight);

/// Image/video mixing by sample count.
struct JointRatio {
  std::size_t images = 4;
  std::size_t videos = 1;
};

}  // namespace vf
