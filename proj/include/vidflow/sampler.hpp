// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <ostream>
#include <vector>

#include "vidflow/nn.hpp"
#include "vidflow/tensor.hpp"

namespace vf {

struct SampleSchedule {
  /// t_0 = 0 < t_1 < ... < t_N = 1
  std::vector<double> t;

  std::size_t steps() const { return t.size() - 1; }
  double delta(std::size_t i) const { return t[i + 1] - t[i]; }
};

/// t_i = shift_transform(i / N, s).
SampleSchedule make_schedule(std::size_t steps, double shift);

struct GuidanceConfig {
  double scale = 6.0;
  /// Conditioning for the empty prompt, [cond_dim] or [B, cond_dim].
  /// Undefined means zeros.
  Tensor uncond;
};

/// v_u + scale * (v_c - v_u)
Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale);

struct TraceRow {
  std::size_t step;
  double t;
  double dt;
  double state_norm;
};

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows);

/// x <- x + dt_i * v(x, t_i) for every step, without recording. With
/// guidance scale 1 (or no conditioning) the model runs once per step.
Tensor euler_sample(VelocityModel& model, const Tensor& x0, const SampleSchedule& schedule,
                    const GuidanceConfig& guidance, const Tensor& cond, std::vector<TraceRow>* trace = nullptr);

/// Same update without guidance, recording model calls only for steps in
/// `grad_steps`; the model input is always stop_gradient(x). Values match
/// euler_sample with scale 1 bit for bit.
Tensor sample_with_selected_grads(VelocityModel& model, const Tensor& x0, const SampleSchedule& schedule,
                                  const std::vector<std::size_t>& grad_steps, const Tensor& cond);

}  // namespace vf
