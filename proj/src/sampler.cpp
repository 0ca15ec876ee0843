// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>

#include "vidflow/error.hpp"
#include "vidflow/flowmatch.hpp"

namespace vf {

SampleSchedule make_schedule(std::size_t steps, double shift) {
  if (steps == 0) throw ConfigError("sampler needs at least one step");
  if (!(shift >= 1.0)) throw ConfigError("inference shift must be >= 1");
  SampleSchedule s;
  s.t.resize(steps + 1);
  for (std::size_t i = 0; i <= steps; ++i) {
    s.t[i] = shift_transform(static_cast<double>(i) / static_cast<double>(steps), shift);
  }
  s.t.front() = 0.0;
  s.t.back() = 1.0;
  return s;
}

Tensor cfg_combine(const Tensor& v_uncond, const Tensor& v_cond, double scale) {
  if (v_uncond.shape() != v_cond.shape()) throw ShapeError("cfg_combine: velocity shapes differ");
  if (scale == 1.0) return v_cond;
  if (scale == 0.0) return v_uncond;
  return add(v_uncond, vf::scale(sub(v_cond, v_uncond), scale));
}

void write_trace_csv(std::ostream& out, const std::vector<TraceRow>& rows) {
  out << "step,t,dt,state_norm\n" << std::setprecision(10);
  for (const auto& r : rows) out << r.step << ',' << r.t << ',' << r.dt << ',' << r.state_norm << '\n';
}

namespace {

double l2(const Tensor& x) {
  double s = 0;
  for (double v : x.values()) s += v * v;
  return std::sqrt(s);
}

void check_finite(const Tensor& x, std::size_t step) {
  for (double v : x.values())
    if (!std::isfinite(v)) throw NumericError("sampler: non-finite state after step " + std::to_string(step));
}

Tensor expand_uncond(const Tensor& uncond, std::size_t batch, std::size_t cond_dim) {
  if (!uncond.defined()) return Tensor::zeros({batch, cond_dim});
  if (uncond.shape() == Shape{batch, cond_dim}) return uncond;
  if (uncond.shape() != Shape{cond_dim}) throw ShapeError("guidance: uncond must be [cond_dim] or [B, cond_dim]");
  std::vector<double> v;
  v.reserve(batch * cond_dim);
  for (std::size_t b = 0; b < batch; ++b) v.insert(v.end(), uncond.values().begin(), uncond.values().end());
  return Tensor::from({batch, cond_dim}, std::move(v));
}

}  // namespace

Tensor euler_sample(VelocityModel& model, const Tensor& x0, const SampleSchedule& schedule,
                    const GuidanceConfig& guidance, const Tensor& cond, std::vector<TraceRow>* trace) {
  NoGradGuard no_grad;
  if (schedule.t.size() < 2) throw ConfigError("sampler: empty schedule");
  if (!(guidance.scale >= 0.0)) throw ConfigError("cfg scale must be >= 0");
  const std::size_t batch = x0.dim(0);
  const bool guided = guidance.scale != 1.0 && cond.defined();
  const Tensor uncond = guided ? expand_uncond(guidance.uncond, batch, model.cond_dim()) : Tensor();
  Tensor x = x0.detach();
  std::vector<double> t(batch);
  for (std::size_t i = 0; i < schedule.steps(); ++i) {
    std::fill(t.begin(), t.end(), schedule.t[i]);
    const double dt = schedule.delta(i);
    Tensor v = model.velocity(x, t, cond);
    if (guided) v = cfg_combine(model.velocity(x, t, uncond), v, guidance.scale);
    x = add(x, scale(v, dt));
    check_finite(x, i);
    if (trace) trace->push_back({i, schedule.t[i], dt, l2(x)});
  }
  return x;
}

Tensor sample_with_selected_grads(VelocityModel& model, const Tensor& x0, const SampleSchedule& schedule,
                                  const std::vector<std::size_t>& grad_steps, const Tensor& cond) {
  std::vector<bool> selected(schedule.steps(), false);
  for (auto s : grad_steps) {
    if (s >= schedule.steps()) throw ContractError("selected step " + std::to_string(s) + " out of range");
    selected[s] = true;
  }
  const std::size_t batch = x0.dim(0);
  Tensor x = x0.detach();
  std::vector<double> t(batch);
  for (std::size_t i = 0; i < schedule.steps(); ++i) {
    std::fill(t.begin(), t.end(), schedule.t[i]);
    const double dt = schedule.delta(i);
    Tensor v;
    if (selected[i]) {
      v = model.velocity(stop_gradient(x), t, cond);
    } else {
      NoGradGuard no_grad;
      v = model.velocity(stop_gradient(x), t, cond);
    }
    x = add(x, scale(v, dt));
    check_finite(x, i);
  }
  return x;
}

}  // namespace vf
