// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

// Test-only helpers. The finite-difference oracle here is deliberately
// separate from vf::grad_check so the two can cross-check each other.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "vidflow/tensor.hpp"

namespace vftest {

/// Max relative error between recorded gradients and central differences of
/// `f` over every element of `params`.
inline double fd_max_rel_error(const std::function<vf::Tensor()>& f, std::vector<vf::Tensor> params, double h,
                               double floor = 1e-6) {
  for (auto& p : params) p.zero_grad();
  vf::backward(f());
  double worst = 0.0;
  for (auto& p : params) {
    std::vector<double> g(p.numel(), 0.0);
    if (p.has_grad()) g.assign(p.grad().begin(), p.grad().end());
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = f().item();
      v[i] = keep - h;
      const double down = f().item();
      v[i] = keep;
      const double num = (up - down) / (2 * h);
      worst = std::max(worst, std::fabs(num - g[i]) / std::max({std::fabs(num), std::fabs(g[i]), floor}));
    }
  }
  return worst;
}

inline vf::Tensor random_param(vf::Shape shape, vf::Rng& rng, double lo = -2.0, double hi = 2.0) {
  auto t = vf::Tensor::uniform(std::move(shape), rng, lo, hi);
  t.set_requires_grad(true);
  return t;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

}  // namespace vftest
