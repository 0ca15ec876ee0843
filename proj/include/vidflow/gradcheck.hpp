// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vidflow/tensor.hpp"

namespace vf {

struct GradCheckReport {
  /// Max relative error per parameter, in the order the parameters were given.
  std::vector<double> per_param;
  double max_rel_error = 0.0;
  bool finite = true;
  bool passed = false;
  std::string diagnostic;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. Relative error is |a - n| / max(|a|, |n|, floor).
/// `f` is re-evaluated with recording disabled for the numerical side.
GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double h, double tol,
                           double floor = 1e-6);

}  // namespace vf
