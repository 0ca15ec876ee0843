// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "vidflow/error.hpp"

namespace vf {

GradCheckReport grad_check(const std::function<Tensor()>& f, std::vector<Tensor> params, double h, double tol,
                           double floor) {
  if (!(h > 0)) throw ContractError("grad_check: h must be positive");
  GradCheckReport report;
  for (auto& p : params) p.zero_grad();
  const Tensor loss = f();
  if (!std::isfinite(loss.item())) {
    report.finite = false;
    report.diagnostic = "non-finite loss at the base point";
    return report;
  }
  backward(loss);

  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = params[k];
    std::vector<double> analytic = p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                                : std::vector<double>(p.numel(), 0.0);
    double worst = 0.0;
    auto vals = p.mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      const double saved = vals[i];
      double fp, fm;
      {
        NoGradGuard guard;
        vals[i] = saved + h;
        fp = f().item();
        vals[i] = saved - h;
        fm = f().item();
      }
      vals[i] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      if (!std::isfinite(numeric) || !std::isfinite(analytic[i])) {
        report.finite = false;
        report.diagnostic = "non-finite gradient at param " + std::to_string(k) + " element " + std::to_string(i);
        report.per_param.push_back(INFINITY);
        report.max_rel_error = INFINITY;
        return report;
      }
      const double denom = std::max({std::fabs(analytic[i]), std::fabs(numeric), floor});
      worst = std::max(worst, std::fabs(analytic[i] - numeric) / denom);
    }
    report.per_param.push_back(worst);
    report.max_rel_error = std::max(report.max_rel_error, worst);
  }
  report.passed = report.max_rel_error < tol;
  if (!report.passed) report.diagnostic = "max relative error " + std::to_string(report.max_rel_error);
  return report;
}

}  // namespace vf
