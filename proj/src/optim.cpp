// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/optim.hpp"

#include <cmath>

namespace vf {

double grad_norm(const std::vector<Tensor>& params) {
  double s = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double g : p.grad()) s += g * g;
  }
  return std::sqrt(s);
}

double clip_grad_norm(std::vector<Tensor>& params, double max_norm) {
  const double norm = grad_norm(params);
  if (max_norm > 0 && norm > max_norm) {
    const double c = max_norm / norm;
    for (auto& p : params) {
      if (!p.has_grad()) continue;
      for (auto& g : p.mutable_grad()) g *= c;
    }
  }
  return norm;
}

Sgd::Sgd(std::vector<Tensor> params, double lr, bool ascend) : params_(std::move(params)), lr_(lr), ascend_(ascend) {}

void Sgd::step() {
  const double sign = ascend_ ? 1.0 : -1.0;
  for (auto& p : params_) {
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += sign * lr_ * g[i];
    p.zero_grad();
  }
}

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0);
    v_.emplace_back(p.numel(), 0.0);
  }
}

void Adam::step() {
  if (opt_.max_grad_norm > 0) clip_grad_norm(params_, opt_.max_grad_norm);
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.has_grad()) continue;
    auto g = p.grad();
    auto v = p.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) {
      m_[k][i] = opt_.beta1 * m_[k][i] + (1 - opt_.beta1) * g[i];
      v_[k][i] = opt_.beta2 * v_[k][i] + (1 - opt_.beta2) * g[i] * g[i];
      const double mhat = m_[k][i] / bc1;
      const double vhat = v_[k][i] / bc2;
      v[i] -= opt_.lr * mhat / (std::sqrt(vhat) + opt_.eps);
    }
    p.zero_grad();
  }
}

}  // namespace vf
