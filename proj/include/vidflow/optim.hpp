// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "vidflow/tensor.hpp"

namespace vf {

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);
double grad_norm(const std::vector<Tensor>& params);

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  /// Applies one update from the current gradients, then clears them.
  virtual void step() = 0;
  virtual double learning_rate() const = 0;
  virtual void set_learning_rate(double lr) = 0;
  virtual std::vector<Tensor>& params() = 0;
};

/// Plain gradient step. `ascend` flips the sign (reward maximization).
class Sgd final : public Optimizer {
 public:
  Sgd(std::vector<Tensor> params, double lr, bool ascend = false);
  void step() override;
  double learning_rate() const override { return lr_; }
  void set_learning_rate(double lr) override { lr_ = lr; }
  std::vector<Tensor>& params() override { return params_; }

 private:
  std::vector<Tensor> params_;
  double lr_;
  bool ascend_;
};

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

class Adam final : public Optimizer {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);
  void step() override;
  double learning_rate() const override { return opt_.lr; }
  void set_learning_rate(double lr) override { opt_.lr = lr; }
  std::vector<Tensor>& params() override { return params_; }
  long steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

}  // namespace vf
