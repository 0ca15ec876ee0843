// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

namespace vf {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// A network predicting the flow velocity v(x_t, t, cond).
class VelocityModel {
 public:
  virtual ~VelocityModel() = default;

  /// x is [B, ...sample shape], `t` holds one time per sample and `cond` is
  /// [B, cond_dim] (or undefined for unconditional models). The output has
  /// x's shape.
  virtual Tensor velocity(const Tensor& x, std::span<const double> t, const Tensor& cond) = 0;
  virtual NamedTensors named_parameters() const = 0;
  virtual std::size_t cond_dim() const { return 0; }

  std::vector<Tensor> parameters() const;
  std::size_t parameter_count() const;
};

/// Copies parameter values from `src` into `dst` (same architecture).
void copy_parameters(const VelocityModel& src, VelocityModel& dst);

struct Linear {
  Tensor weight;  // [in, out]
  Tensor bias;    // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, double gain = 1.0);
  /// x: [rows, in] -> [rows, out]
  Tensor operator()(const Tensor& x) const;
  void collect(const std::string& prefix, NamedTensors& out) const;
};

/// Sinusoidal embedding of t * scale, [B, dim] (dim even).
Tensor timestep_embedding(std::span<const double> t, std::size_t dim, double scale = 1000.0,
                          double max_period = 10000.0);

struct MlpConfig {
  std::size_t data_dim = 2;
  std::size_t hidden = 64;
  std::size_t depth = 3;  // number of Linear layers
  std::size_t time_features = 8;
  std::size_t cond_dim = 0;
};

/// Fully connected velocity model on flattened samples; used for the
/// low-dimensional toy experiments.
class MlpVelocity final : public VelocityModel {
 public:
  MlpVelocity(MlpConfig config, Rng& rng);

  Tensor velocity(const Tensor& x, std::span<const double> t, const Tensor& cond) override;
  NamedTensors named_parameters() const override;
  std::size_t cond_dim() const override { return config_.cond_dim; }
  const MlpConfig& config() const { return config_; }

 private:
  MlpConfig config_;
  std::vector<Linear> layers_;
};

}  // namespace vf
