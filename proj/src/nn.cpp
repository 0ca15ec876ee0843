// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/nn.hpp"

#include <cmath>
#include <numbers>

#include "vidflow/error.hpp"

namespace vf {

std::vector<Tensor> VelocityModel::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t VelocityModel::parameter_count() const {
  std::size_t n = 0;
  for (auto& [name, t] : named_parameters()) n += t.numel();
  return n;
}

void copy_parameters(const VelocityModel& src, VelocityModel& dst) {
  auto a = src.named_parameters();
  auto b = dst.named_parameters();
  if (a.size() != b.size()) throw ShapeError("copy_parameters: parameter lists differ in length");
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first || a[i].second.shape() != b[i].second.shape()) {
      throw ShapeError("copy_parameters: mismatch at " + a[i].first);
    }
    auto dv = b[i].second.mutable_values();
    auto sv = a[i].second.values();
    std::copy(sv.begin(), sv.end(), dv.begin());
  }
}

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, double gain) {
  const double bound = gain / std::sqrt(static_cast<double>(in));
  weight = Tensor::uniform({in, out}, rng, -bound, bound);
  weight.set_requires_grad(true);
  bias = Tensor::uniform({out}, rng, -bound, bound);
  bias.set_requires_grad(true);
}

Tensor Linear::operator()(const Tensor& x) const { return add_row(matmul(x, weight), bias); }

void Linear::collect(const std::string& prefix, NamedTensors& out) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

Tensor timestep_embedding(std::span<const double> t, std::size_t dim, double scale, double max_period) {
  if (dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even");
  const std::size_t half = dim / 2;
  std::vector<double> out(t.size() * dim);
  for (std::size_t b = 0; b < t.size(); ++b) {
    for (std::size_t i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(max_period) * static_cast<double>(i) / static_cast<double>(half));
      const double arg = t[b] * scale * freq;
      out[b * dim + i] = std::cos(arg);
      out[b * dim + half + i] = std::sin(arg);
    }
  }
  return Tensor::from({t.size(), dim}, std::move(out));
}

namespace {

Tensor fourier_time_features(std::span<const double> t, std::size_t n) {
  // [t, sin(pi k t), cos(pi k t)] for k = 1..n/2
  std::vector<double> out(t.size() * n);
  for (std::size_t b = 0; b < t.size(); ++b) {
    out[b * n] = t[b];
    for (std::size_t j = 1; j < n; ++j) {
      const double k = static_cast<double>((j + 1) / 2);
      out[b * n + j] = (j % 2) ? std::sin(std::numbers::pi * k * t[b]) : std::cos(std::numbers::pi * k * t[b]);
    }
  }
  return Tensor::from({t.size(), n}, std::move(out));
}

}  // namespace

MlpVelocity::MlpVelocity(MlpConfig config, Rng& rng) : config_(config) {
  if (config_.depth < 2 || config_.data_dim == 0 || config_.hidden == 0) throw ConfigError("MlpVelocity: bad config");
  std::size_t in = config_.data_dim + config_.time_features + config_.cond_dim;
  for (std::size_t i = 0; i + 1 < config_.depth; ++i) {
    layers_.emplace_back(in, config_.hidden, rng);
    in = config_.hidden;
  }
  layers_.emplace_back(in, config_.data_dim, rng);
}

Tensor MlpVelocity::velocity(const Tensor& x, std::span<const double> t, const Tensor& cond) {
  const std::size_t batch = x.dim(0);
  if (x.numel() != batch * config_.data_dim) {
    throw ShapeError("MlpVelocity: sample shape " + to_string(x.shape()) + " does not flatten to data_dim " +
                     std::to_string(config_.data_dim));
  }
  if (t.size() != batch) throw ShapeError("MlpVelocity: expected one time per sample");
  std::vector<Tensor> parts{reshape(x, {batch, config_.data_dim})};
  if (config_.time_features > 0) parts.push_back(fourier_time_features(t, config_.time_features));
  if (config_.cond_dim > 0) {
    if (!cond.defined() || cond.shape() != Shape{batch, config_.cond_dim}) {
      throw ShapeError("MlpVelocity: cond must be [B, cond_dim]");
    }
    parts.push_back(cond);
  }
  Tensor h = parts.size() == 1 ? parts[0] : concat(parts, 1);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    h = layers_[i](h);
    if (i + 1 < layers_.size()) h = silu(h);
  }
  return reshape(h, x.shape());
}

NamedTensors MlpVelocity::named_parameters() const {
  NamedTensors out;
  for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i].collect("mlp." + std::to_string(i), out);
  return out;
}

}  // namespace vf
