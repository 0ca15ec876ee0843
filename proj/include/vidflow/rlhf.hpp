// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <memory>
#include <string>
#include <vector>

#include "vidflow/nn.hpp"
#include "vidflow/optim.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/sampler.hpp"
#include "vidflow/tensor.hpp"
#include "vidflow/vae.hpp"

namespace vf {

/// Differentiable scalar score of a batch of samples [B, ...]. Larger is better.
class Reward {
 public:
  virtual ~Reward() = default;
  virtual Tensor score(const Tensor& samples) const = 0;
  virtual std::string name() const = 0;
};

/// -|| per-feature batch mean - target ||^2. Features are axis 1; every
/// other axis is averaged.
class TargetMeanReward final : public Reward {
 public:
  explicit TargetMeanReward(std::vector<double> target) : target_(std::move(target)) {}
  Tensor score(const Tensor& samples) const override;
  std::string name() const override { return "target_mean"; }

 private:
  std::vector<double> target_;
};

/// Negative mean absolute difference between neighbours along the trailing
/// axis, and also the second-to-last axis for rank >= 4 (images).
class SmoothnessReward final : public Reward {
 public:
  Tensor score(const Tensor& samples) const override;
  std::string name() const override { return "neg_total_variation"; }
};

/// Frozen random two-layer scorer on flattened samples, batch averaged.
class RandomMlpReward final : public Reward {
 public:
  RandomMlpReward(std::size_t in_dim, std::size_t hidden, std::uint64_t seed);
  Tensor score(const Tensor& samples) const override;
  std::string name() const override { return "random_mlp"; }

 private:
  std::size_t in_dim_;
  Tensor w1_, b1_, w2_;
};

enum class RewardTarget { kFullSample, kFirstFrame };

struct RlhfConfig {
  std::size_t k = 4;       // gradient-carrying steps
  std::size_t steps = 20;  // sampler steps N
  double shift = 1.0;
  double beta = 0.0;
  double lr = 1e-4;
  std::size_t batch = 8;
  std::size_t frames_short = 29;
  RewardTarget target = RewardTarget::kFullSample;

  void validate() const;
};

/// Uniform k-subset of {0..N-1}, sorted.
std::vector<std::size_t> select_grad_steps(std::size_t steps, std::size_t k, Rng& rng);

struct RlhfStepResult {
  double reward = 0.0;  // before the update
  double grad_norm = 0.0;
  std::vector<std::size_t> selected;
};

/// Reward ascent through the sampler by plain gradient steps
/// theta <- theta + lr * d reward / d theta.
class RlhfTrainer {
 public:
  /// `vae` is required for first-frame targets; `reference` only when beta > 0.
  RlhfTrainer(VelocityModel& model, const Reward& reward, RlhfConfig config, const CausalVae* vae = nullptr,
              VelocityModel* reference = nullptr);

  /// `sample_shape` is the per-sample shape of x0 (without the batch axis).
  RlhfStepResult step(const Shape& sample_shape, const Tensor& cond, Rng& rng);

  /// Decoded (first-frame) view the reward sees for generated samples.
  Tensor reward_input(const Tensor& samples) const;
  std::size_t reference_calls() const { return reference_calls_; }
  const RlhfConfig& config() const { return config_; }

 private:
  VelocityModel& model_;
  const Reward& reward_;
  RlhfConfig config_;
  const CausalVae* vae_;
  VelocityModel* reference_;
  Sgd opt_;
  SampleSchedule schedule_;
  std::size_t reference_calls_ = 0;
};

/// Latent frame count of the short-video RLHF preset for a given VAE.
std::size_t short_latent_frames(const RlhfConfig& config, const CausalVae& vae);

}  // namespace vf
