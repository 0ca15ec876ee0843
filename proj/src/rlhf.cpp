// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/rlhf.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "vidflow/error.hpp"

namespace vf {

namespace {

/// [B, F, ...] -> [F, B * rest] by index gather.
Tensor features_first(const Tensor& x) {
  const std::size_t B = x.dim(0), F = x.dim(1), rest = x.numel() / (B * F);
  std::vector<std::size_t> idx(x.numel());
  std::size_t o = 0;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t r = 0; r < rest; ++r) idx[o++] = (b * F + f) * rest + r;
  return gather(x, std::move(idx), {F, B * rest});
}

}  // namespace

Tensor TargetMeanReward::score(const Tensor& samples) const {
  if (samples.rank() < 2 || samples.dim(1) != target_.size()) {
    throw ShapeError("target_mean reward: samples " + to_string(samples.shape()) + " need " +
                     std::to_string(target_.size()) + " features on axis 1");
  }
  auto m = mean_axis(features_first(samples), 1);
  auto diff = sub(m, Tensor::from({target_.size()}, target_));
  return neg(sum(square(diff)));
}

Tensor SmoothnessReward::score(const Tensor& samples) const {
  const std::size_t r = samples.rank();
  if (r < 2) throw ShapeError("smoothness reward needs [B, ...] samples");
  auto tv_axis = [&](std::size_t axis) {
    const std::size_t n = samples.dim(axis);
    if (n < 2) return Tensor::scalar(0.0);
    return mean(abs(sub(slice(samples, axis, 1, n - 1), slice(samples, axis, 0, n - 1))));
  };
  Tensor tv = tv_axis(r - 1);
  if (r >= 4) tv = add(tv, tv_axis(r - 2));
  return neg(tv);
}

RandomMlpReward::RandomMlpReward(std::size_t in_dim, std::size_t hidden, std::uint64_t seed) : in_dim_(in_dim) {
  Rng rng(seed);
  w1_ = Tensor::randn({in_dim, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(in_dim)));
  b1_ = Tensor::randn({hidden}, rng, 0.5);
  w2_ = Tensor::randn({hidden, 1}, rng, 1.0 / std::sqrt(static_cast<double>(hidden)));
}

Tensor RandomMlpReward::score(const Tensor& samples) const {
  const std::size_t B = samples.dim(0);
  if (samples.numel() != B * in_dim_) throw ShapeError("random_mlp reward: sample size mismatch");
  auto h = tanh(add_row(matmul(reshape(samples, {B, in_dim_}), w1_), b1_));
  return mean(matmul(h, w2_));
}

void RlhfConfig::validate() const {
  if (steps == 0) throw ConfigError("rlhf: steps must be >= 1");
  if (k == 0 || k > steps) throw ConfigError("rlhf: k must be in [1, steps]");
  if (!(beta >= 0.0)) throw ConfigError("rlhf: beta must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("rlhf: lr must be >= 0");
  if (batch == 0) throw ConfigError("rlhf: batch must be positive");
  if (!(shift >= 1.0)) throw ConfigError("rlhf: shift must be >= 1");
}

std::vector<std::size_t> select_grad_steps(std::size_t steps, std::size_t k, Rng& rng) {
  if (k == 0 || k > steps) {
    throw ConfigError("select_grad_steps: k=" + std::to_string(k) + " outside [1, " + std::to_string(steps) + "]");
  }
  std::vector<std::size_t> all(steps);
  std::iota(all.begin(), all.end(), 0);
  for (std::size_t i = 0; i < k; ++i) std::swap(all[i], all[i + rng.below(steps - i)]);
  all.resize(k);
  std::sort(all.begin(), all.end());
  return all;
}

RlhfTrainer::RlhfTrainer(VelocityModel& model, const Reward& reward, RlhfConfig config, const CausalVae* vae,
                         VelocityModel* reference)
    : model_(model),
      reward_(reward),
      config_(config),
      vae_(vae),
      reference_(reference),
      opt_(model.parameters(), config.lr, /*ascend=*/true) {
  config_.validate();
  if (config_.target == RewardTarget::kFirstFrame && !vae_) throw ConfigError("rlhf: first-frame target needs a VAE");
  if (config_.beta > 0.0 && !reference_) throw ConfigError("rlhf: beta > 0 needs a reference model");
  schedule_ = make_schedule(config_.steps, config_.shift);
}

Tensor RlhfTrainer::reward_input(const Tensor& samples) const {
  if (config_.target == RewardTarget::kFullSample) return samples;
  // samples: [B, T', C, h, w] latents; decode only frame 0 of each.
  const std::size_t B = samples.dim(0);
  const Shape one(samples.shape().begin() + 1, samples.shape().end());
  std::vector<Tensor> frames;
  for (std::size_t b = 0; b < B; ++b) {
    auto f = vae_->decode_first_frame(reshape(slice(samples, 0, b, 1), one));
    Shape s{1};
    s.insert(s.end(), f.shape().begin(), f.shape().end());
    frames.push_back(reshape(f, s));
  }
  return B == 1 ? frames[0] : concat(frames, 0);
}

RlhfStepResult RlhfTrainer::step(const Shape& sample_shape, const Tensor& cond, Rng& rng) {
  RlhfStepResult res;
  Shape shape{config_.batch};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Rng noise = rng.fork("noise");
  Rng pick = rng.fork("steps");
  rng = rng.fork("next");
  const Tensor x0 = Tensor::randn(shape, noise);
  res.selected = select_grad_steps(config_.steps, config_.k, pick);
  auto params = model_.parameters();
  zero_grad(params);

  Tensor x1 = sample_with_selected_grads(model_, x0, schedule_, res.selected, cond);
  Tensor r = reward_.score(reward_input(x1));
  res.reward = r.item();
  if (!std::isfinite(res.reward)) {
    throw NumericError("rlhf: non-finite reward " + std::to_string(res.reward) + " (reward " + reward_.name() + ")");
  }
  Tensor objective = r;
  if (config_.beta > 0.0) {
    // Anchor surrogate for the KL term: squared velocity gap to the
    // reference at the noise sample, t = 0.
    std::vector<double> t(config_.batch, 0.0);
    Tensor v_ref;
    {
      NoGradGuard g;
      v_ref = reference_->velocity(x0, t, cond);
      ++reference_calls_;
    }
    auto gap = mean(square(sub(model_.velocity(x0, t, cond), v_ref)));
    objective = sub(objective, scale(gap, config_.beta));
  }
  if (objective.records()) {
    backward(objective);
    res.grad_norm = grad_norm(params);
    opt_.step();
  }
  return res;
}

std::size_t short_latent_frames(const RlhfConfig& config, const CausalVae& vae) {
  return vae.latent_shape({config.frames_short, 3, vae.config().spatial, vae.config().spatial})[0];
}

}  // namespace vf
