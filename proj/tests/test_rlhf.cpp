// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "support.hpp"
#include "vidflow/dit.hpp"
#include "vidflow/error.hpp"
#include "vidflow/rlhf.hpp"

using namespace vf;

namespace {

/// v_theta(x, t) = theta, one scalar parameter broadcast over every element.
class ScalarModel final : public VelocityModel {
 public:
  ScalarModel() : theta_(Tensor::parameter({1}, {0.3})) {}
  Tensor velocity(const Tensor& x, std::span<const double>, const Tensor&) override {
    auto flat = reshape(scale(x, 0.0), {x.numel(), 1});
    return reshape(add_row(flat, theta_), x.shape());
  }
  NamedTensors named_parameters() const override { return {{"theta", theta_}}; }
  Tensor theta_;
};

/// v(x, t) = x W + b on [B, D].
class AffineModel final : public VelocityModel {
 public:
  AffineModel(std::size_t d, Rng& rng) : w_(vftest::random_param({d, d}, rng, -0.5, 0.5)), b_(vftest::random_param({d}, rng)) {}
  Tensor velocity(const Tensor& x, std::span<const double>, const Tensor&) override {
    return add_row(matmul(x, w_), b_);
  }
  NamedTensors named_parameters() const override { return {{"w", w_}, {"b", b_}}; }
  Tensor w_, b_;
};

std::vector<std::vector<double>> grads_for(VelocityModel& model, const Tensor& x0, const SampleSchedule& s,
                                           const std::vector<std::size_t>& sel, const Reward& r) {
  auto params = model.parameters();
  zero_grad(params);
  backward(r.score(sample_with_selected_grads(model, x0, s, sel, Tensor())));
  std::vector<std::vector<double>> out;
  for (auto& p : params) out.emplace_back(p.grad().begin(), p.grad().end());
  return out;
}

}  // namespace

TEST_CASE("select_grad_steps") {
  Rng rng(1);
  auto all = select_grad_steps(7, 7, rng);
  CHECK(all == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6});
  CHECK_THROWS_AS(select_grad_steps(5, 0, rng), ConfigError);
  CHECK_THROWS_AS(select_grad_steps(5, 6, rng), ConfigError);
  Rng a(9), b(9);
  CHECK(select_grad_steps(20, 4, a) == select_grad_steps(20, 4, b));

  // Uniformity of singletons: each count within 3 binomial sigma.
  const std::size_t N = 10, draws = 10000;
  std::vector<std::size_t> counts(N, 0);
  for (std::size_t i = 0; i < draws; ++i) {
    auto s = select_grad_steps(N, 1, rng);
    REQUIRE(s.size() == 1);
    ++counts[s[0]];
  }
  const double p = 1.0 / N, sigma = std::sqrt(draws * p * (1 - p));
  for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - draws * p) < 3 * sigma);
  for (int i = 0; i < 100; ++i) {
    auto s = select_grad_steps(12, 5, rng);
    CHECK(s.size() == 5);
    CHECK(std::adjacent_find(s.begin(), s.end(), std::greater_equal<>()) == s.end());
  }
}

TEST_CASE("selected-gradient sampling keeps values") {
  Rng rng(2);
  MlpVelocity model({3, 16, 3, 4, 0}, rng);
  auto x0 = Tensor::randn({4, 3}, rng);
  auto s = make_schedule(12, 3.0);
  auto ref = euler_sample(model, x0, s, {1.0, {}}, Tensor());
  for (const auto& sel : std::vector<std::vector<std::size_t>>{{}, {0}, {3, 7}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}}) {
    auto x1 = sample_with_selected_grads(model, x0, s, sel, Tensor());
    for (std::size_t i = 0; i < x1.numel(); ++i) REQUIRE(x1[i] == ref[i]);
    CHECK(x1.records() == !sel.empty());
  }
}

TEST_CASE("scalar model closed form") {
  Rng rng(3);
  ScalarModel model;
  auto x0 = Tensor::randn({1, 1}, rng);
  auto s = make_schedule(10, 17.0);
  for (const auto& sel : std::vector<std::vector<std::size_t>>{{0}, {2, 5, 9}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9}}) {
    model.theta_.zero_grad();
    backward(sum(sample_with_selected_grads(model, x0, s, sel, Tensor())));
    double expect = 0;
    for (auto i : sel) expect += s.delta(i);
    CHECK(std::abs(model.theta_.grad()[0] - expect) <= 1e-10);
    if (sel.size() == 10) CHECK(std::abs(model.theta_.grad()[0] - 1.0) <= 1e-10);
  }
  // No selected step: the output carries no gradient at all.
  CHECK(!sample_with_selected_grads(model, x0, s, {}, Tensor()).records());
}

TEST_CASE("gradient additivity over disjoint step sets") {
  Rng rng(4);
  MlpVelocity model({2, 16, 3, 4, 0}, rng);
  auto x0 = Tensor::randn({6, 2}, rng);
  auto s = make_schedule(10, 3.0);
  TargetMeanReward r({1.0, -1.0});
  auto ga = grads_for(model, x0, s, {1, 4}, r);
  auto gb = grads_for(model, x0, s, {0, 7, 9}, r);
  auto gab = grads_for(model, x0, s, {0, 1, 4, 7, 9}, r);
  double worst = 0;
  for (std::size_t p = 0; p < gab.size(); ++p)
    for (std::size_t i = 0; i < gab[p].size(); ++i) worst = std::max(worst, std::abs(gab[p][i] - ga[p][i] - gb[p][i]));
  CHECK(worst <= 1e-10);
}

TEST_CASE("affine model analytic chain") {
  Rng rng(5);
  const std::size_t D = 3, B = 2;
  AffineModel model(D, rng);
  auto x0 = Tensor::randn({B, D}, rng);
  auto s = make_schedule(6, 2.0);
  std::vector<double> mu{0.5, -0.2, 1.0};
  TargetMeanReward r(mu);
  auto g = grads_for(model, x0, s, {0, 1, 2, 3, 4, 5}, r);

  // Replay the states, then d r / d x1 = -2 (mean(x1) - mu) / B per sample.
  std::vector<Tensor> xs{x0};
  {
    NoGradGuard ng;
    std::vector<double> t(B);
    for (std::size_t i = 0; i < 6; ++i) xs.push_back(add(xs.back(), scale(model.velocity(xs.back(), t, {}), s.delta(i))));
  }
  const auto& x1 = xs.back();
  std::vector<double> gx(D);
  for (std::size_t d = 0; d < D; ++d) {
    double m = 0;
    for (std::size_t b = 0; b < B; ++b) m += x1[b * D + d] / B;
    gx[d] = -2.0 * (m - mu[d]) / B;
  }
  std::vector<double> gw(D * D, 0.0), gbias(D, 0.0);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t k = 0; k < D; ++k) {
        gbias[k] += s.delta(i) * gx[k];
        for (std::size_t j = 0; j < D; ++j) gw[j * D + k] += s.delta(i) * xs[i][b * D + j] * gx[k];
      }
  CHECK(vftest::max_abs_diff(g[0], gw) <= 1e-10);
  CHECK(vftest::max_abs_diff(g[1], gbias) <= 1e-10);
}

TEST_CASE("rewards") {
  auto x = Tensor::from({2, 2}, {1, 2, 3, 4});
  CHECK(TargetMeanReward({2, 3}).score(x).item() == 0.0);
  CHECK(TargetMeanReward({0, 0}).score(x).item() == doctest::Approx(-(4 + 9)));
  CHECK_THROWS_AS(TargetMeanReward({0}).score(x), ShapeError);
  CHECK(SmoothnessReward().score(Tensor::full({2, 5}, 0.3)).item() == 0.0);
  CHECK(SmoothnessReward().score(x).item() == doctest::Approx(-1.0));
  auto img = Tensor::zeros({1, 1, 2, 2});
  img.mutable_values()[3] = 1.0;
  CHECK(SmoothnessReward().score(img).item() == doctest::Approx(-1.0));
  RandomMlpReward scorer(2, 8, 3);
  CHECK(scorer.score(x).item() == scorer.score(x).item());
  CHECK(!scorer.score(x).records());
  Rng rng(6);
  auto p = vftest::random_param({3, 4}, rng);
  RandomMlpReward scorer4(4, 8, 3);
  CHECK(vftest::fd_max_rel_error([&] { return scorer4.score(p); }, {p}, 1e-6) < 1e-6);
  CHECK(vftest::fd_max_rel_error([&] { return TargetMeanReward({1, 0, 2, -1}).score(p); }, {p}, 1e-6) < 1e-6);
}

TEST_CASE("rlhf step contracts") {
  Rng rng(7);
  MlpVelocity model({2, 16, 3, 4, 0}, rng);
  TargetMeanReward reward({2.0, 0.0});
  RlhfConfig cfg;
  cfg.lr = 0.0;
  RlhfTrainer frozen(model, reward, cfg);
  std::vector<std::vector<double>> before;
  for (auto& p : model.parameters()) before.emplace_back(p.values().begin(), p.values().end());
  auto res = frozen.step({2}, Tensor(), rng);
  CHECK(res.selected.size() == 4);
  CHECK(res.grad_norm > 0);
  auto params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i)
    CHECK(std::memcmp(params[i].values().data(), before[i].data(), before[i].size() * 8) == 0);
  CHECK(frozen.reference_calls() == 0);

  cfg.k = 0;
  CHECK_THROWS_AS(RlhfTrainer(model, reward, cfg), ConfigError);
  cfg.k = 4;
  cfg.beta = 0.1;
  CHECK_THROWS_AS(RlhfTrainer(model, reward, cfg), ConfigError);
  Rng r2(8);
  MlpVelocity ref({2, 16, 3, 4, 0}, r2);
  RlhfTrainer anchored(model, reward, cfg, nullptr, &ref);
  anchored.step({2}, Tensor(), rng);
  CHECK(anchored.reference_calls() == 1);
  cfg.beta = 0.0;
  cfg.target = RewardTarget::kFirstFrame;
  CHECK_THROWS_AS(RlhfTrainer(model, reward, cfg), ConfigError);
}

TEST_CASE("rlhf ascent on a target-mean reward") {
  Rng init(9);
  MlpVelocity model({2, 32, 3, 4, 0}, init);
  TargetMeanReward reward({1.5, -1.0});
  RlhfConfig cfg;
  cfg.lr = 5e-2;
  RlhfTrainer trainer(model, reward, cfg);
  Rng rng(10);
  double first = 0, last = 0;
  for (int i = 0; i < 200; ++i) {
    auto r = trainer.step({2}, Tensor(), rng).reward;
    if (i < 20) first += r / 20;
    if (i >= 180) last += r / 20;
  }
  CHECK(last > first);
}

TEST_CASE("first-frame reward on short video latents") {
  CausalVae vae;
  RlhfConfig cfg;
  CHECK(short_latent_frames(cfg, vae) == 8);

  Rng rng(11);
  ModelConfig mc;
  mc.layers = 1;
  mc.heads = 1;
  mc.head_dim = 8;
  mc.ffn_dim = 8;
  mc.cond_dim = 0;
  VideoDit dit(mc, rng);
  cfg.target = RewardTarget::kFirstFrame;
  cfg.steps = 3;
  cfg.k = 1;
  cfg.batch = 1;
  cfg.lr = 1e-3;
  SmoothnessReward smooth;
  RlhfTrainer trainer(dit, smooth, cfg, &vae);
  const std::size_t read0 = vae.latent_frames_read();
  auto res = trainer.step({8, 16, 2, 2}, Tensor(), rng);
  CHECK(std::isfinite(res.reward));
  CHECK(vae.latent_frames_read() - read0 == 1);

  // Gradient of the decoded first-frame reward w.r.t. later latent frames.
  auto z = Tensor::randn({1, 8, 16, 2, 2}, rng);
  z.set_requires_grad(true);
  backward(smooth.score(trainer.reward_input(z)));
  const std::size_t per = 16 * 4;
  double g0 = 0;
  for (std::size_t i = 0; i < per; ++i) g0 += std::abs(z.grad()[i]);
  CHECK(g0 > 0);
  for (std::size_t i = per; i < z.numel(); ++i) REQUIRE(z.grad()[i] == 0.0);
}
