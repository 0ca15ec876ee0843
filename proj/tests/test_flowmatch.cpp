// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "support.hpp"
#include "vidflow/error.hpp"
#include "vidflow/flowmatch.hpp"

using namespace vf;

namespace {

/// Output is a learned constant vector, independent of input and time.
class ConstantVelocity final : public VelocityModel {
 public:
  explicit ConstantVelocity(std::size_t dim) : c_(Tensor::parameter({dim}, std::vector<double>(dim, 0.0))) {}
  Tensor velocity(const Tensor& x, std::span<const double>, const Tensor&) override {
    return add_row(scale(x, 0.0), c_);
  }
  NamedTensors named_parameters() const override { return {{"c", c_}}; }
  Tensor c_;
};

Tensor two_gaussians(std::size_t n, Rng& rng) {
  std::vector<double> v(n * 2);
  for (std::size_t i = 0; i < n; ++i) {
    const double sign = (i % 2) ? 1.0 : -1.0;
    v[2 * i] = 2.0 * sign + 0.3 * rng.normal();
    v[2 * i + 1] = 0.3 * rng.normal();
  }
  return Tensor::from({n, 2}, std::move(v));
}

}  // namespace

TEST_CASE("interpolate endpoints and midpoints") {
  Rng rng(1);
  auto x0 = Tensor::randn({3, 4}, rng);
  auto x1 = Tensor::randn({3, 4}, rng);
  auto a = interpolate(x0, x1, 0.0);
  auto b = interpolate(x0, x1, 1.0);
  for (std::size_t i = 0; i < 12; ++i) {
    CHECK(a[i] == x0[i]);
    CHECK(b[i] == x1[i]);
  }
  CHECK(interpolate(Tensor::scalar(0.0), Tensor::scalar(2.0), 0.25).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(interpolate(x0, x1, 1.5), ContractError);
  CHECK_THROWS_AS(interpolate(x0, x1, -0.1), ContractError);
  CHECK_THROWS_AS(interpolate(x0, Tensor::zeros({4, 3}), 0.5), ShapeError);

  std::vector<double> ts{0.0, 1.0, 0.3};
  auto batched = interpolate(x0, x1, ts);
  for (std::size_t j = 0; j < 4; ++j) {
    CHECK(batched[j] == x0[j]);
    CHECK(batched[4 + j] == x1[4 + j]);
    CHECK(batched[8 + j] == doctest::Approx(0.7 * x0[8 + j] + 0.3 * x1[8 + j]).epsilon(1e-14));
  }
}

TEST_CASE("velocity target identity and t-independence") {
  CHECK(velocity_target(Tensor::scalar(1.0), Tensor::scalar(4.0)).item() == 3.0);
  Rng rng(2);
  auto x0 = Tensor::randn({5, 3}, rng);
  auto x1 = Tensor::randn({5, 3}, rng);
  auto same = velocity_target(x0, x0);
  for (double v : same.values()) CHECK(v == 0.0);
  auto v = velocity_target(x0, x1);
  for (int k = 0; k < 20; ++k) {
    const double t = rng.uniform();
    auto xt = interpolate(x0, x1, t);
    for (std::size_t i = 0; i < 15; ++i) CHECK(std::abs(xt[i] + (1.0 - t) * v[i] - x1[i]) < 1e-12);
  }
}

TEST_CASE("fm_loss against direct formula") {
  CHECK(fm_loss(Tensor::from({2}, {0, 0}), Tensor::from({2}, {1, 1})).item() == 1.0);
  Rng rng(3);
  auto a = Tensor::randn({4, 7}, rng);
  auto b = Tensor::randn({4, 7}, rng);
  CHECK(fm_loss(a, a).item() == 0.0);
  double s = 0;
  for (std::size_t i = 0; i < 28; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(std::abs(fm_loss(a, b).item() - s / 28.0) < 1e-12);
  CHECK(fm_loss(a, b).item() > 0.0);
}

TEST_CASE("shift transform properties") {
  for (double t : {0.0, 0.1, 0.5, 0.9, 1.0}) CHECK(shift_transform(t, 1.0) == t);
  for (double s : {1.0, 2.0, 3.0, 17.0}) {
    CHECK(shift_transform(0.0, s) == 0.0);
    CHECK(shift_transform(1.0, s) == 1.0);
  }
  CHECK(shift_transform(0.5, 17.0) == doctest::Approx(0.5 / 9.0).epsilon(1e-14));
  CHECK_THROWS_AS(shift_transform(0.5, 0.9), ConfigError);
  CHECK_THROWS_AS(shift_transform(1.2, 2.0), ContractError);

  for (double s : {1.5, 3.0, 17.0}) {
    double prev = -1.0;
    for (int i = 0; i <= 1000; ++i) {
      const double t = i / 1000.0;
      const double u = shift_transform(t, s);
      CHECK(u > prev);
      if (t > 0 && t < 1) CHECK(u < t);
      CHECK(std::abs(shift_transform_any(u, 1.0 / s) - t) < 1e-12);
      prev = u;
    }
  }
}

TEST_CASE("timestep sampler statistics") {
  Rng rng(4);
  TimestepSampler uni;
  double mean = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double t = sample_timestep(uni, rng);
    CHECK_MESSAGE((t >= kTimeClamp && t <= 1.0 - kTimeClamp), t);
    mean += t;
  }
  CHECK(std::abs(mean / n - 0.5) < 0.01);

  TimestepSampler ln{TimestepKind::kLogitNormal, 0.0, 1.0, 1.0};
  std::vector<double> draws(n);
  for (auto& t : draws) t = sample_timestep(ln, rng);
  std::nth_element(draws.begin(), draws.begin() + n / 2, draws.end());
  CHECK(std::abs(draws[n / 2] - 0.5) < 0.01);

  TimestepSampler bad = ln;
  bad.logit_std = 0.0;
  CHECK_THROWS_AS(sample_timestep(bad, rng), ConfigError);
  bad = ln;
  bad.train_shift = 0.5;
  CHECK_THROWS_AS(sample_timestep(bad, rng), ConfigError);
}

TEST_CASE("train shift moves mass toward noise") {
  // Monte-Carlo oracle: the shifted mean equals E[shift(sigmoid(z))], which
  // we estimate independently by quadrature over z.
  Rng rng(5);
  TimestepSampler base{TimestepKind::kLogitNormal, 0.0, 1.0, 1.0};
  TimestepSampler shifted = base;
  shifted.train_shift = 3.0;
  const int n = 1000000;
  double m1 = 0, m3 = 0, below_quarter1 = 0, below_quarter3 = 0;
  for (int i = 0; i < n; ++i) {
    const double a = sample_timestep(base, rng), b = sample_timestep(shifted, rng);
    m1 += a;
    m3 += b;
    below_quarter1 += a < 0.25;
    below_quarter3 += b < 0.25;
  }
  m1 /= n;
  m3 /= n;
  CHECK(m3 < m1 - 0.1);
  CHECK(below_quarter3 > 2 * below_quarter1);

  double quad = 0, wsum = 0;
  for (int i = -8000; i <= 8000; ++i) {
    const double z = i / 1000.0;
    const double w = std::exp(-0.5 * z * z);
    const double t = 1.0 / (1.0 + std::exp(-z));
    quad += w * t / (3.0 - 2.0 * t);
    wsum += w;
  }
  CHECK(std::abs(m3 - quad / wsum) < 2e-3);
}

TEST_CASE("constant model loss equals velocity variance") {
  // A constant predictor at the mean velocity attains loss Var(x1 - x0)
  // per coordinate, averaged over coordinates.
  Rng rng(6);
  const std::size_t n = 20000;
  auto x1 = two_gaussians(n, rng);
  auto batch = make_flow_batch(x1, Tensor(), TimestepSampler{}, rng);
  auto v = velocity_target(batch.x0, batch.x1);
  std::vector<double> mu(2, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 2; ++d) mu[d] += v[2 * i + d] / n;
  double var = 0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < 2; ++d) var += (v[2 * i + d] - mu[d]) * (v[2 * i + d] - mu[d]);
  var /= 2.0 * n;

  ConstantVelocity model(2);
  std::copy(mu.begin(), mu.end(), model.c_.mutable_values().begin());
  Sgd opt(model.parameters(), 0.0);
  const double loss = train_step(model, batch, opt);
  CHECK(std::abs(loss - var) < 1e-9);
  // Monte-Carlo reference: Var(x1) + Var(x0) per coordinate.
  CHECK(std::abs(var - (0.5 * (4.09 + 0.09) + 1.0)) < 0.05);
}

TEST_CASE("mlp training on two gaussians lowers loss") {
  Rng rng(7);
  MlpVelocity model({2, 64, 3, 8, 0}, rng);
  Adam opt(model.parameters(), {.lr = 3e-3});
  auto eval = make_flow_batch(two_gaussians(512, rng), Tensor(), TimestepSampler{}, rng);
  auto eval_loss = [&] {
    NoGradGuard g;
    auto xt = interpolate(eval.x0, eval.x1, eval.t);
    return fm_loss(model.velocity(xt, eval.t, Tensor()), velocity_target(eval.x0, eval.x1)).item();
  };
  const double before = eval_loss();
  for (int step = 0; step < 200; ++step) {
    auto b = make_flow_batch(two_gaussians(64, rng), Tensor(), TimestepSampler{}, rng);
    train_step(model, b, opt);
  }
  CHECK(eval_loss() < before);
}

TEST_CASE("joint image/video step weights by sample count") {
  Rng rng(8);
  MlpVelocity model({12, 16, 2, 4, 0}, rng);
  // Images are single-frame videos: [B, T'=1, C=3, 2, 2]; videos have T'=1 too
  // here so the same model applies, with distinct data.
  auto img = make_flow_batch(Tensor::randn({4, 1, 3, 2, 2}, rng), Tensor(), TimestepSampler{}, rng);
  auto vid = make_flow_batch(Tensor::randn({1, 1, 3, 2, 2}, rng), Tensor(), TimestepSampler{}, rng);
  double li, lv;
  {
    NoGradGuard g;
    li = fm_loss(model.velocity(interpolate(img.x0, img.x1, img.t), img.t, Tensor()), velocity_target(img.x0, img.x1))
             .item();
    lv = fm_loss(model.velocity(interpolate(vid.x0, vid.x1, vid.t), vid.t, Tensor()), velocity_target(vid.x0, vid.x1))
             .item();
  }
  Sgd opt(model.parameters(), 0.0);
  std::vector<FlowBatch> parts{img, vid};
  const double joint = train_step_joint(model, parts, opt);
  CHECK(std::abs(joint - (4 * li + 1 * lv) / 5.0) < 1e-12);
  JointRatio def;
  CHECK(def.images == 4);
  CHECK(def.videos == 1);
}

TEST_CASE("non-finite loss aborts with diagnostic") {
  Rng rng(9);
  ConstantVelocity model(2);
  model.c_.mutable_values()[0] = std::nan("");
  Sgd opt(model.parameters(), 0.1);
  auto b = make_flow_batch(Tensor::randn({3, 2}, rng), Tensor(), TimestepSampler{}, rng);
  try {
    train_step(model, b, opt);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("non-finite parameter c") != std::string::npos);
  }
}

TEST_CASE("sft anchor penalty is zero at the reference") {
  Rng rng(10);
  MlpVelocity model({2, 16, 2, 4, 0}, rng);
  Rng rng2(11);
  MlpVelocity ref({2, 16, 2, 4, 0}, rng2);
  copy_parameters(model, ref);
  auto b = make_flow_batch(two_gaussians(16, rng), Tensor(), TimestepSampler{}, rng);
  Sgd opt0(model.parameters(), 0.0);
  const double plain = train_step(model, b, opt0);
  auto ps = model.parameters();
  zero_grad(ps);
  Sgd opt1(model.parameters(), 0.0);
  CHECK(sft_step(model, ref, b, opt1, 5.0) == doctest::Approx(plain).epsilon(1e-14));

  // Gradients of the anchored objective pass a finite-difference check.
  auto params = model.parameters();
  for (auto& p : params) {
    auto v = p.mutable_values();
    for (auto& x : v) x += 0.01;
  }
  auto f = [&] {
    auto xt = interpolate(b.x0, b.x1, b.t);
    auto v = model.velocity(xt, b.t, Tensor());
    Tensor vr;
    {
      NoGradGuard g;
      vr = ref.velocity(xt, b.t, Tensor());
    }
    return add(fm_loss(v, velocity_target(b.x0, b.x1)), scale(mean(square(sub(v, vr))), 2.0));
  };
  CHECK(vftest::fd_max_rel_error(f, params, 1e-5, 1e-6) < 1e-4);
}
