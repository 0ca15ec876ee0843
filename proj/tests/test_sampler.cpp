// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <functional>
#include <sstream>

#include "support.hpp"
#include "vidflow/error.hpp"
#include "vidflow/sampler.hpp"

using namespace vf;

namespace {

/// v(x, t) = fn(x, t), elementwise, no parameters.
class FieldModel final : public VelocityModel {
 public:
  explicit FieldModel(std::function<double(double, double, std::size_t)> fn) : fn_(std::move(fn)) {}
  Tensor velocity(const Tensor& x, std::span<const double> t, const Tensor&) override {
    ++calls;
    std::vector<double> out(x.numel());
    const std::size_t per = x.numel() / x.dim(0);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn_(x[i], t[i / per], i);
    return Tensor::from(x.shape(), std::move(out));
  }
  NamedTensors named_parameters() const override { return {}; }
  std::size_t cond_dim() const override { return 2; }
  int calls = 0;

 private:
  std::function<double(double, double, std::size_t)> fn_;
};

}  // namespace

TEST_CASE("schedule values") {
  auto s = make_schedule(4, 1.0);
  CHECK(s.t == std::vector<double>{0, 0.25, 0.5, 0.75, 1});
  auto s17 = make_schedule(2, 17.0);
  CHECK(s17.t[0] == 0.0);
  CHECK(std::abs(s17.t[1] - 0.5 / 9.0) < 1e-15);
  CHECK(s17.t[2] == 1.0);
  auto s50 = make_schedule(50, 17.0);
  std::size_t low = 0;
  for (double t : s50.t) low += t < 0.2;
  CHECK(low * 2 > s50.t.size());
  CHECK_THROWS_AS(make_schedule(0, 1.0), ConfigError);
  CHECK_THROWS_AS(make_schedule(10, 0.5), ConfigError);

  for (std::size_t n : {1u, 3u, 10u, 50u, 97u})
    for (double sh : {1.0, 3.0, 17.0}) {
      auto sc = make_schedule(n, sh);
      double sum = 0;
      for (std::size_t i = 0; i < sc.steps(); ++i) {
        CHECK(sc.delta(i) > 0);
        sum += sc.delta(i);
      }
      CHECK(std::abs(sum - 1.0) <= 1e-15);
    }
}

TEST_CASE("cfg combine") {
  Rng rng(1);
  auto u = Tensor::randn({3, 2}, rng), c = Tensor::randn({3, 2}, rng);
  auto one = cfg_combine(u, c, 1.0), zero = cfg_combine(u, c, 0.0);
  for (std::size_t i = 0; i < 6; ++i) {
    CHECK(one[i] == c[i]);
    CHECK(zero[i] == u[i]);
  }
  CHECK(cfg_combine(Tensor::scalar(0), Tensor::scalar(2), 6.0).item() == 12.0);
  for (double s : {0.5, 3.0, 9.0}) {
    auto same = cfg_combine(u, u, s);
    for (std::size_t i = 0; i < 6; ++i) CHECK(same[i] == doctest::Approx(u[i]).epsilon(1e-15));
  }
}

TEST_CASE("euler basics") {
  Rng rng(2);
  auto x0 = Tensor::randn({4, 3}, rng);
  FieldModel lin([](double x, double t, std::size_t) { return 0.5 * x + t; });
  GuidanceConfig g{1.0, {}};
  auto one = euler_sample(lin, x0, make_schedule(1, 1.0), g, Tensor());
  for (std::size_t i = 0; i < 12; ++i) CHECK(one[i] == doctest::Approx(x0[i] + 0.5 * x0[i]).epsilon(1e-15));

  FieldModel constant([](double, double, std::size_t i) { return 0.1 * static_cast<double>(i % 3) - 0.2; });
  for (double sh : {1.0, 17.0})
    for (std::size_t n : {1u, 7u, 50u}) {
      auto x = euler_sample(constant, x0, make_schedule(n, sh), g, Tensor());
      for (std::size_t i = 0; i < 12; ++i)
        CHECK(std::abs(x[i] - (x0[i] + 0.1 * static_cast<double>(i % 3) - 0.2)) < 1e-14);
    }
}

TEST_CASE("analytic target oracle and convergence") {
  Rng rng(3);
  auto x0 = Tensor::randn({2, 3}, rng);
  const std::vector<double> target{1.5, -2.0, 0.25, 3.0, 0.0, -0.5};
  FieldModel to_target([&](double x, double t, std::size_t i) { return (target[i] - x) / (1.0 - t); });
  auto x = euler_sample(to_target, x0, make_schedule(100, 1.0), {1.0, {}}, Tensor());
  for (std::size_t i = 0; i < 6; ++i) CHECK(std::abs(x[i] - target[i]) < 1e-3);

  // Straight paths: the true affine field is integrated exactly for any N.
  auto x1 = Tensor::randn({2, 3}, rng);
  FieldModel straight([&](double, double, std::size_t i) { return x1[i] - x0[i]; });
  for (std::size_t n : {1u, 2u, 13u})
    for (double sh : {1.0, 17.0}) {
      auto y = euler_sample(straight, x0, make_schedule(n, sh), {1.0, {}}, Tensor());
      CHECK(vftest::max_abs_diff(y.values(), x1.values()) < 1e-14);
    }

  // Lipschitz field dx/dt = -x: exact x(1) = x0 e^{-1}; error halves-ish per doubling.
  FieldModel decay([](double x, double, std::size_t) { return -x; });
  double prev = 1e9;
  for (std::size_t n : {5u, 10u, 20u, 40u}) {
    auto y = euler_sample(decay, x0, make_schedule(n, 1.0), {1.0, {}}, Tensor());
    double err = 0;
    for (std::size_t i = 0; i < 6; ++i) err = std::max(err, std::abs(y[i] - x0[i] * std::exp(-1.0)));
    CHECK(err < prev);
    prev = err;
  }
}

TEST_CASE("guidance model calls and trace") {
  Rng rng(4);
  auto x0 = Tensor::randn({2, 2}, rng);
  // Conditional and unconditional branches differ through the cond input.
  class CondModel final : public VelocityModel {
   public:
    Tensor velocity(const Tensor& x, std::span<const double>, const Tensor& cond) override {
      ++calls;
      return add(scale(x, 0.0), cond);
    }
    NamedTensors named_parameters() const override { return {}; }
    std::size_t cond_dim() const override { return 2; }
    int calls = 0;
  } model;
  auto cond = Tensor::from({2, 2}, {1, 1, 2, 2});
  auto sched = make_schedule(5, 3.0);
  euler_sample(model, x0, sched, {1.0, {}}, cond);
  CHECK(model.calls == 5);
  model.calls = 0;
  std::vector<TraceRow> trace;
  auto y = euler_sample(model, x0, sched, {6.0, Tensor::from({2}, {0.5, 0.5})}, cond, &trace);
  CHECK(model.calls == 10);
  // v = u + 6 (c - u) integrates to x0 + that over unit time.
  CHECK(std::abs(y[0] - (x0[0] + 0.5 + 6 * 0.5)) < 1e-12);
  CHECK(std::abs(y[2] - (x0[2] + 0.5 + 6 * 1.5)) < 1e-12);
  REQUIRE(trace.size() == 5);
  CHECK(trace[0].t == 0.0);
  CHECK(trace[4].step == 4);
  std::ostringstream os;
  write_trace_csv(os, trace);
  CHECK(os.str().rfind("step,t,dt,state_norm\n", 0) == 0);

  FieldModel blowup([](double x, double, std::size_t) { return x * 1e300; });
  try {
    euler_sample(blowup, Tensor::full({1, 1}, 1e10), make_schedule(4, 1.0), {1.0, {}}, Tensor());
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}
