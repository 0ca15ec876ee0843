// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vidflow/error.hpp"
#include "vidflow/gradcheck.hpp"
#include "vidflow/tensor.hpp"

using namespace vf;
using vftest::fd_max_rel_error;
using vftest::random_param;

TEST_SUITE("tensor-autodiff") {

TEST_CASE("matmul hand cases") {
  auto a = Tensor::from({2, 2}, {1, 0, 0, 1});
  auto b = Tensor::from({2, 2}, {3, 4, 5, 6});
  auto c = matmul(a, b);
  CHECK(std::vector<double>(c.values().begin(), c.values().end()) == std::vector<double>{3, 4, 5, 6});

  auto row = Tensor::from({1, 2}, {1, 2});
  auto col = Tensor::from({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul shape error names both shapes") {
  auto a = Tensor::zeros({2, 3});
  auto b = Tensor::zeros({2, 3});
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("by [2,3]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(11);
  auto a = random_param({4, 5}, rng);
  auto b = random_param({5, 3}, rng);
  CHECK(fd_max_rel_error([&] { return sum(matmul(a, b)); }, {a, b}, 1e-5) < 1e-5);
}

TEST_CASE("softmax values") {
  auto y = softmax(Tensor::from({3}, {0, 0, 0}), 0);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-15));

  auto big = softmax(Tensor::from({2}, {1000, 1000}), 0);
  CHECK(big[0] == 0.5);
  CHECK(big[1] == 0.5);

  auto s = softmax(Tensor::from({3}, {1, 2, 3}), 0);
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(std::fabs(s[0] - std::exp(1.0) / z) < 1e-12);
  CHECK(std::fabs(s[1] - std::exp(2.0) / z) < 1e-12);
  CHECK(std::fabs(s[2] - std::exp(3.0) / z) < 1e-12);
}

TEST_CASE("softmax along a middle axis is a probability vector") {
  Rng rng(3);
  auto x = Tensor::uniform({3, 4, 5}, rng, -2, 2);
  auto y = softmax(x, 1);
  for (std::size_t o = 0; o < 3; ++o)
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t e = 0; e < 4; ++e) {
        const double v = y[(o * 4 + e) * 5 + i];
        CHECK(v >= 0.0);
        s += v;
      }
      CHECK(std::fabs(s - 1.0) <= 1e-12);
    }
  CHECK_THROWS_AS(softmax(x, 3), ContractError);
}

TEST_CASE("rms_norm values") {
  auto one = Tensor::full({4}, 1.0);
  auto y = rms_norm(Tensor::from({4}, {2, 2, 2, 2}), one, 0.0);
  for (double v : y.values()) CHECK(v == doctest::Approx(1.0).epsilon(1e-15));

  auto y2 = rms_norm(Tensor::from({2}, {3, 4}), Tensor::full({2}, 1.0), 0.0);
  CHECK(std::fabs(y2[0] - 3 / std::sqrt(12.5)) < 1e-12);
  CHECK(std::fabs(y2[1] - 4 / std::sqrt(12.5)) < 1e-12);
  CHECK(std::fabs(y2[0] - 0.848528137423857) < 1e-12);
}

TEST_CASE("rms_norm scale invariance") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    auto x = Tensor::uniform({3, 8}, rng, -2, 2);
    auto gain = Tensor::uniform({8}, rng, 0.5, 1.5);
    const double c = 0.1 + 10 * rng.uniform();
    auto a = rms_norm(x, gain, 0.0);
    auto b = rms_norm(scale(x, c), gain, 0.0);
    CHECK(vftest::max_abs_diff(a.values(), b.values()) <= 1e-12);
  }
}

TEST_CASE("backward hand cases") {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  backward(sum(x));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{1, 1, 1});

  x.zero_grad();
  backward(sum(mul(x, x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{2, 4, 6});
}

TEST_CASE("backward contract errors") {
  auto x = Tensor::parameter({3}, {1, 2, 3});
  CHECK_THROWS_AS(backward(scale(x, 2.0)), ContractError);
  CHECK_THROWS_AS(backward(Tensor::scalar(1.0)), ContractError);
}

TEST_CASE("two-layer MLP gradients match central differences") {
  Rng rng(21);
  auto x = Tensor::uniform({6, 4}, rng, -2, 2);
  auto w1 = random_param({4, 8}, rng, -1, 1);
  auto b1 = random_param({8}, rng, -1, 1);
  auto w2 = random_param({8, 2}, rng, -1, 1);
  auto b2 = random_param({2}, rng, -1, 1);
  auto target = Tensor::uniform({6, 2}, rng, -1, 1);
  auto loss = [&] {
    auto h = tanh(add_row(matmul(x, w1), b1));
    auto y = add_row(matmul(h, w2), b2);
    return mean(square(sub(y, target)));
  };
  CHECK(fd_max_rel_error(loss, {w1, b1, w2, b2}, 1e-5) < 1e-4);
}

TEST_CASE("stop_gradient") {
  auto x = Tensor::parameter({3}, {0.5, -1.5, 2.0});
  auto w = Tensor::parameter({3}, {1.0, 2.0, 3.0});
  auto sx = stop_gradient(x);
  CHECK(std::vector<double>(sx.values().begin(), sx.values().end()) ==
        std::vector<double>(x.values().begin(), x.values().end()));
  CHECK_FALSE(sx.records());

  backward(sum(mul(sx, w)));
  CHECK_FALSE(x.has_grad());
  CHECK(w.has_grad());

  backward(sum(add(x, stop_gradient(x))));
  for (double g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("no-grad tensors never acquire a node") {
  auto p = Tensor::parameter({2}, {1, 2});
  Tensor y;
  {
    NoGradGuard guard;
    y = mul(p, p);
  }
  CHECK_FALSE(y.has_node());
  CHECK_FALSE(y.records());
  auto z = add(y, y);
  CHECK_FALSE(z.has_node());
}

TEST_CASE("every differentiable op matches central differences on [-2,2]") {
  Rng rng(99);
  auto x = random_param({3, 4}, rng);
  auto y = random_param({3, 4}, rng);
  auto row = random_param({4}, rng);
  auto pos = random_param({3, 4}, rng, 0.5, 2.0);
  const double h = 1e-5, tol = 1e-4;
  // Fixed non-uniform weights so every output element carries a distinct cotangent.
  auto wsum = [](const Tensor& t) {
    std::vector<double> c(t.numel());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = std::sin(1.0 + 0.37 * static_cast<double>(i));
    return sum(mul(t, Tensor::from(t.shape(), c)));
  };

  CHECK(fd_max_rel_error([&] { return wsum(add(x, y)); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(sub(x, y)); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(mul(x, y)); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(scale(x, -1.7)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(add_scalar(x, 0.3)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(square(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(exp(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(log(pos)); }, {pos}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(tanh(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(sigmoid(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(silu(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(gelu(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(abs(pos)); }, {pos}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(clamp(pos, 0.0, 10.0)); }, {pos}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(add_row(x, row)); }, {x, row}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(mul_row(x, row)); }, {x, row}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(transpose(x)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(matmul(x, transpose(y))); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return mean(mul(x, y)); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(sum_axis(x, 0)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(mean_axis(x, 1)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(softmax(x, 1)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(softmax(x, 0)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(rms_norm(x, row, 1e-6)); }, {x, row}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(layer_norm(x, 1e-6)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(reshape(x, {4, 3})); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(gather(x, {0, 0, 5, 11, 3}, {5})); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(slice(x, 1, 1, 2)); }, {x}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(concat({x, y, x}, 1)); }, {x, y}, h) < tol);
  CHECK(fd_max_rel_error([&] { return wsum(concat({x, y}, 0)); }, {x, y}, h) < tol);
  std::vector<double> c(3 * 2), s(3 * 2);
  for (std::size_t i = 0; i < c.size(); ++i) {
    c[i] = std::cos(0.3 * static_cast<double>(i) + 0.1);
    s[i] = std::sin(0.3 * static_cast<double>(i) + 0.1);
  }
  CHECK(fd_max_rel_error([&] { return wsum(rotate_pairs(x, c, s)); }, {x}, h) < tol);
}

TEST_CASE("backward visits nodes in exact reverse recording order") {
  Rng rng(1);
  auto a = random_param({2, 3}, rng);
  auto b = random_param({3, 2}, rng);
  GradTape tape;
  auto loss = mean(square(tanh(matmul(a, b))));
  backward(loss);
  std::vector<std::uint64_t> recorded;
  for (const auto& e : tape.recorded()) recorded.push_back(e.seq);
  std::vector<std::uint64_t> reversed(recorded.rbegin(), recorded.rend());
  CHECK(tape.backward_order() == reversed);
  CHECK(tape.recorded().front().op == "matmul");
  CHECK(tape.recorded().back().op == "mean");
}

TEST_CASE("tape replay is deterministic") {
  auto run = [](std::vector<std::string>& ops, std::vector<double>& out) {
    Rng rng(2024);
    auto a = random_param({3, 3}, rng);
    auto b = random_param({3}, rng);
    GradTape tape;
    auto loss = sum(softmax(add_row(matmul(a, a), b), 1));
    backward(mean(square(rms_norm(matmul(a, a), b, 1e-6))));
    for (const auto& e : tape.recorded()) ops.push_back(e.op);
    out.assign(a.grad().begin(), a.grad().end());
    out.insert(out.end(), b.grad().begin(), b.grad().end());
    out.push_back(loss.item());
  };
  std::vector<std::string> ops1, ops2;
  std::vector<double> v1, v2;
  run(ops1, v1);
  run(ops2, v2);
  CHECK(ops1 == ops2);
  CHECK(v1 == v2);
}

TEST_CASE("grad_check: linear function is exact") {
  Rng rng(4);
  auto w = random_param({5}, rng);
  auto coeff = Tensor::uniform({5}, rng, -1, 1);
  auto rep = grad_check([&] { return sum(mul(w, coeff)); }, {w}, 1e-5, 1e-6);
  CHECK(rep.passed);
  CHECK(rep.max_rel_error < 1e-9);
}

TEST_CASE("grad_check: softmax cross-entropy with O(h^2) decay") {
  Rng rng(8);
  auto logits = random_param({4, 5}, rng);
  std::vector<double> onehot(20, 0.0);
  for (std::size_t r = 0; r < 4; ++r) onehot[r * 5 + (r * 2) % 5] = 1.0;
  auto labels = Tensor::from({4, 5}, onehot);
  auto ce = [&] { return neg(mean(mul(labels, log(softmax(logits, 1))))); };
  auto fine = grad_check(ce, {logits}, 1e-5, 1e-4);
  CHECK(fine.passed);
  auto coarse1 = grad_check(ce, {logits}, 1e-2, 1.0, 0.0);
  auto coarse2 = grad_check(ce, {logits}, 1e-3, 1.0, 0.0);
  // Truncation error falls by ~100x when h falls by 10x.
  CHECK(coarse1.max_rel_error / coarse2.max_rel_error > 50.0);
  CHECK(coarse1.max_rel_error / coarse2.max_rel_error < 200.0);
}

TEST_CASE("grad_check: wrong backward rule is caught") {
  Rng rng(6);
  auto x = random_param({4}, rng, 0.5, 2.0);
  auto bad_square = [](const Tensor& t) {
    std::vector<double> out(t.numel());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = t[i] * t[i];
    return record_op("bad_square", t.shape(), out, {t}, [t](GradContext& ctx) {
      for (std::size_t i = 0; i < ctx.out_grad.size(); ++i) ctx.in_grads[0][i] += ctx.out_grad[i] * t[i];  // missing 2x
    });
  };
  auto rep = grad_check([&] { return sum(bad_square(x)); }, {x}, 1e-5, 1e-4);
  CHECK_FALSE(rep.passed);
  CHECK(rep.max_rel_error > 1e-1);
}

TEST_CASE("grad_check: non-finite values fail with a diagnostic") {
  auto x = Tensor::parameter({2}, {-1.0, 2.0});
  auto rep = grad_check([&] { return sum(log(x)); }, {x}, 1e-5, 1e-4);
  CHECK_FALSE(rep.finite);
  CHECK_FALSE(rep.passed);
  CHECK_FALSE(rep.diagnostic.empty());
}

}  // TEST_SUITE
