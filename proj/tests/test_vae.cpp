// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "support.hpp"
#include "vidflow/error.hpp"
#include "vidflow/vae.hpp"

using namespace vf;

namespace {

bool frames_equal(const Tensor& a, const Tensor& b, std::size_t frame) {
  const std::size_t per = a.numel() / a.dim(0);
  for (std::size_t i = frame * per; i < (frame + 1) * per; ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("shape contract") {
  CausalVae vae;
  CHECK(vae.latent_shape({1, 3, 16, 24}) == Shape{1, 16, 2, 3});
  CHECK(vae.latent_shape({125, 3, 8, 8}) == Shape{32, 16, 1, 1});
  CHECK(vae.video_shape({32, 16, 1, 1}) == Shape{125, 3, 8, 8});
  CHECK_THROWS_AS(vae.latent_shape({4, 3, 8, 8}), ShapeError);
  CHECK_THROWS_AS(vae.latent_shape({5, 3, 12, 8}), ShapeError);
  CHECK_THROWS_AS(vae.latent_shape({5, 1, 8, 8}), ShapeError);
  CHECK_THROWS_AS(vae.video_shape({2, 15, 1, 1}), ShapeError);

  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t T = 4 * rng.below(4), H = 8 * (1 + rng.below(3)), W = 8 * (1 + rng.below(3));
    auto v = Tensor::uniform({T + 1, 3, H, W}, rng, 0.0, 1.0);
    auto z = vae.encode(v);
    CHECK(z.shape() == Shape{T / 4 + 1, 16, H / 8, W / 8});
    CHECK(vae.decode(z).shape() == v.shape());
  }
  auto img = vae.encode(Tensor::full({1, 3, 8, 16}, 0.5));
  CHECK(img.shape() == Shape{1, 16, 1, 2});
}

TEST_CASE("constant and block-constant videos round trip") {
  CausalVae vae;
  auto v = Tensor::full({9, 3, 16, 16}, 0.0);
  auto mv = v.mutable_values();
  for (std::size_t f = 0; f < 9; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < 256; ++i) mv[(f * 3 + c) * 256 + i] = 0.2 + 0.1 * c;
  auto back = vae.decode(vae.encode(v));
  CHECK(vftest::max_abs_diff(back.values(), v.values()) < 1e-6);

  Rng rng(2);
  auto blocks = Tensor::zeros({5, 3, 16, 8});
  auto bv = blocks.mutable_values();
  std::vector<double> colours(5 * 3 * 2);
  for (auto& c : colours) c = rng.uniform();
  for (std::size_t f = 0; f < 5; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 8; ++x) bv[((f * 3 + c) * 16 + y) * 8 + x] = colours[(f * 3 + c) * 2 + y / 8];
  auto rb = vae.decode(vae.encode(blocks));
  CHECK(vftest::max_abs_diff(rb.values(), blocks.values()) < 1e-12);

  // General videos lose only sub-block detail: the error is bounded by the
  // deviation from the block means.
  auto noisy = Tensor::uniform({5, 3, 8, 8}, rng, 0.0, 1.0);
  auto rn = vae.decode(vae.encode(noisy));
  CHECK(vftest::max_abs_diff(rn.values(), noisy.values()) <= 1.0);
  for (double x : rn.values()) CHECK((x >= 0.0 && x <= 1.0));
}

TEST_CASE("encode causality exhaustive scan") {
  CausalVae vae;
  Rng rng(3);
  auto base = Tensor::uniform({13, 3, 8, 8}, rng, 0.0, 1.0);
  auto z0 = vae.encode(base);
  for (std::size_t f = 0; f < 13; ++f) {
    auto pert = Tensor::from(base.shape(), {base.values().begin(), base.values().end()});
    pert.mutable_values()[f * 192 + 17] += 0.3;
    auto z = vae.encode(pert);
    const std::size_t owner = f == 0 ? 0 : (f - 1) / 4 + 1;
    for (std::size_t j = 0; j < z.dim(0); ++j) {
      if (j != owner) CHECK_MESSAGE(frames_equal(z, z0, j), "frame " << f << " latent " << j);
      else CHECK(!frames_equal(z, z0, j));
    }
  }
  // Frame 9 lies in the window of latent frame 3.
  auto pert = Tensor::from(base.shape(), {base.values().begin(), base.values().end()});
  pert.mutable_values()[9 * 192] += 0.5;
  auto z = vae.encode(pert);
  for (std::size_t j = 0; j < 3; ++j) CHECK(frames_equal(z, z0, j));
  CHECK(!frames_equal(z, z0, 3));
}

TEST_CASE("decode causality and first-frame decode") {
  CausalVae vae;
  Rng rng(4);
  auto z = vae.encode(Tensor::uniform({17, 3, 16, 8}, rng, 0.2, 0.8));
  auto full = vae.decode(z);
  auto pert = Tensor::from(z.shape(), {z.values().begin(), z.values().end()});
  for (std::size_t i = 0; i < 16 * 2; ++i) pert.mutable_values()[2 * 32 + i] += 0.1;
  auto dp = vae.decode(pert);
  CHECK(frames_equal(dp, full, 0));
  for (std::size_t f = 1; f <= 4; ++f) CHECK(frames_equal(dp, full, f));
  CHECK(!frames_equal(dp, full, 5));

  const std::size_t before = vae.latent_frames_read();
  auto first = vae.decode_first_frame(z);
  CHECK(vae.latent_frames_read() - before == 1);
  CHECK(first.shape() == Shape{3, 16, 8});
  for (std::size_t i = 0; i < first.numel(); ++i) REQUIRE(first[i] == full[i]);
}

TEST_CASE("first-frame reward gradient ignores later latents") {
  CausalVae vae;
  Rng rng(5);
  auto z = vae.encode(Tensor::uniform({13, 3, 8, 8}, rng, 0.3, 0.7));
  z.set_requires_grad(true);
  auto reward = [&] { return mean(square(add_scalar(vae.decode_first_frame(z), -0.25))); };
  backward(reward());
  const std::size_t per = z.numel() / z.dim(0);
  double frame0 = 0;
  for (std::size_t i = 0; i < per; ++i) frame0 += std::abs(z.grad()[i]);
  CHECK(frame0 > 0);
  for (std::size_t i = 3 * per; i < 4 * per; ++i) CHECK(z.grad()[i] == 0.0);
  // Perturbation cross-check: moving latent frame 3 leaves the reward unchanged.
  const double r0 = reward().item();
  z.mutable_values()[3 * per + 5] += 1.0;
  CHECK(reward().item() == r0);
  z.mutable_values()[3 * per + 5] -= 1.0;
  // And the recorded gradient matches finite differences on frame 0.
  CHECK(vftest::fd_max_rel_error(reward, {z}, 1e-6) < 1e-5);
}

TEST_CASE("determinism given the seed") {
  Rng rng(6);
  auto v = Tensor::uniform({5, 3, 8, 8}, rng, 0.0, 1.0);
  CausalVae a, b, c(VaeConfig{4, 8, 16, 99});
  auto za = a.encode(v), zb = b.encode(v), zc = c.encode(v);
  for (std::size_t i = 0; i < za.numel(); ++i) REQUIRE(za[i] == zb[i]);
  CHECK(vftest::max_abs_diff(za.values(), zc.values()) > 1e-3);
  CHECK_THROWS_AS(CausalVae(VaeConfig{4, 8, 8, 1}), ConfigError);
}

TEST_CASE("cvpx round trip") {
  Rng rng(7);
  auto v = Tensor::uniform({5, 3, 8, 8}, rng, 0.0, 1.0);
  auto bytes = encode_cvpx(v);
  CHECK(bytes.size() == 4 + 4 + 16 + v.numel() * 4);
  auto back = decode_cvpx(bytes);
  CHECK(back.shape() == v.shape());
  for (std::size_t i = 0; i < v.numel(); ++i) CHECK(back[i] == static_cast<double>(static_cast<float>(v[i])));
  auto again = encode_cvpx(back);
  CHECK(again == bytes);

  bytes.pop_back();
  CHECK_THROWS_AS(decode_cvpx(bytes), ProtocolError);
  auto path = std::filesystem::temp_directory_path() / "vidflow_test.cvpx";
  write_cvpx(path, v);
  CHECK(read_cvpx(path).shape() == v.shape());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(read_cvpx(path), IoError);
}
