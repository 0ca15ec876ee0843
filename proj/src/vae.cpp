// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/vae.hpp"

#include <Eigen/QR>

#include "vidflow/bytes.hpp"
#include "vidflow/error.hpp"
#include "vidflow/rng.hpp"

namespace vf {

namespace {

std::vector<double> orthonormal_columns(std::size_t rows, std::size_t cols, Rng rng) {
  Eigen::MatrixXd a(rows, cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(rows, cols);
  std::vector<double> out(rows * cols);
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j) out[i * cols + j] = q(i, j);
  return out;
}

}  // namespace

CausalVae::CausalVae(VaeConfig config) : config_(config) {
  if (config_.temporal == 0 || config_.spatial == 0) throw ConfigError("vae: compression factors must be positive");
  if (config_.channels < 3 * config_.temporal) {
    throw ConfigError("vae: need at least 3 * c_t latent channels for an invertible lift");
  }
  Rng rng(config_.seed);
  lift_first_ = orthonormal_columns(config_.channels, 3, rng.fork("first"));
  lift_ = orthonormal_columns(config_.channels, 3 * config_.temporal, rng.fork("window"));
}

Shape CausalVae::latent_shape(const Shape& v) const {
  if (v.size() != 4 || v[1] != 3) throw ShapeError("vae: expected video [T+1, 3, H, W], got " + to_string(v));
  if (v[0] == 0 || (v[0] - 1) % config_.temporal != 0) {
    throw ShapeError("vae: frame count " + std::to_string(v[0]) + " is not 1 + multiple of " +
                     std::to_string(config_.temporal));
  }
  if (v[2] == 0 || v[3] == 0 || v[2] % config_.spatial != 0 || v[3] % config_.spatial != 0) {
    throw ShapeError("vae: spatial extents " + std::to_string(v[2]) + "x" + std::to_string(v[3]) +
                     " not divisible by " + std::to_string(config_.spatial));
  }
  return {(v[0] - 1) / config_.temporal + 1, config_.channels, v[2] / config_.spatial, v[3] / config_.spatial};
}

Shape CausalVae::video_shape(const Shape& l) const {
  if (l.size() != 4 || l[0] == 0 || l[1] != config_.channels) {
    throw ShapeError("vae: expected latent [T', " + std::to_string(config_.channels) + ", h, w], got " +
                     to_string(l));
  }
  return {(l[0] - 1) * config_.temporal + 1, 3, l[2] * config_.spatial, l[3] * config_.spatial};
}

Tensor CausalVae::encode(const Tensor& video) const {
  const Shape ls = latent_shape(video.shape());
  const std::size_t H = video.dim(2), W = video.dim(3), h = ls[2], w = ls[3], C = config_.channels;
  const std::size_t cs = config_.spatial, ct = config_.temporal;
  const auto v = video.values();
  const double inv = 1.0 / static_cast<double>(cs * cs);
  auto pooled = [&](std::size_t f, std::size_t c, std::size_t bi, std::size_t bj) {
    double s = 0;
    for (std::size_t y = 0; y < cs; ++y)
      for (std::size_t x = 0; x < cs; ++x) s += v[((f * 3 + c) * H + bi * cs + y) * W + bj * cs + x];
    return s * inv;
  };
  std::vector<double> out(numel(ls), 0.0);
  std::vector<double> feat(3 * ct);
  for (std::size_t j = 0; j < ls[0]; ++j) {
    const bool first = j == 0;
    const std::size_t nf = first ? 1 : ct;
    const std::size_t f0 = first ? 0 : (j - 1) * ct + 1;
    const auto& lift = first ? lift_first_ : lift_;
    const std::size_t k = 3 * nf;
    for (std::size_t bi = 0; bi < h; ++bi)
      for (std::size_t bj = 0; bj < w; ++bj) {
        for (std::size_t f = 0; f < nf; ++f)
          for (std::size_t c = 0; c < 3; ++c) feat[f * 3 + c] = pooled(f0 + f, c, bi, bj);
        for (std::size_t o = 0; o < C; ++o) {
          double s = 0;
          for (std::size_t i = 0; i < k; ++i) s += lift[o * k + i] * feat[i];
          out[((j * C + o) * h + bi) * w + bj] = s;
        }
      }
  }
  return Tensor::from(ls, std::move(out));
}

Tensor CausalVae::decode_frame(const Tensor& latent_frame, bool first) const {
  // latent_frame: [C, h, w] -> pixels [nf, 3, H, W]
  const std::size_t C = config_.channels, h = latent_frame.dim(1), w = latent_frame.dim(2);
  const std::size_t cs = config_.spatial, nf = first ? 1 : config_.temporal, k = 3 * nf;
  const auto& lift = first ? lift_first_ : lift_;
  // feats[k, h*w] = lift^T [k, C] x latent [C, h*w]
  std::vector<double> lt(k * C);
  for (std::size_t o = 0; o < C; ++o)
    for (std::size_t i = 0; i < k; ++i) lt[i * C + o] = lift[o * k + i];
  auto feats = matmul(Tensor::from({k, C}, std::move(lt)), reshape(latent_frame, {C, h * w}));
  const std::size_t H = h * cs, W = w * cs;
  std::vector<std::size_t> idx(nf * 3 * H * W);
  std::size_t o = 0;
  for (std::size_t f = 0; f < nf; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) idx[o++] = (f * 3 + c) * h * w + (y / cs) * w + x / cs;
  return clamp(gather(feats, std::move(idx), {nf, 3, H, W}), 0.0, 1.0);
}

Tensor CausalVae::decode(const Tensor& latent) const {
  const Shape vs = video_shape(latent.shape());
  const Shape frame{latent.dim(1), latent.dim(2), latent.dim(3)};
  std::vector<Tensor> parts;
  for (std::size_t j = 0; j < latent.dim(0); ++j) {
    parts.push_back(decode_frame(reshape(slice(latent, 0, j, 1), frame), j == 0));
  }
  frames_read_ += latent.dim(0);
  auto out = parts.size() == 1 ? parts[0] : concat(parts, 0);
  if (out.shape() != vs) throw ShapeError("vae: internal decode shape mismatch");
  return out;
}

Tensor CausalVae::decode_first_frame(const Tensor& latent) const {
  const Shape vs = video_shape(latent.shape());
  const Shape frame{latent.dim(1), latent.dim(2), latent.dim(3)};
  auto out = decode_frame(reshape(slice(latent, 0, 0, 1), frame), true);
  frames_read_ += 1;
  return reshape(out, {3, vs[2], vs[3]});
}

std::vector<std::uint8_t> encode_cvpx(const Tensor& video) {
  if (video.rank() != 4) throw ShapeError("cvpx: expected [frames, channels, H, W], got " + to_string(video.shape()));
  ByteWriter w;
  w.str("CVPX");
  w.u32(kCvpxVersion);
  for (auto d : video.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : video.values()) w.f32(static_cast<float>(v));
  return w.take();
}

Tensor decode_cvpx(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != "CVPX") throw ProtocolError("cvpx: bad magic", 0);
  const auto version = r.u32();
  if (version != kCvpxVersion) r.fail("cvpx: unsupported version " + std::to_string(version));
  Shape shape(4);
  for (auto& d : shape) d = r.u32();
  const std::size_t n = numel(shape);
  if (r.remaining() != n * 4) r.fail("cvpx: payload size does not match dims " + to_string(shape));
  std::vector<double> v(n);
  for (auto& x : v) x = r.f32();
  return Tensor::from(shape, std::move(v));
}

void write_cvpx(const std::filesystem::path& path, const Tensor& video) { write_file_atomic(path, encode_cvpx(video)); }

Tensor read_cvpx(const std::filesystem::path& path) { return decode_cvpx(read_file(path)); }

}  // namespace vf
