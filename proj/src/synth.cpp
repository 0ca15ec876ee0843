// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "vidflow/error.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/vae.hpp"

namespace vf::synth {

namespace {

std::size_t wrap(long v, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<std::size_t>(((v % m) + m) % m);
}

}  // namespace

Tensor constant_video(std::size_t frames, std::size_t h, std::size_t w, Rgb colour) {
  std::vector<double> v(frames * 3 * h * w);
  for (std::size_t f = 0; f < frames; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      std::fill_n(v.begin() + static_cast<long>((f * 3 + c) * h * w), h * w, colour[c]);
  return Tensor::from({frames, 3, h, w}, std::move(v));
}

Tensor hard_cut(std::size_t frames, std::size_t h, std::size_t w, std::size_t cut, Rgb a, Rgb b) {
  auto v = constant_video(frames, h, w, a);
  auto mv = v.mutable_values();
  for (std::size_t f = cut; f < frames; ++f)
    for (std::size_t c = 0; c < 3; ++c)
      std::fill_n(mv.begin() + static_cast<long>((f * 3 + c) * h * w), h * w, b[c]);
  return v;
}

Tensor crossfade(std::size_t frames, std::size_t h, std::size_t w, std::size_t start, std::size_t length, Rgb a,
                 Rgb b) {
  auto v = constant_video(frames, h, w, a);
  auto mv = v.mutable_values();
  for (std::size_t f = 0; f < frames; ++f) {
    const double s = f <= start ? 0.0 : std::min(1.0, static_cast<double>(f - start) / static_cast<double>(length));
    for (std::size_t c = 0; c < 3; ++c)
      std::fill_n(mv.begin() + static_cast<long>((f * 3 + c) * h * w), h * w, (1 - s) * a[c] + s * b[c]);
  }
  return v;
}

Tensor texture(std::size_t h, std::size_t w, std::uint64_t seed) {
  // Sum of a few random periodic waves per channel plus fine noise.
  Rng rng(seed);
  std::vector<double> v(3 * h * w, 0.0);
  for (std::size_t c = 0; c < 3; ++c) {
    for (int k = 0; k < 6; ++k) {
      const double fy = static_cast<double>(1 + rng.below(4)), fx = static_cast<double>(1 + rng.below(4));
      const double phase = 2 * std::numbers::pi * rng.uniform(), amp = 0.08 + 0.04 * rng.uniform();
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
          v[(c * h + y) * w + x] += amp * std::sin(2 * std::numbers::pi * (fy * y / h + fx * x / w) + phase);
        }
    }
    for (std::size_t i = 0; i < h * w; ++i) {
      double& p = v[c * h * w + i];
      p = std::clamp(0.5 + p + 0.2 * (rng.uniform() - 0.5), 0.0, 1.0);
    }
  }
  return Tensor::from({3, h, w}, std::move(v));
}

Tensor checkerboard(std::size_t h, std::size_t w, std::size_t cell) {
  std::vector<double> v(3 * h * w);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) v[(c * h + y) * w + x] = ((y / cell + x / cell) % 2) ? 1.0 : 0.0;
  return Tensor::from({3, h, w}, std::move(v));
}

Tensor gaussian_blur(const Tensor& frame, double sigma) {
  if (frame.rank() != 3) throw ShapeError("gaussian_blur: expected [C, H, W]");
  if (!(sigma > 0)) return frame.detach();
  const long r = static_cast<long>(std::ceil(3 * sigma));
  std::vector<double> k(2 * r + 1);
  double ks = 0;
  for (long i = -r; i <= r; ++i) ks += k[i + r] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& x : k) x /= ks;
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const auto in = frame.values();
  std::vector<double> tmp(in.size()), out(in.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * in[(c * H + y) * W + wrap(static_cast<long>(x) + i, W)];
        tmp[(c * H + y) * W + x] = s;
      }
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        double s = 0;
        for (long i = -r; i <= r; ++i) s += k[i + r] * tmp[(c * H + wrap(static_cast<long>(y) + i, H)) * W + x];
        out[(c * H + y) * W + x] = s;
      }
  return Tensor::from(frame.shape(), std::move(out));
}

Tensor shift_frame(const Tensor& frame, long dx, long dy) {
  const std::size_t C = frame.dim(0), H = frame.dim(1), W = frame.dim(2);
  const auto in = frame.values();
  std::vector<double> out(in.size());
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x) {
        out[(c * H + y) * W + x] =
            in[(c * H + wrap(static_cast<long>(y) - dy, H)) * W + wrap(static_cast<long>(x) - dx, W)];
      }
  return Tensor::from(frame.shape(), std::move(out));
}

Tensor stack_frames(const std::vector<Tensor>& frames) {
  if (frames.empty()) throw ContractError("stack_frames: no frames");
  const Shape fs = frames[0].shape();
  std::vector<double> v;
  v.reserve(frames.size() * frames[0].numel());
  for (const auto& f : frames) {
    if (f.shape() != fs) throw ShapeError("stack_frames: frame shapes differ");
    v.insert(v.end(), f.values().begin(), f.values().end());
  }
  return Tensor::from({frames.size(), fs[0], fs[1], fs[2]}, std::move(v));
}

Tensor frame_range(const Tensor& video, std::size_t begin, std::size_t end) {
  if (begin >= end || end > video.dim(0)) throw ContractError("frame_range: bad range");
  const std::size_t per = video.numel() / video.dim(0);
  Shape s = video.shape();
  s[0] = end - begin;
  return Tensor::from(s, {video.values().begin() + static_cast<long>(begin * per),
                          video.values().begin() + static_cast<long>(end * per)});
}

Tensor concat_videos(const std::vector<Tensor>& parts) {
  std::vector<double> v;
  std::size_t frames = 0;
  for (const auto& p : parts) {
    if (p.rank() != 4 || p.dim(1) != parts[0].dim(1) || p.dim(2) != parts[0].dim(2) || p.dim(3) != parts[0].dim(3)) {
      throw ShapeError("concat_videos: frame shapes differ");
    }
    v.insert(v.end(), p.values().begin(), p.values().end());
    frames += p.dim(0);
  }
  return Tensor::from({frames, parts[0].dim(1), parts[0].dim(2), parts[0].dim(3)}, std::move(v));
}

Tensor pan(std::size_t frames, std::size_t h, std::size_t w, long dx, long dy, std::uint64_t seed) {
  const auto base = texture(h, w, seed);
  std::vector<Tensor> out;
  for (std::size_t f = 0; f < frames; ++f) {
    out.push_back(shift_frame(base, dx * static_cast<long>(f), dy * static_cast<long>(f)));
  }
  return stack_frames(out);
}

Tensor moving_square(std::size_t frames, std::size_t h, std::size_t w, std::size_t size, long speed,
                     std::uint64_t seed) {
  const auto bg = texture(h, w, seed);
  const auto fg = texture(h, w, seed ^ 0x9e37);
  std::vector<Tensor> out;
  const std::size_t top = (h - size) / 2;
  for (std::size_t f = 0; f < frames; ++f) {
    auto frame = bg.detach();
    auto mv = frame.mutable_values();
    const long left = speed * static_cast<long>(f);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = top; y < top + size; ++y)
        for (std::size_t i = 0; i < size; ++i) {
          const std::size_t x = wrap(left + static_cast<long>(i), w);
          // The square carries its own texture, translated with it.
          mv[(c * h + y) * w + x] = fg[(c * h + y) * w + i];
        }
    out.push_back(frame);
  }
  return stack_frames(out);
}

void write_fixture_corpus(const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const std::size_t H = 32, W = 32;
  const double fps = 4.0;
  struct Item {
    std::string id;
    Tensor video;
  };
  std::vector<Item> items;
  // Two shots separated by a hard cut: a pan then a static scene.
  items.push_back({"cut_pan_static", concat_videos({pan(28, H, W, 2, 0, 11), pan(20, H, W, 0, 0, 12)})});
  // A moving object on a static background, then a blurred shot.
  {
    auto sharp = moving_square(26, H, W, 8, 1, 21);
    auto other = moving_square(14, H, W, 8, 1, 22);
    std::vector<Tensor> blurred;
    for (std::size_t f = 0; f < 14; ++f) {
      blurred.push_back(gaussian_blur(reshape(frame_range(other, f, f + 1), {3, H, W}), 2.5));
    }
    items.push_back({"square_then_blur", concat_videos({sharp, stack_frames(blurred)})});
  }
  // A slow crossfade between two textures (no cut), long enough for two clips.
  {
    auto a = texture(H, W, 31), b = texture(H, W, 32);
    std::vector<Tensor> frames;
    for (std::size_t f = 0; f < 40; ++f) {
      const double s = static_cast<double>(f) / 39.0;
      frames.push_back(add(scale(a, 1 - s), scale(b, s)));
    }
    items.push_back({"crossfade", stack_frames(frames)});
  }
  // Near-duplicate of the first shot of the first video.
  items.push_back({"dup_pan", pan(24, H, W, 2, 0, 11)});
  for (const auto& it : items) {
    write_cvpx(dir / (it.id + ".cvpx"), it.video);
    std::ofstream side(dir / (it.id + ".json"));
    side << "{\"id\": \"" << it.id << "\", \"fps\": " << fps << "}\n";
  }
}

}  // namespace vf::synth
