// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>

#include "vidflow/tensor.hpp"

// Deterministic synthetic videos [F, 3, H, W] with values in [0, 1], used as
// curation fixtures and for the demo corpus.

namespace vf::synth {

using Rgb = std::array<double, 3>;

Tensor constant_video(std::size_t frames, std::size_t h, std::size_t w, Rgb colour);
/// Colour `a` up to frame `cut` (exclusive), colour `b` from then on.
Tensor hard_cut(std::size_t frames, std::size_t h, std::size_t w, std::size_t cut, Rgb a = {0, 0, 0},
                Rgb b = {1, 1, 1});
/// Linear blend from `a` to `b` over frames [start, start + length].
Tensor crossfade(std::size_t frames, std::size_t h, std::size_t w, std::size_t start, std::size_t length,
                 Rgb a = {0, 0, 0}, Rgb b = {1, 1, 1});

/// Smooth random texture, periodic so that wrap-around shifts stay textured.
Tensor texture(std::size_t h, std::size_t w, std::uint64_t seed);
Tensor checkerboard(std::size_t h, std::size_t w, std::size_t cell);
/// Separable Gaussian blur with wrap-around borders; frame is [3, H, W].
Tensor gaussian_blur(const Tensor& frame, double sigma);
/// Frame [3, H, W] shifted by (dx, dy) with wrap-around: out(y, x) = in(y - dy, x - dx).
Tensor shift_frame(const Tensor& frame, long dx, long dy);

/// Camera pan: frame f is the texture shifted by f * (dx, dy).
Tensor pan(std::size_t frames, std::size_t h, std::size_t w, long dx, long dy, std::uint64_t seed);
/// Static textured background with a textured square of side `size` moving
/// `speed` pixels right per frame.
Tensor moving_square(std::size_t frames, std::size_t h, std::size_t w, std::size_t size, long speed,
                     std::uint64_t seed);

/// Stacks frames [3, H, W] into a video.
Tensor stack_frames(const std::vector<Tensor>& frames);
/// Frames [begin, end) of a video.
Tensor frame_range(const Tensor& video, std::size_t begin, std::size_t end);
Tensor concat_videos(const std::vector<Tensor>& parts);

/// Writes the fixed demo corpus (CVPX videos plus JSON sidecars) used by the
/// golden-manifest test and the CLI examples.
void write_fixture_corpus(const std::filesystem::path& dir);

}  // namespace vf::synth
