// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vidflow/tensor.hpp"

namespace vf {

struct VaeConfig {
  std::size_t temporal = 4;  // c_t
  std::size_t spatial = 8;   // c_s
  std::size_t channels = 16;
  std::uint64_t seed = 0x5eed;
};

/// Fixed, untrained block-causal autoencoder with the usual video VAE shape
/// contract: pixels [T+1, 3, H, W] <-> latents [T/c_t + 1, C, H/c_s, W/c_s].
///
/// Latent frame 0 is built from pixel frame 0 alone; latent frame j >= 1
/// from pixel frames 4(j-1)+1 .. 4j. Spatially each c_s x c_s block is
/// average pooled, then the pooled colours of the window are lifted to C
/// channels by a seeded map with orthonormal columns. Decoding applies the
/// transpose, repeats each value over its block and clamps to [0, 1], so
/// block-constant videos round-trip up to rounding.
class CausalVae {
 public:
  explicit CausalVae(VaeConfig config = {});

  /// Constant tensor (no recording).
  Tensor encode(const Tensor& video) const;
  /// Records when `latent` does.
  Tensor decode(const Tensor& latent) const;
  /// Equal to decode(latent) frame 0 but reads latent frame 0 only.
  Tensor decode_first_frame(const Tensor& latent) const;

  Shape latent_shape(const Shape& video_shape) const;
  Shape video_shape(const Shape& latent_shape) const;

  /// Number of latent frames read by decode calls so far.
  std::size_t latent_frames_read() const { return frames_read_.load(); }
  const VaeConfig& config() const { return config_; }

 private:
  Tensor decode_frame(const Tensor& latent_frame, bool first) const;

  VaeConfig config_;
  std::vector<double> lift_first_;  // [C, 3], orthonormal columns
  std::vector<double> lift_;        // [C, 3 * c_t]
  mutable std::atomic<std::size_t> frames_read_{0};
};

// CVPX raw video files: "CVPX" | u32 version | u32 frames, channels, height,
// width | little-endian f32 values.
inline constexpr std::uint32_t kCvpxVersion = 1;

std::vector<std::uint8_t> encode_cvpx(const Tensor& video);
Tensor decode_cvpx(std::span<const std::uint8_t> bytes);
void write_cvpx(const std::filesystem::path& path, const Tensor& video);
Tensor read_cvpx(const std::filesystem::path& path);

}  // namespace vf
