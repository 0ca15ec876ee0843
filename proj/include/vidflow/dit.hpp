// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "vidflow/nn.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/tensor.hpp"

namespace vf {

enum class PeMode { kApe, kRope };

struct Patch {
  std::size_t t = 1, h = 2, w = 2;
};

struct ModelConfig {
  Patch patch;
  std::size_t layers = 4;
  std::size_t heads = 4;
  std::size_t head_dim = 16;
  std::size_t ffn_dim = 256;
  PeMode pe_mode = PeMode::kApe;
  std::size_t latent_channels = 16;
  std::size_t cond_dim = 32;
  bool learned_ape = false;
  /// Largest token grid (t, h, w) a learned APE table covers.
  std::array<std::size_t, 3> max_grid{16, 16, 16};
  double rope_theta = 10000.0;
  double norm_eps = 1e-6;

  std::size_t hidden() const { return heads * head_dim; }
  std::size_t patch_dim() const { return latent_channels * patch.t * patch.h * patch.w; }
  void validate() const;
};

struct TokenGrid {
  Tensor tokens;  // [L, C * pt * ph * pw]
  std::size_t t = 0, h = 0, w = 0;
  Patch patch;
  std::size_t channels = 0;

  std::size_t length() const { return t * h * w; }
};

/// latent [T', C, H', W'] -> tokens ordered time-major, then row-major over
/// (h, w). Each token's features are laid out (c, dt, dh, dw).
TokenGrid patchify(const Tensor& latent, Patch patch);
Tensor unpatchify(const TokenGrid& grid);

/// Sinusoidal 1D embedding of one position into `dim` features.
std::vector<double> sincos_1d(double pos, std::size_t dim);
/// Image table [h * w, hidden]: first half of the features encode the row,
/// second half the column.
Tensor build_spatial_ape(std::size_t h, std::size_t w, std::size_t hidden);
/// Spatial table plus a temporal term sincos(f) - sincos(0), so a single
/// frame grid equals the image table.
Tensor build_ape(std::size_t t, std::size_t h, std::size_t w, std::size_t hidden);

/// Feature split of one head for 3D RoPE: {t, h, w} block widths.
std::array<std::size_t, 3> rope_blocks(std::size_t head_dim);

struct Pos3 {
  double t = 0, h = 0, w = 0;
};
std::vector<Pos3> grid_positions(std::size_t t, std::size_t h, std::size_t w);

/// Rotates x [L, head_dim] by the per-axis rotary angles of `positions`.
Tensor apply_rope(const Tensor& x, std::span<const Pos3> positions, double theta = 10000.0);

/// One head: softmax(rms(q) rms(k)^T / sqrt(d)) v, full attention. When
/// `positions` is non-empty, RoPE rotates the normalized q and k.
Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& q_gain, const Tensor& k_gain,
              double eps, std::span<const Pos3> positions = {}, double theta = 10000.0);
/// Attention probabilities of one head, [L, L].
Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& q_gain, const Tensor& k_gain, double eps,
                         std::span<const Pos3> positions = {}, double theta = 10000.0);
/// q, k, v: [heads, L, head_dim].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& q_gain, const Tensor& k_gain,
                 double eps);

/// Hash-based stand-in for a text encoder: each whitespace token indexes a
/// seeded random row, rows are mean-pooled. The empty prompt maps to zeros.
class TextEncoderStub {
 public:
  TextEncoderStub(std::size_t dim, std::uint64_t seed, std::size_t vocab = 4096);
  std::vector<double> encode(const std::string& prompt) const;
  Tensor encode_batch(std::span<const std::string> prompts) const;
  std::size_t dim() const { return dim_; }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::size_t vocab_;
};

/// Input x is [B, T', C, H', W'].
class VideoDit final : public VelocityModel {
 public:
  VideoDit(ModelConfig config, Rng& rng);

  Tensor velocity(const Tensor& x, std::span<const double> t, const Tensor& cond) override;
  NamedTensors named_parameters() const override;
  std::size_t cond_dim() const override { return config_.cond_dim; }
  const ModelConfig& config() const { return config_; }

 private:
  struct Block {
    Linear ada, qkv, proj, ffn1, ffn2;
    Tensor q_gain, k_gain;
  };

  Tensor forward_one(const Tensor& latent, double t, const Tensor& cond_row);

  ModelConfig config_;
  Linear embed_, t_mlp1_, t_mlp2_, text_proj_, final_ada_, out_;
  std::vector<Block> blocks_;
  Tensor ape_t_, ape_h_, ape_w_;  // learned APE only
};

}  // namespace vf
