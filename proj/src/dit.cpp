// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/dit.hpp"

#include <cctype>
#include <cmath>
#include <sstream>

#include "vidflow/error.hpp"

namespace vf {

void ModelConfig::validate() const {
  if (patch.t == 0 || patch.h == 0 || patch.w == 0) throw ConfigError("patch extents must be positive");
  if (layers == 0 || heads == 0 || head_dim == 0 || ffn_dim == 0 || latent_channels == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (hidden() % 2 != 0) throw ConfigError("hidden size must be even");
  if (pe_mode == PeMode::kRope) rope_blocks(head_dim);
  if (learned_ape && (max_grid[0] == 0 || max_grid[1] == 0 || max_grid[2] == 0)) {
    throw ConfigError("learned APE needs a positive max_grid");
  }
}

TokenGrid patchify(const Tensor& latent, Patch patch) {
  if (latent.rank() != 4) throw ShapeError("patchify: expected [T', C, H', W'], got " + to_string(latent.shape()));
  const std::size_t T = latent.dim(0), C = latent.dim(1), H = latent.dim(2), W = latent.dim(3);
  auto check = [](const char* axis, std::size_t n, std::size_t p) {
    if (p == 0 || n % p != 0) {
      throw ShapeError(std::string("patchify: axis ") + axis + " extent " + std::to_string(n) +
                       " not divisible by patch " + std::to_string(p));
    }
  };
  check("t", T, patch.t);
  check("h", H, patch.h);
  check("w", W, patch.w);
  TokenGrid g;
  g.t = T / patch.t;
  g.h = H / patch.h;
  g.w = W / patch.w;
  g.patch = patch;
  g.channels = C;
  const std::size_t P = C * patch.t * patch.h * patch.w;
  std::vector<std::size_t> idx;
  idx.reserve(g.length() * P);
  for (std::size_t ft = 0; ft < g.t; ++ft)
    for (std::size_t fh = 0; fh < g.h; ++fh)
      for (std::size_t fw = 0; fw < g.w; ++fw)
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t dt = 0; dt < patch.t; ++dt)
            for (std::size_t dh = 0; dh < patch.h; ++dh)
              for (std::size_t dw = 0; dw < patch.w; ++dw) {
                const std::size_t tt = ft * patch.t + dt, hh = fh * patch.h + dh, ww = fw * patch.w + dw;
                idx.push_back(((tt * C + c) * H + hh) * W + ww);
              }
  g.tokens = gather(latent, std::move(idx), {g.length(), P});
  return g;
}

Tensor unpatchify(const TokenGrid& g) {
  const Patch p = g.patch;
  const std::size_t C = g.channels, P = C * p.t * p.h * p.w;
  if (!g.tokens.defined() || g.tokens.shape() != Shape{g.length(), P}) {
    throw ShapeError("unpatchify: tokens " + (g.tokens.defined() ? to_string(g.tokens.shape()) : "undefined") +
                     " inconsistent with grid " + std::to_string(g.t) + "x" + std::to_string(g.h) + "x" +
                     std::to_string(g.w) + " and token dim " + std::to_string(P));
  }
  const std::size_t T = g.t * p.t, H = g.h * p.h, W = g.w * p.w;
  std::vector<std::size_t> idx(T * C * H * W);
  std::size_t o = 0;
  for (std::size_t tt = 0; tt < T; ++tt)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t hh = 0; hh < H; ++hh)
        for (std::size_t ww = 0; ww < W; ++ww) {
          const std::size_t token = ((tt / p.t) * g.h + hh / p.h) * g.w + ww / p.w;
          const std::size_t feat = ((c * p.t + tt % p.t) * p.h + hh % p.h) * p.w + ww % p.w;
          idx[o++] = token * P + feat;
        }
  return gather(g.tokens, std::move(idx), {T, C, H, W});
}

std::vector<double> sincos_1d(double pos, std::size_t dim) {
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i / 2) / static_cast<double>(dim));
    out[i] = (i % 2 == 0) ? std::sin(pos * freq) : std::cos(pos * freq);
  }
  return out;
}

Tensor build_spatial_ape(std::size_t h, std::size_t w, std::size_t hidden) {
  if (hidden % 2 != 0) throw ConfigError("APE needs an even hidden size");
  const std::size_t half = hidden / 2;
  std::vector<double> out(h * w * hidden);
  for (std::size_t i = 0; i < h; ++i) {
    auto row = sincos_1d(static_cast<double>(i), half);
    for (std::size_t j = 0; j < w; ++j) {
      auto col = sincos_1d(static_cast<double>(j), hidden - half);
      double* dst = out.data() + (i * w + j) * hidden;
      std::copy(row.begin(), row.end(), dst);
      std::copy(col.begin(), col.end(), dst + half);
    }
  }
  return Tensor::from({h * w, hidden}, std::move(out));
}

Tensor build_ape(std::size_t t, std::size_t h, std::size_t w, std::size_t hidden) {
  auto spatial = build_spatial_ape(h, w, hidden);
  auto sv = spatial.values();
  const auto zero = sincos_1d(0.0, hidden);
  std::vector<double> out(t * h * w * hidden);
  for (std::size_t f = 0; f < t; ++f) {
    auto temporal = sincos_1d(static_cast<double>(f), hidden);
    for (std::size_t s = 0; s < h * w; ++s)
      for (std::size_t d = 0; d < hidden; ++d) {
        out[(f * h * w + s) * hidden + d] = sv[s * hidden + d] + (temporal[d] - zero[d]);
      }
  }
  return Tensor::from({t * h * w, hidden}, std::move(out));
}

std::array<std::size_t, 3> rope_blocks(std::size_t head_dim) {
  if (head_dim % 2 != 0 || head_dim < 6) {
    throw ConfigError("RoPE needs an even head_dim >= 6, got " + std::to_string(head_dim));
  }
  const std::size_t b = 2 * (head_dim / 6);
  return {head_dim - 2 * b, b, b};
}

std::vector<Pos3> grid_positions(std::size_t t, std::size_t h, std::size_t w) {
  std::vector<Pos3> out;
  out.reserve(t * h * w);
  for (std::size_t a = 0; a < t; ++a)
    for (std::size_t b = 0; b < h; ++b)
      for (std::size_t c = 0; c < w; ++c)
        out.push_back({static_cast<double>(a), static_cast<double>(b), static_cast<double>(c)});
  return out;
}

Tensor apply_rope(const Tensor& x, std::span<const Pos3> positions, double theta) {
  if (x.rank() != 2 || x.dim(0) != positions.size()) {
    throw ShapeError("apply_rope: x " + to_string(x.shape()) + " vs " + std::to_string(positions.size()) +
                     " positions");
  }
  const std::size_t L = x.dim(0), d = x.dim(1);
  const auto blocks = rope_blocks(d);
  std::vector<double> cs(L * d / 2), sn(L * d / 2);
  for (std::size_t l = 0; l < L; ++l) {
    const double pos[3] = {positions[l].t, positions[l].h, positions[l].w};
    std::size_t pair = 0;
    for (int axis = 0; axis < 3; ++axis) {
      const std::size_t n = blocks[axis] / 2;
      for (std::size_t i = 0; i < n; ++i, ++pair) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(blocks[axis]));
        cs[l * d / 2 + pair] = std::cos(pos[axis] * freq);
        sn[l * d / 2 + pair] = std::sin(pos[axis] * freq);
      }
    }
  }
  return rotate_pairs(x, std::move(cs), std::move(sn));
}

Tensor attention_weights(const Tensor& q, const Tensor& k, const Tensor& q_gain, const Tensor& k_gain, double eps,
                         std::span<const Pos3> positions, double theta) {
  if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1)) {
    throw ShapeError("attention: q " + to_string(q.shape()) + " and k " + to_string(k.shape()) +
                     " must be [L, d] with equal d");
  }
  if (!positions.empty() && q.dim(0) != k.dim(0)) throw ShapeError("attention: RoPE needs self-attention");
  auto qn = rms_norm(q, q_gain, eps);
  auto kn = rms_norm(k, k_gain, eps);
  if (!positions.empty()) {
    qn = apply_rope(qn, positions, theta);
    kn = apply_rope(kn, positions, theta);
  }
  auto scores = scale(matmul(qn, transpose(kn)), 1.0 / std::sqrt(static_cast<double>(q.dim(1))));
  return softmax(scores, 1);
}

Tensor attend(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& q_gain, const Tensor& k_gain,
              double eps, std::span<const Pos3> positions, double theta) {
  if (v.rank() != 2 || v.dim(0) != k.dim(0)) throw ShapeError("attention: v must have one row per key");
  return matmul(attention_weights(q, k, q_gain, k_gain, eps, positions, theta), v);
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& q_gain, const Tensor& k_gain,
                 double eps) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q, k, v must share shape [heads, L, head_dim]");
  }
  const std::size_t H = q.dim(0), L = q.dim(1), d = q.dim(2);
  std::vector<Tensor> heads;
  for (std::size_t h = 0; h < H; ++h) {
    auto pick = [&](const Tensor& a) { return reshape(slice(a, 0, h, 1), {L, d}); };
    heads.push_back(reshape(attend(pick(q), pick(k), pick(v), q_gain, k_gain, eps), {1, L, d}));
  }
  return H == 1 ? heads[0] : concat(heads, 0);
}

TextEncoderStub::TextEncoderStub(std::size_t dim, std::uint64_t seed, std::size_t vocab)
    : dim_(dim), seed_(seed), vocab_(vocab) {
  if (dim_ == 0 || vocab_ == 0) throw ConfigError("text encoder needs positive dim and vocab");
}

std::vector<double> TextEncoderStub::encode(const std::string& prompt) const {
  std::vector<double> out(dim_, 0.0);
  std::istringstream in(prompt);
  std::string tok;
  std::size_t n = 0;
  const Rng root(seed_);
  const double sd = 1.0 / std::sqrt(static_cast<double>(dim_));
  while (in >> tok) {
    for (auto& ch : tok) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    Rng row = root.fork(fnv1a64(tok) % vocab_);
    for (auto& v : out) v += sd * row.normal();
    ++n;
  }
  if (n > 0)
    for (auto& v : out) v /= static_cast<double>(n);
  return out;
}

Tensor TextEncoderStub::encode_batch(std::span<const std::string> prompts) const {
  std::vector<double> out;
  out.reserve(prompts.size() * dim_);
  for (const auto& p : prompts) {
    auto e = encode(p);
    out.insert(out.end(), e.begin(), e.end());
  }
  return Tensor::from({prompts.size(), dim_}, std::move(out));
}

VideoDit::VideoDit(ModelConfig config, Rng& rng) : config_(config) {
  config_.validate();
  const std::size_t D = config_.hidden(), P = config_.patch_dim();
  embed_ = Linear(P, D, rng);
  t_mlp1_ = Linear(D, D, rng);
  t_mlp2_ = Linear(D, D, rng);
  if (config_.cond_dim > 0) text_proj_ = Linear(config_.cond_dim, D, rng);
  for (std::size_t i = 0; i < config_.layers; ++i) {
    Block b;
    b.ada = Linear(D, 6 * D, rng, 0.1);
    b.qkv = Linear(D, 3 * D, rng);
    b.proj = Linear(D, D, rng);
    b.ffn1 = Linear(D, config_.ffn_dim, rng);
    b.ffn2 = Linear(config_.ffn_dim, D, rng);
    b.q_gain = Tensor::parameter({config_.head_dim}, std::vector<double>(config_.head_dim, 1.0));
    b.k_gain = Tensor::parameter({config_.head_dim}, std::vector<double>(config_.head_dim, 1.0));
    blocks_.push_back(std::move(b));
  }
  final_ada_ = Linear(D, 2 * D, rng, 0.1);
  out_ = Linear(D, P, rng);
  if (config_.pe_mode == PeMode::kApe && config_.learned_ape) {
    ape_t_ = Tensor::randn({config_.max_grid[0], D}, rng, 0.02);
    ape_h_ = Tensor::randn({config_.max_grid[1], D}, rng, 0.02);
    ape_w_ = Tensor::randn({config_.max_grid[2], D}, rng, 0.02);
    for (auto* p : {&ape_t_, &ape_h_, &ape_w_}) p->set_requires_grad(true);
  }
}

namespace {

Tensor chunk(const Tensor& mod, std::size_t k, std::size_t D) { return reshape(slice(mod, 1, k * D, D), {D}); }

Tensor modulate(const Tensor& x, const Tensor& shift, const Tensor& scl, double eps) {
  return add_row(mul_row(layer_norm(x, eps), add_scalar(scl, 1.0)), shift);
}

Tensor rows_of(const Tensor& table, std::size_t count, std::size_t repeat_outer, std::size_t repeat_inner,
               std::size_t D) {
  // Row r of the result is table[(r / repeat_inner) % count].
  std::vector<std::size_t> idx;
  const std::size_t L = repeat_outer * count * repeat_inner;
  idx.reserve(L * D);
  for (std::size_t r = 0; r < L; ++r) {
    const std::size_t row = (r / repeat_inner) % count;
    for (std::size_t d = 0; d < D; ++d) idx.push_back(row * D + d);
  }
  return gather(table, std::move(idx), {L, D});
}

}  // namespace

Tensor VideoDit::forward_one(const Tensor& latent, double t, const Tensor& cond_row) {
  const std::size_t D = config_.hidden(), hd = config_.head_dim;
  const double eps = config_.norm_eps;
  TokenGrid grid = patchify(latent, config_.patch);
  Tensor x = embed_(grid.tokens);

  std::vector<Pos3> positions;
  if (config_.pe_mode == PeMode::kRope) {
    positions = grid_positions(grid.t, grid.h, grid.w);
  } else if (config_.learned_ape) {
    if (grid.t > config_.max_grid[0] || grid.h > config_.max_grid[1] || grid.w > config_.max_grid[2]) {
      throw ShapeError("ape: token grid exceeds the learned table extents");
    }
    auto et = rows_of(slice(ape_t_, 0, 0, grid.t), grid.t, 1, grid.h * grid.w, D);
    auto eh = rows_of(slice(ape_h_, 0, 0, grid.h), grid.h, grid.t, grid.w, D);
    auto ew = rows_of(slice(ape_w_, 0, 0, grid.w), grid.w, grid.t * grid.h, 1, D);
    x = add(x, add(et, add(eh, ew)));
  } else {
    x = add(x, build_ape(grid.t, grid.h, grid.w, D));
  }

  const double tv[1] = {t};
  Tensor c = t_mlp2_(silu(t_mlp1_(timestep_embedding(tv, D))));
  if (config_.cond_dim > 0 && cond_row.defined()) c = add(c, text_proj_(cond_row));
  const Tensor sc = silu(c);

  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const Block& b = blocks_[i];
    try {
      auto mod = b.ada(sc);
      auto h = modulate(x, chunk(mod, 0, D), chunk(mod, 1, D), eps);
      auto qkv = b.qkv(h);
      std::vector<Tensor> heads;
      for (std::size_t k = 0; k < config_.heads; ++k) {
        heads.push_back(attend(slice(qkv, 1, k * hd, hd), slice(qkv, 1, D + k * hd, hd),
                               slice(qkv, 1, 2 * D + k * hd, hd), b.q_gain, b.k_gain, eps, positions,
                               config_.rope_theta));
      }
      auto attn = b.proj(heads.size() == 1 ? heads[0] : concat(heads, 1));
      x = add(x, mul_row(attn, chunk(mod, 2, D)));
      h = modulate(x, chunk(mod, 3, D), chunk(mod, 4, D), eps);
      x = add(x, mul_row(b.ffn2(gelu(b.ffn1(h))), chunk(mod, 5, D)));
    } catch (const ShapeError& e) {
      throw ShapeError("block " + std::to_string(i) + ": " + e.what());
    }
  }
  auto mod = final_ada_(sc);
  grid.tokens = out_(modulate(x, chunk(mod, 0, D), chunk(mod, 1, D), eps));
  return unpatchify(grid);
}

Tensor VideoDit::velocity(const Tensor& x, std::span<const double> t, const Tensor& cond) {
  if (x.rank() != 5) throw ShapeError("dit: expected [B, T', C, H', W'], got " + to_string(x.shape()));
  if (x.dim(2) != config_.latent_channels) {
    throw ShapeError("dit: expected " + std::to_string(config_.latent_channels) + " latent channels, got " +
                     std::to_string(x.dim(2)));
  }
  const std::size_t B = x.dim(0);
  if (t.size() != B) throw ShapeError("dit: expected one time per sample");
  if (cond.defined() && cond.shape() != Shape{B, config_.cond_dim}) {
    throw ShapeError("dit: cond " + to_string(cond.shape()) + " must be [B, " + std::to_string(config_.cond_dim) +
                     "]");
  }
  const Shape one{x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
  Shape batched1{1, x.dim(1), x.dim(2), x.dim(3), x.dim(4)};
  std::vector<Tensor> outs;
  for (std::size_t b = 0; b < B; ++b) {
    Tensor xi = B == 1 ? reshape(x, one) : reshape(slice(x, 0, b, 1), one);
    Tensor ci = cond.defined() ? (B == 1 ? cond : slice(cond, 0, b, 1)) : Tensor();
    outs.push_back(reshape(forward_one(xi, t[b], ci), batched1));
  }
  return B == 1 ? outs[0] : concat(outs, 0);
}

NamedTensors VideoDit::named_parameters() const {
  NamedTensors out;
  embed_.collect("embed", out);
  t_mlp1_.collect("t_mlp.0", out);
  t_mlp2_.collect("t_mlp.1", out);
  if (config_.cond_dim > 0) text_proj_.collect("text_proj", out);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    const std::string p = "blocks." + std::to_string(i);
    const Block& b = blocks_[i];
    b.ada.collect(p + ".ada", out);
    b.qkv.collect(p + ".qkv", out);
    b.proj.collect(p + ".proj", out);
    b.ffn1.collect(p + ".ffn.0", out);
    b.ffn2.collect(p + ".ffn.1", out);
    out.emplace_back(p + ".q_norm", b.q_gain);
    out.emplace_back(p + ".k_norm", b.k_gain);
  }
  final_ada_.collect("final.ada", out);
  out_.collect("final.out", out);
  if (ape_t_.defined()) {
    out.emplace_back("ape.t", ape_t_);
    out.emplace_back("ape.h", ape_h_);
    out.emplace_back("ape.w", ape_w_);
  }
  return out;
}

}  // namespace vf
