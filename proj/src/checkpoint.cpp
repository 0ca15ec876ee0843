// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/checkpoint.hpp"

#include "vidflow/bytes.hpp"
#include "vidflow/dit.hpp"
#include "vidflow/error.hpp"

namespace vf {

namespace {

constexpr char kMagic[4] = {'C', 'V', 'W', 'T'};
constexpr std::uint8_t kDtypeF64 = 0x01;

void write_config(ByteWriter& w, const ModelConfig& c) {
  for (std::size_t v : {c.patch.t, c.patch.h, c.patch.w, c.layers, c.heads, c.head_dim, c.ffn_dim}) {
    w.u32(static_cast<std::uint32_t>(v));
  }
  w.u32(c.pe_mode == PeMode::kRope ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(c.latent_channels));
  w.u32(static_cast<std::uint32_t>(c.cond_dim));
  w.u32(c.learned_ape ? 1 : 0);
  for (std::size_t v : c.max_grid) w.u32(static_cast<std::uint32_t>(v));
  w.f64(c.rope_theta);
  w.f64(c.norm_eps);
}

ModelConfig read_dit_config(ByteReader& r) {
  ModelConfig c;
  c.patch.t = r.u32();
  c.patch.h = r.u32();
  c.patch.w = r.u32();
  c.layers = r.u32();
  c.heads = r.u32();
  c.head_dim = r.u32();
  c.ffn_dim = r.u32();
  const auto pe = r.u32();
  if (pe > 1) r.fail("unknown pe_mode " + std::to_string(pe));
  c.pe_mode = pe ? PeMode::kRope : PeMode::kApe;
  c.latent_channels = r.u32();
  c.cond_dim = r.u32();
  c.learned_ape = r.u32() != 0;
  for (auto& v : c.max_grid) v = r.u32();
  c.rope_theta = r.f64();
  c.norm_eps = r.f64();
  return c;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const VelocityModel& model) {
  ByteWriter w;
  w.str(std::string_view(kMagic, 4));
  w.u32(kCheckpointVersion);
  ByteWriter cfg;
  if (auto* dit = dynamic_cast<const VideoDit*>(&model)) {
    w.u32(static_cast<std::uint32_t>(ModelKind::kDit));
    write_config(cfg, dit->config());
  } else if (auto* mlp = dynamic_cast<const MlpVelocity*>(&model)) {
    w.u32(static_cast<std::uint32_t>(ModelKind::kMlp));
    const auto& c = mlp->config();
    for (std::size_t v : {c.data_dim, c.hidden, c.depth, c.time_features, c.cond_dim}) {
      cfg.u32(static_cast<std::uint32_t>(v));
    }
  } else {
    throw ContractError("checkpoint: unsupported model type");
  }
  w.u32(static_cast<std::uint32_t>(cfg.size()));
  w.bytes(cfg.data());
  const auto params = model.named_parameters();
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.u32(static_cast<std::uint32_t>(name.size()));
    w.str(name);
    w.u8(kDtypeF64);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.u64(d);
    for (double v : t.values()) w.f64(v);
  }
  return w.take();
}

std::unique_ptr<VelocityModel> decode_checkpoint(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (r.str(4) != std::string_view(kMagic, 4)) throw ProtocolError("checkpoint: bad magic", 0);
  const auto version = r.u32();
  if (version != kCheckpointVersion) r.fail("checkpoint: unsupported version " + std::to_string(version));
  const auto kind = r.u32();
  const auto cfg_len = r.u32();
  ByteReader cr(r.bytes(cfg_len));
  Rng init(0);
  std::unique_ptr<VelocityModel> model;
  if (kind == static_cast<std::uint32_t>(ModelKind::kDit)) {
    model = std::make_unique<VideoDit>(read_dit_config(cr), init);
  } else if (kind == static_cast<std::uint32_t>(ModelKind::kMlp)) {
    MlpConfig c;
    c.data_dim = cr.u32();
    c.hidden = cr.u32();
    c.depth = cr.u32();
    c.time_features = cr.u32();
    c.cond_dim = cr.u32();
    model = std::make_unique<MlpVelocity>(c, init);
  } else {
    r.fail("checkpoint: unknown model kind " + std::to_string(kind));
  }
  auto params = model->named_parameters();
  const auto count = r.u32();
  if (count != params.size()) {
    r.fail("checkpoint: expected " + std::to_string(params.size()) + " tensors, found " + std::to_string(count));
  }
  for (auto& [name, t] : params) {
    const auto name_len = r.u32();
    const auto got = r.str(name_len);
    if (got != name) r.fail("checkpoint: expected tensor " + name + ", found " + got);
    if (r.u8() != kDtypeF64) r.fail("checkpoint: unsupported dtype for " + name);
    const auto rank = r.u32();
    Shape shape(rank);
    for (auto& d : shape) d = r.u64();
    if (shape != t.shape()) r.fail("checkpoint: tensor " + name + " has shape " + to_string(shape));
    for (auto& v : t.mutable_values()) v = r.f64();
  }
  if (!r.done()) r.fail("checkpoint: trailing bytes");
  return model;
}

void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model) {
  write_file_atomic(path, encode_checkpoint(model));
}

std::unique_ptr<VelocityModel> load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

}  // namespace vf
