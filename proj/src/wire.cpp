// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <limits>

#include "vidflow/bytes.hpp"
#include "vidflow/encode_server.hpp"
#include "vidflow/error.hpp"

namespace vf {

namespace {

constexpr std::size_t kMaxTensorRank = 8;

void put_f32_tensor(ByteWriter& w, const char* name, const Tensor& t) {
  w.u8(static_cast<std::uint8_t>(std::strlen(name)));
  w.str(name);
  w.u8(kDtypeF32);
  w.u8(static_cast<std::uint8_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (double v : t.values()) w.f32(static_cast<float>(v));
}

void put_body(ByteWriter& w, const BatchRequest& m) {
  w.u8(kOpRequest);
  w.u64(m.step);
  w.u32(m.rank);
}

void put_body(ByteWriter& w, const FeatureBatch& m) {
  if (m.latents.rank() != 5 || m.text_emb.rank() != 2 || m.latents.dim(0) != m.sample_ids.size() ||
      m.text_emb.dim(0) != m.sample_ids.size())
    throw ShapeError("encode_message: inconsistent feature batch " + to_string(m.latents.shape()) + ", " +
                     to_string(m.text_emb.shape()) + ", " + std::to_string(m.sample_ids.size()) + " ids");
  w.u8(kOpResponse);
  w.u64(m.step);
  w.u32(m.rank);
  w.u16(m.bucket);
  w.u8(3);
  put_f32_tensor(w, "latents", m.latents);
  put_f32_tensor(w, "text_emb", m.text_emb);
  w.u8(10);
  w.str("sample_ids");
  w.u8(kDtypeU64);
  w.u8(1);
  w.u32(static_cast<std::uint32_t>(m.sample_ids.size()));
  for (auto id : m.sample_ids) w.u64(id);
}

void put_body(ByteWriter& w, const ErrorReply& m) {
  w.u8(kOpError);
  w.u16(m.code);
  const std::size_t n = std::min<std::size_t>(m.message.size(), std::numeric_limits<std::uint16_t>::max());
  w.u16(static_cast<std::uint16_t>(n));
  w.str(std::string_view(m.message).substr(0, n));
}

struct RawTensor {
  std::uint8_t dtype = 0;
  Shape shape;
  std::vector<double> f32;
  std::vector<std::uint64_t> u64;
};

RawTensor read_tensor(ByteReader& r) {
  RawTensor t;
  t.dtype = r.u8();
  const std::size_t elem = t.dtype == kDtypeF32 ? 4 : t.dtype == kDtypeU64 ? 8 : 0;
  if (elem == 0) r.fail("unknown dtype " + std::to_string(t.dtype));
  const std::size_t rank = r.u8();
  if (rank == 0 || rank > kMaxTensorRank) r.fail("bad tensor rank " + std::to_string(rank));
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t d = r.u32();
    if (d == 0) r.fail("zero dimension");
    if (count > r.remaining() / elem / d) r.fail("payload larger than frame");
    count *= d;
    t.shape.push_back(d);
  }
  if (count * elem > r.remaining()) r.fail("truncated payload");
  if (t.dtype == kDtypeF32) {
    t.f32.resize(count);
    for (auto& v : t.f32) v = static_cast<double>(r.f32());
  } else {
    t.u64.resize(count);
    for (auto& v : t.u64) v = r.u64();
  }
  return t;
}

FeatureBatch read_feature_batch(ByteReader& r) {
  FeatureBatch b;
  b.step = r.u64();
  b.rank = r.u32();
  b.bucket = r.u16();
  const std::size_t count = r.u8();
  if (count != 3) r.fail("expected 3 tensors, got " + std::to_string(count));
  bool have_latents = false, have_text = false, have_ids = false;
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t name_at = r.offset();
    const std::string name = r.str(r.u8());
    const std::size_t tensor_at = r.offset();
    RawTensor t = read_tensor(r);
    auto expect = [&](bool& seen, std::uint8_t dtype, std::size_t rank) {
      if (seen) throw ProtocolError("duplicate tensor '" + name + "'", name_at);
      if (t.dtype != dtype || t.shape.size() != rank)
        throw ProtocolError("tensor '" + name + "' has wrong dtype or rank", tensor_at);
      seen = true;
    };
    if (name == "latents") {
      expect(have_latents, kDtypeF32, 5);
      b.latents = Tensor::from(t.shape, std::move(t.f32));
    } else if (name == "text_emb") {
      expect(have_text, kDtypeF32, 2);
      b.text_emb = Tensor::from(t.shape, std::move(t.f32));
    } else if (name == "sample_ids") {
      expect(have_ids, kDtypeU64, 1);
      b.sample_ids = std::move(t.u64);
    } else {
      throw ProtocolError("unknown tensor '" + name + "'", name_at);
    }
  }
  if (b.latents.dim(0) != b.sample_ids.size() || b.text_emb.dim(0) != b.sample_ids.size())
    r.fail("batch dimensions disagree");
  return b;
}

}  // namespace

bool bit_equal(const FeatureBatch& a, const FeatureBatch& b) {
  auto same = [](const Tensor& x, const Tensor& y) {
    if (x.shape() != y.shape()) return false;
    const auto xv = x.values(), yv = y.values();
    return std::memcmp(xv.data(), yv.data(), xv.size() * sizeof(double)) == 0;
  };
  return a.step == b.step && a.rank == b.rank && a.bucket == b.bucket && a.sample_ids == b.sample_ids &&
         same(a.latents, b.latents) && same(a.text_emb, b.text_emb);
}

std::vector<std::uint8_t> encode_message(const Message& message) {
  ByteWriter w;
  w.str(std::string_view(kCvfbMagic, 4));
  w.u8(kCvfbVersion);
  w.u32(0);
  std::visit([&](const auto& m) { put_body(w, m); }, message);
  const std::size_t body = w.size() - kCvfbHeaderSize;
  if (body > kCvfbMaxBody) throw ContractError("encode_message: body of " + std::to_string(body) + " bytes too large");
  w.patch_u32(5, static_cast<std::uint32_t>(body));
  return w.take();
}

std::uint32_t frame_body_length(std::span<const std::uint8_t> header) {
  ByteReader r(header);
  const auto magic = r.bytes(4);
  if (std::memcmp(magic.data(), kCvfbMagic, 4) != 0) throw ProtocolError("bad magic", 0);
  const auto version = r.u8();
  if (version != kCvfbVersion) throw ProtocolError("unsupported version " + std::to_string(version), 4);
  const auto body = r.u32();
  if (body > kCvfbMaxBody) throw ProtocolError("body length " + std::to_string(body) + " exceeds limit", 5);
  if (body == 0) throw ProtocolError("empty body", 5);
  return body;
}

Message decode_message(std::span<const std::uint8_t> frame) {
  if (frame.size() < kCvfbHeaderSize) throw ProtocolError("truncated header", frame.size());
  const std::uint32_t body = frame_body_length(frame.first(kCvfbHeaderSize));
  if (frame.size() < kCvfbHeaderSize + body) throw ProtocolError("truncated frame", frame.size());
  if (frame.size() > kCvfbHeaderSize + body) throw ProtocolError("trailing bytes", kCvfbHeaderSize + body);
  // Reads are bounded by the declared body, offsets stay frame-relative.
  ByteReader r(frame);
  r.bytes(kCvfbHeaderSize);
  const std::size_t op_at = r.offset();
  Message out;
  switch (r.u8()) {
    case kOpRequest: {
      BatchRequest q;
      q.step = r.u64();
      q.rank = r.u32();
      out = q;
      break;
    }
    case kOpResponse:
      out = read_feature_batch(r);
      break;
    case kOpError: {
      ErrorReply e;
      e.code = r.u16();
      e.message = r.str(r.u16());
      out = std::move(e);
      break;
    }
    default:
      throw ProtocolError("unknown op code", op_at);
  }
  if (!r.done()) r.fail("trailing bytes in body");
  return out;
}

}  // namespace vf
