// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/bytes.hpp"

#include <bit>
#include <fstream>
#include <iterator>

#include "vidflow/error.hpp"

namespace vf {

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::patch_u32(std::size_t offset, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) buf_.at(offset + i) = static_cast<std::uint8_t>(v >> (8 * i));
}

void ByteReader::fail(const std::string& what) const { throw ProtocolError(what, pos_); }

std::uint64_t ByteReader::get(int n) {
  if (remaining() < static_cast<std::size_t>(n)) fail("truncated input");
  std::uint64_t v = 0;
  for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + i]) << (8 * i);
  pos_ += n;
  return v;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(get(1)); }
std::uint16_t ByteReader::u16() { return static_cast<std::uint16_t>(get(2)); }
std::uint32_t ByteReader::u32() { return static_cast<std::uint32_t>(get(4)); }
std::uint64_t ByteReader::u64() { return get(8); }
float ByteReader::f32() { return std::bit_cast<float>(u32()); }
double ByteReader::f64() { return std::bit_cast<double>(u64()); }

std::span<const std::uint8_t> ByteReader::bytes(std::size_t n) {
  if (remaining() < n) fail("truncated input");
  auto out = data_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::str(std::size_t n) {
  auto b = bytes(n);
  return std::string(b.begin(), b.end());
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> data) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!out) throw IoError("short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

}  // namespace vf
