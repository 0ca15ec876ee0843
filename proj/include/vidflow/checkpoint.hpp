// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "vidflow/nn.hpp"

// CVWT weight files:
//   "CVWT" | u32 version | u32 model kind | u32 config bytes | config record
//   | u32 tensor count | per tensor: u32 name length, name, u8 dtype (0x01 =
//   f64), u32 rank, u64 dims..., little-endian payload.

namespace vf {

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint32_t { kDit = 0, kMlp = 1 };

std::vector<std::uint8_t> encode_checkpoint(const VelocityModel& model);
std::unique_ptr<VelocityModel> decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const VelocityModel& model);
std::unique_ptr<VelocityModel> load_checkpoint(const std::filesystem::path& path);

}  // namespace vf
