// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/rng.hpp"

#include <cmath>
#include <numbers>

#include "vidflow/error.hpp"

namespace vf {

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

Rng::Rng(std::uint64_t seed, std::uint64_t stream)
    : key_(mix64(seed ^ mix64(stream + 0x9E3779B97F4A7C15ULL))) {}

std::uint64_t Rng::next_u64() {
  const std::uint64_t c = counter_++;
  std::uint64_t z = mix64(key_ + c * 0x9E3779B97F4A7C15ULL);
  return mix64(z ^ ((key_ << 17) | (key_ >> 47)));
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_open() { return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53; }

double Rng::normal() {
  // Box-Muller, one output per pair so the draw count is fixed.
  const double u1 = uniform_open();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t Rng::below(std::uint64_t n) {
  if (n == 0) throw ContractError("Rng::below: n must be positive");
  const std::uint64_t limit = std::uint64_t(-1) - (std::uint64_t(-1) % n);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % n;
  }
}

Rng Rng::fork(std::uint64_t id) const { return Rng(mix64(key_ ^ mix64(id ^ 0xD1B54A32D192ED03ULL)), 0, 0); }

Rng Rng::fork(std::string_view name) const { return fork(fnv1a64(name)); }

}  // namespace vf
