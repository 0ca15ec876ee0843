// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <string_view>

namespace vf {

/// Counter-based generator: draw `i` of stream `key` is a pure function of
/// (key, i), so any draw can be reproduced without replaying the sequence.
/// Every stochastic routine takes one of these explicitly.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  /// Uniform in (0, 1).
  double uniform_open();
  double normal();
  /// Uniform integer in [0, n); n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream. Same parent + id always yields the same child.
  Rng fork(std::uint64_t id) const;
  Rng fork(std::string_view name) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, int) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t z);
std::uint64_t fnv1a64(std::string_view s);

}  // namespace vf
