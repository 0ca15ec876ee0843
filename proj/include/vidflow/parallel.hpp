// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "vidflow/flowmatch.hpp"
#include "vidflow/nn.hpp"
#include "vidflow/tensor.hpp"

namespace vf {

struct Range {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool operator==(const Range&) const = default;
};

/// Sequence-parallel layout over P virtual workers. The sequence is padded to
/// a multiple of P and split into equal contiguous shards; heads are split
/// into contiguous sets, the first heads % P workers taking one extra.
struct ShardLayout {
  std::size_t workers = 1;
  std::size_t seq_len = 0;
  std::size_t padding = 0;
  std::size_t heads = 0;
  std::vector<Range> seq;
  std::vector<Range> head_sets;

  std::size_t padded_len() const { return seq_len + padding; }
  /// Throws ContractError when shards do not tile the padded sequence or
  /// the heads exactly once.
  void validate() const;
};

ShardLayout make_layout(std::size_t seq_len, std::size_t heads, std::size_t workers);

struct CommStats {
  std::uint64_t bytes = 0;             // all simulated messages
  std::uint64_t inter_node_bytes = 0;  // messages between different nodes
  std::uint64_t messages = 0;
};

/// Single-head QK-normalized attention over raw [L, d] rows, with keys at
/// positions >= valid masked out. Unit norm gains.
std::vector<double> masked_head_attention(std::span<const double> q, std::span<const double> k,
                                          std::span<const double> v, std::size_t len, std::size_t dim,
                                          std::size_t valid, double eps = 1e-6);

/// Unsharded multi-head attention; q, k, v are [heads, L, d].
Tensor plain_attention(const Tensor& q, const Tensor& k, const Tensor& v, double eps = 1e-6);

struct SpOptions {
  /// Order in which virtual workers run; empty means 0..P-1.
  std::vector<std::size_t> worker_order;
  bool threads = false;
};

/// Ulysses-style attention: scatter by sequence, all-to-all to head shards
/// over the full (padded) sequence, per-worker attention, all-to-all back,
/// gather. Counts 8-byte elements moved between distinct workers.
Tensor sp_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ShardLayout& layout,
                    CommStats* stats = nullptr, const SpOptions& options = {}, double eps = 1e-6);

/// Closed form of the sp_attention byte counter: both all-to-alls together
/// move 4 (q, k, v in, output back) * Lp * H * d * (P - 1) / P doubles.
std::uint64_t sp_expected_bytes(const ShardLayout& layout, std::size_t head_dim);

enum class ShardStrategy { kFullShard, kHybridShard };

/// W = shard_size * replicas workers. Within a shard group parameters are
/// split into contiguous flat shards; groups replicate each other. Nodes
/// hold workers_per_node consecutive worker ids.
struct ShardGroup {
  std::size_t shard_size = 1;
  std::size_t replicas = 1;
  std::size_t workers_per_node = 1;

  std::size_t workers() const { return shard_size * replicas; }
  std::vector<Range> shard_ranges(std::size_t params) const;
  void validate() const;
};

ShardGroup make_shard_group(ShardStrategy strategy, std::size_t workers, std::size_t workers_per_node);

std::vector<double> flatten_parameters(const VelocityModel& model);
std::vector<double> flatten_gradients(const VelocityModel& model);
void load_parameters(VelocityModel& model, std::span<const double> flat);

/// Gradient of the mean flow-matching loss over the whole batch.
std::vector<double> full_batch_gradient(VelocityModel& model, const FlowBatch& batch);

struct FsdpOptions {
  std::vector<std::size_t> worker_order;
};

/// Simulated sharded step: all-gather parameters inside each shard group,
/// per-worker forward/backward on its equal micro-batch, reduce-scatter
/// inside groups, all-reduce of each shard across replicas, mean over
/// workers. Reductions run in worker-id order. Returns the full gradient.
std::vector<double> fsdp_sim_step(VelocityModel& model, const FlowBatch& batch, const ShardGroup& group,
                                  CommStats* stats = nullptr, const FsdpOptions& options = {});

struct BenchRow {
  std::string strategy;
  std::size_t workers = 0;
  std::size_t seq_len = 0;
  std::size_t heads = 0;
  double max_diff = 0.0;
  std::uint64_t bytes = 0;
  std::uint64_t inter_node_bytes = 0;
};

/// Runs the sequence-parallel grid and the 2x2 hybrid vs full-shard
/// comparison.
std::vector<BenchRow> bench_parallel(std::uint64_t seed);
void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows);

}  // namespace vf
