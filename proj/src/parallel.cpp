// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <thread>

#include "vidflow/dit.hpp"
#include "vidflow/error.hpp"
#include "vidflow/rng.hpp"

namespace vf {

namespace {

constexpr std::uint64_t kElemBytes = sizeof(double);

std::vector<Range> split_even(std::size_t n, std::size_t parts) {
  std::vector<Range> out;
  const std::size_t base = n / parts, rem = n % parts;
  std::size_t at = 0;
  for (std::size_t p = 0; p < parts; ++p) {
    const std::size_t len = base + (p < rem ? 1 : 0);
    out.push_back({at, at + len});
    at += len;
  }
  return out;
}

void check_tiling(const std::vector<Range>& ranges, std::size_t total, const char* what) {
  std::size_t at = 0;
  for (const auto& r : ranges) {
    if (r.begin != at || r.end < r.begin) throw ContractError(std::string("layout: ") + what + " shards do not tile");
    at = r.end;
  }
  if (at != total) throw ContractError(std::string("layout: ") + what + " shards cover " + std::to_string(at) +
                                       " of " + std::to_string(total));
}

std::vector<std::size_t> resolve_order(const std::vector<std::size_t>& order, std::size_t n) {
  std::vector<std::size_t> out(n);
  std::iota(out.begin(), out.end(), 0);
  if (order.empty()) return out;
  std::vector<std::size_t> sorted = order;
  std::sort(sorted.begin(), sorted.end());
  if (sorted != out) throw ContractError("worker_order must be a permutation of 0..P-1");
  return order;
}

void count(CommStats* stats, std::uint64_t elems, bool inter_node) {
  if (stats == nullptr || elems == 0) return;
  stats->bytes += elems * kElemBytes;
  if (inter_node) stats->inter_node_bytes += elems * kElemBytes;
  ++stats->messages;
}

FlowBatch micro_batch(const FlowBatch& b, std::size_t start, std::size_t len) {
  FlowBatch m;
  m.x0 = slice(b.x0, 0, start, len);
  m.x1 = slice(b.x1, 0, start, len);
  m.t.assign(b.t.begin() + static_cast<std::ptrdiff_t>(start), b.t.begin() + static_cast<std::ptrdiff_t>(start + len));
  if (b.cond.defined()) m.cond = slice(b.cond, 0, start, len);
  return m;
}

double loss_and_backward(VelocityModel& model, const FlowBatch& b) {
  auto params = model.parameters();
  zero_grad(params);
  const Tensor xt = interpolate(b.x0, b.x1, b.t);
  Tensor loss = fm_loss(model.velocity(xt, b.t, b.cond), velocity_target(b.x0, b.x1));
  backward(loss);
  return loss.item();
}

}  // namespace

void ShardLayout::validate() const {
  if (workers == 0 || heads == 0 || seq_len == 0) throw ContractError("layout: empty dimension");
  if (seq.size() != workers || head_sets.size() != workers)
    throw ContractError("layout: expected one sequence shard and one head set per worker");
  if (padding >= workers) throw ContractError("layout: padding must be less than the worker count");
  if (padded_len() % workers != 0) throw ContractError("layout: padded length not divisible by workers");
  check_tiling(seq, padded_len(), "sequence");
  for (const auto& r : seq)
    if (r.size() != padded_len() / workers) throw ContractError("layout: sequence shards must be equal");
  check_tiling(head_sets, heads, "head");
}

ShardLayout make_layout(std::size_t seq_len, std::size_t heads, std::size_t workers) {
  if (workers == 0 || heads == 0 || seq_len == 0) throw ContractError("make_layout: empty dimension");
  ShardLayout l;
  l.workers = workers;
  l.seq_len = seq_len;
  l.heads = heads;
  l.padding = (workers - seq_len % workers) % workers;
  l.seq = split_even(l.padded_len(), workers);
  l.head_sets = split_even(heads, workers);
  return l;
}

std::vector<double> masked_head_attention(std::span<const double> q, std::span<const double> k,
                                          std::span<const double> v, std::size_t len, std::size_t dim,
                                          std::size_t valid, double eps) {
  if (q.size() != len * dim || k.size() != len * dim || v.size() != len * dim)
    throw ShapeError("masked_head_attention: expected " + std::to_string(len) + " x " + std::to_string(dim) + " rows");
  if (valid == 0 || valid > len) throw ContractError("masked_head_attention: valid must be in [1, len]");
  auto normalize = [&](std::span<const double> x, std::size_t rows) {
    std::vector<double> out(rows * dim);
    for (std::size_t r = 0; r < rows; ++r) {
      double ms = 0.0;
      for (std::size_t j = 0; j < dim; ++j) ms += x[r * dim + j] * x[r * dim + j];
      ms /= static_cast<double>(dim);
      const double inv = 1.0 / std::sqrt(ms + eps);
      for (std::size_t j = 0; j < dim; ++j) out[r * dim + j] = x[r * dim + j] * inv;
    }
    return out;
  };
  const auto qn = normalize(q, len);
  const auto kn = normalize(k, valid);
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  std::vector<double> out(len * dim, 0.0), p(valid);
  for (std::size_t i = 0; i < len; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < valid; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < dim; ++c) s += qn[i * dim + c] * kn[j * dim + c];
      p[j] = s * scale;
      mx = std::max(mx, p[j]);
    }
    double z = 0.0;
    for (std::size_t j = 0; j < valid; ++j) {
      p[j] = std::exp(p[j] - mx);
      z += p[j];
    }
    for (std::size_t j = 0; j < valid; ++j) {
      const double w = p[j] / z;
      for (std::size_t c = 0; c < dim; ++c) out[i * dim + c] += w * v[j * dim + c];
    }
  }
  return out;
}

namespace {

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("attention: q, k, v must share shape [heads, L, head_dim]");
}

}  // namespace

Tensor plain_attention(const Tensor& q, const Tensor& k, const Tensor& v, double eps) {
  check_qkv(q, k, v);
  const std::size_t H = q.dim(0), L = q.dim(1), d = q.dim(2), n = L * d;
  std::vector<double> out;
  out.reserve(H * n);
  for (std::size_t h = 0; h < H; ++h) {
    auto part = [&](const Tensor& a) { return a.values().subspan(h * n, n); };
    const auto o = masked_head_attention(part(q), part(k), part(v), L, d, L, eps);
    out.insert(out.end(), o.begin(), o.end());
  }
  return Tensor::from(q.shape(), std::move(out));
}

Tensor sp_attention(const Tensor& q, const Tensor& k, const Tensor& v, const ShardLayout& layout, CommStats* stats,
                    const SpOptions& options, double eps) {
  check_qkv(q, k, v);
  layout.validate();
  const std::size_t H = q.dim(0), L = q.dim(1), d = q.dim(2);
  if (H != layout.heads || L != layout.seq_len)
    throw ContractError("sp_attention: layout is for " + std::to_string(layout.heads) + " heads x " +
                        std::to_string(layout.seq_len) + " tokens, got " + to_string(q.shape()));
  const std::size_t P = layout.workers, Lp = layout.padded_len();
  const auto order = resolve_order(options.worker_order, P);

  // Sequence scatter: worker u holds [H, |seq_u|, d] of each input, zero padded.
  auto scatter = [&](const Tensor& a) {
    std::vector<std::vector<double>> local(P);
    const auto av = a.values();
    for (std::size_t u = 0; u < P; ++u) {
      const Range r = layout.seq[u];
      local[u].assign(H * r.size() * d, 0.0);
      for (std::size_t h = 0; h < H; ++h)
        for (std::size_t i = r.begin; i < std::min(r.end, L); ++i)
          std::copy_n(av.begin() + static_cast<std::ptrdiff_t>((h * L + i) * d), d,
                      local[u].begin() + static_cast<std::ptrdiff_t>((h * r.size() + (i - r.begin)) * d));
    }
    return local;
  };
  const std::vector<std::vector<double>> local[3] = {scatter(q), scatter(k), scatter(v)};

  // All-to-all: worker w receives its heads over every sequence shard.
  std::vector<std::vector<double>> full[3];
  for (auto& f : full) f.resize(P);
  for (std::size_t w : order) {
    const Range hs = layout.head_sets[w];
    for (int t = 0; t < 3; ++t) {
      auto& dst = full[t][w];
      dst.assign(hs.size() * Lp * d, 0.0);
      for (std::size_t u = 0; u < P; ++u) {
        const Range r = layout.seq[u];
        for (std::size_t h = hs.begin; h < hs.end; ++h)
          std::copy_n(local[t][u].begin() + static_cast<std::ptrdiff_t>(h * r.size() * d), r.size() * d,
                      dst.begin() + static_cast<std::ptrdiff_t>(((h - hs.begin) * Lp + r.begin) * d));
        if (u != w) count(stats, hs.size() * r.size() * d, true);
      }
    }
  }

  // Per-worker attention over the full padded sequence, padded keys masked.
  std::vector<std::vector<double>> head_out(P);
  auto compute = [&](std::size_t w) {
    const Range hs = layout.head_sets[w];
    auto& out = head_out[w];
    out.assign(hs.size() * Lp * d, 0.0);
    const std::size_t n = Lp * d;
    for (std::size_t h = 0; h < hs.size(); ++h) {
      auto part = [&](const std::vector<double>& a) { return std::span<const double>(a).subspan(h * n, n); };
      const auto o = masked_head_attention(part(full[0][w]), part(full[1][w]), part(full[2][w]), Lp, d, L, eps);
      std::copy(o.begin(), o.end(), out.begin() + static_cast<std::ptrdiff_t>(h * n));
    }
  };
  if (options.threads) {
    std::vector<std::thread> pool;
    for (std::size_t w : order) pool.emplace_back(compute, w);
    for (auto& t : pool) t.join();
  } else {
    for (std::size_t w : order) compute(w);
  }

  // All-to-all back to sequence shards, then gather without the padding.
  std::vector<double> out(H * L * d, 0.0);
  for (std::size_t u : order) {
    const Range r = layout.seq[u];
    for (std::size_t w = 0; w < P; ++w) {
      const Range hs = layout.head_sets[w];
      for (std::size_t h = hs.begin; h < hs.end; ++h)
        for (std::size_t i = r.begin; i < std::min(r.end, L); ++i)
          std::copy_n(head_out[w].begin() + static_cast<std::ptrdiff_t>(((h - hs.begin) * Lp + i) * d), d,
                      out.begin() + static_cast<std::ptrdiff_t>((h * L + i) * d));
      if (u != w) count(stats, hs.size() * r.size() * d, true);
    }
  }
  return Tensor::from(q.shape(), std::move(out));
}

std::uint64_t sp_expected_bytes(const ShardLayout& layout, std::size_t head_dim) {
  const std::uint64_t P = layout.workers;
  return 4 * layout.padded_len() * layout.heads * head_dim * (P - 1) / P * kElemBytes;
}

std::vector<Range> ShardGroup::shard_ranges(std::size_t params) const { return split_even(params, shard_size); }

void ShardGroup::validate() const {
  if (shard_size == 0 || replicas == 0 || workers_per_node == 0)
    throw ContractError("shard group sizes must be positive");
}

ShardGroup make_shard_group(ShardStrategy strategy, std::size_t workers, std::size_t workers_per_node) {
  if (workers == 0 || workers_per_node == 0) throw ContractError("make_shard_group: sizes must be positive");
  if (strategy == ShardStrategy::kFullShard) return {workers, 1, workers_per_node};
  if (workers % workers_per_node != 0)
    throw ContractError("make_shard_group: " + std::to_string(workers) + " workers do not fill nodes of " +
                        std::to_string(workers_per_node));
  return {workers_per_node, workers / workers_per_node, workers_per_node};
}

std::vector<double> flatten_parameters(const VelocityModel& model) {
  std::vector<double> out;
  for (const auto& p : model.parameters()) out.insert(out.end(), p.values().begin(), p.values().end());
  return out;
}

std::vector<double> flatten_gradients(const VelocityModel& model) {
  std::vector<double> out;
  for (const auto& p : model.parameters()) {
    if (p.has_grad())
      out.insert(out.end(), p.grad().begin(), p.grad().end());
    else
      out.insert(out.end(), p.numel(), 0.0);
  }
  return out;
}

void load_parameters(VelocityModel& model, std::span<const double> flat) {
  std::size_t at = 0;
  for (auto& p : model.parameters()) {
    auto dst = p.mutable_values();
    if (at + dst.size() > flat.size()) throw ShapeError("load_parameters: flat vector too short");
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(at), dst.size(), dst.begin());
    at += dst.size();
  }
  if (at != flat.size()) throw ShapeError("load_parameters: flat vector too long");
}

std::vector<double> full_batch_gradient(VelocityModel& model, const FlowBatch& batch) {
  loss_and_backward(model, batch);
  auto g = flatten_gradients(model);
  auto params = model.parameters();
  zero_grad(params);
  return g;
}

std::vector<double> fsdp_sim_step(VelocityModel& model, const FlowBatch& batch, const ShardGroup& group,
                                  CommStats* stats, const FsdpOptions& options) {
  group.validate();
  const std::size_t W = group.workers(), S = group.shard_size, R = group.replicas;
  const std::size_t B = batch.x1.dim(0);
  if (B % W != 0)
    throw ContractError("fsdp_sim_step: batch of " + std::to_string(B) + " not divisible by " + std::to_string(W) +
                        " workers");
  const auto order = resolve_order(options.worker_order, W);
  const std::vector<double> flat = flatten_parameters(model);
  const auto shards = group.shard_ranges(flat.size());
  auto node = [&](std::size_t w) { return w / group.workers_per_node; };
  auto worker = [&](std::size_t g, std::size_t i) { return g * S + i; };

  // Each worker keeps only its own shard between steps.
  std::vector<std::vector<double>> owned(W);
  for (std::size_t w = 0; w < W; ++w) {
    const Range r = shards[w % S];
    owned[w].assign(flat.begin() + static_cast<std::ptrdiff_t>(r.begin), flat.begin() + static_cast<std::ptrdiff_t>(r.end));
  }

  const std::size_t micro = B / W;
  std::vector<std::vector<double>> grads(W);
  for (std::size_t w : order) {
    const std::size_t g = w / S;
    // All-gather inside the shard group.
    std::vector<double> gathered;
    gathered.reserve(flat.size());
    for (std::size_t j = 0; j < S; ++j) {
      const std::size_t src = worker(g, j);
      gathered.insert(gathered.end(), owned[src].begin(), owned[src].end());
      if (src != w) count(stats, owned[src].size(), node(src) != node(w));
    }
    load_parameters(model, gathered);
    loss_and_backward(model, micro_batch(batch, w * micro, micro));
    grads[w] = flatten_gradients(model);
  }

  // Reduce-scatter inside each group, summed in worker-id order.
  std::vector<std::vector<double>> partial(W);
  for (std::size_t g = 0; g < R; ++g) {
    for (std::size_t i = 0; i < S; ++i) {
      const std::size_t owner = worker(g, i);
      const Range r = shards[i];
      std::vector<double> acc(r.size(), 0.0);
      for (std::size_t j = 0; j < S; ++j) {
        const std::size_t src = worker(g, j);
        for (std::size_t e = 0; e < r.size(); ++e) acc[e] += grads[src][r.begin + e];
        if (src != owner) count(stats, r.size(), node(src) != node(owner));
      }
      partial[owner] = std::move(acc);
    }
  }

  // All-reduce each shard across replicas, then the mean over workers.
  std::vector<double> out(flat.size(), 0.0);
  for (std::size_t i = 0; i < S; ++i) {
    const Range r = shards[i];
    std::vector<double> acc(r.size(), 0.0);
    for (std::size_t g = 0; g < R; ++g)
      for (std::size_t e = 0; e < r.size(); ++e) acc[e] += partial[worker(g, i)][e];
    for (std::size_t g = 0; g < R; ++g)
      for (std::size_t h = 0; h < R; ++h)
        if (g != h) count(stats, r.size(), node(worker(h, i)) != node(worker(g, i)));
    for (std::size_t e = 0; e < r.size(); ++e) out[r.begin + e] = acc[e] / static_cast<double>(W);
  }

  load_parameters(model, flat);
  auto params = model.parameters();
  zero_grad(params);
  return out;
}

std::vector<BenchRow> bench_parallel(std::uint64_t seed) {
  std::vector<BenchRow> rows;
  const std::size_t d = 8;
  Rng rng(seed);
  for (std::size_t P : {1, 2, 4})
    for (std::size_t L : {30, 32, 64})
      for (std::size_t H : {6, 8}) {
        Rng r = rng.fork("sp").fork(P * 10000 + L * 100 + H);
        const Tensor q = Tensor::randn({H, L, d}, r), k = Tensor::randn({H, L, d}, r), v = Tensor::randn({H, L, d}, r);
        const Tensor ones = Tensor::full({d}, 1.0);
        const Tensor ref = attention(q, k, v, ones, ones, 1e-6);
        CommStats stats;
        const Tensor got = sp_attention(q, k, v, make_layout(L, H, P), &stats);
        double diff = 0.0;
        for (std::size_t i = 0; i < ref.numel(); ++i) diff = std::max(diff, std::abs(ref[i] - got[i]));
        rows.push_back({"ulysses", P, L, H, diff, stats.bytes, stats.inter_node_bytes});
      }

  MlpConfig mc;
  mc.hidden = 32;
  mc.depth = 2;
  Rng init = rng.fork("fsdp_init");
  MlpVelocity model(mc, init);
  Rng data = rng.fork("fsdp_data");
  const TimestepSampler sampler;
  const FlowBatch batch = make_flow_batch(Tensor::randn({16, 2}, data), Tensor(), sampler, data);
  const auto ref = full_batch_gradient(model, batch);
  for (auto [name, strategy] : {std::pair{"fsdp_full", ShardStrategy::kFullShard},
                                std::pair{"fsdp_hybrid", ShardStrategy::kHybridShard}}) {
    CommStats stats;
    const auto g = fsdp_sim_step(model, batch, make_shard_group(strategy, 4, 2), &stats);
    double diff = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) diff = std::max(diff, std::abs(g[i] - ref[i]));
    rows.push_back({name, 4, 0, 0, diff, stats.bytes, stats.inter_node_bytes});
  }
  return rows;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchRow>& rows) {
  out << "strategy,P,L,heads,max_diff,bytes_moved,inter_node_bytes\n";
  for (const auto& r : rows) {
    char diff[32];
    std::snprintf(diff, sizeof diff, "%.3e", r.max_diff);
    out << r.strategy << ',' << r.workers << ',' << r.seq_len << ',' << r.heads << ',' << diff << ',' << r.bytes
        << ',' << r.inter_node_bytes << '\n';
  }
}

}  // namespace vf
