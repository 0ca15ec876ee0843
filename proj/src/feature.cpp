// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <json.hpp>
#include <set>

#include "vidflow/bytes.hpp"
#include "vidflow/encode_server.hpp"
#include "vidflow/error.hpp"
#include "vidflow/rng.hpp"
#include "vidflow/synth.hpp"

namespace vf {

const BucketShape& Dataset::bucket(std::uint16_t id) const {
  for (const auto& b : buckets)
    if (b.id == id) return b;
  throw ConfigError("unknown bucket " + std::to_string(id));
}

const DatasetSample& Dataset::sample(std::uint64_t id) const {
  auto it = std::lower_bound(samples.begin(), samples.end(), id,
                             [](const DatasetSample& s, std::uint64_t v) { return s.id < v; });
  if (it == samples.end() || it->id != id) throw ContractError("unknown sample id " + std::to_string(id));
  return *it;
}

std::vector<std::uint64_t> Dataset::bucket_members(std::uint16_t id) const {
  std::vector<std::uint64_t> out;
  for (const auto& s : samples)
    if (s.bucket == id) out.push_back(s.id);
  return out;
}

void Dataset::validate(const VaeConfig& vae) const {
  if (buckets.empty()) throw ConfigError("dataset has no buckets");
  std::set<std::uint16_t> bucket_ids;
  for (const auto& b : buckets) {
    if (!bucket_ids.insert(b.id).second) throw ConfigError("duplicate bucket id " + std::to_string(b.id));
    if (b.frames == 0 || (b.frames - 1) % vae.temporal != 0)
      throw ConfigError("bucket " + std::to_string(b.id) + ": frames must be 1 + " + std::to_string(vae.temporal) +
                        "k");
    if (b.height == 0 || b.width == 0 || b.height % vae.spatial != 0 || b.width % vae.spatial != 0)
      throw ConfigError("bucket " + std::to_string(b.id) + ": height and width must be multiples of " +
                        std::to_string(vae.spatial));
    if (b.batch == 0) throw ConfigError("bucket " + std::to_string(b.id) + ": batch must be positive");
  }
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (i > 0 && samples[i].id <= samples[i - 1].id) throw ConfigError("sample ids must be strictly increasing");
    if (!bucket_ids.count(samples[i].bucket))
      throw ConfigError("sample " + std::to_string(samples[i].id) + " references unknown bucket " +
                        std::to_string(samples[i].bucket));
  }
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset " + path.string());
  Dataset d;
  try {
    const auto j = nlohmann::json::parse(in);
    if (j.at("schema_version").get<int>() != kDatasetSchemaVersion)
      throw ConfigError("dataset " + path.string() + ": unsupported schema_version");
    for (const auto& b : j.at("buckets")) {
      d.buckets.push_back({b.at("id").get<std::uint16_t>(), b.at("frames").get<std::size_t>(),
                           b.at("height").get<std::size_t>(), b.at("width").get<std::size_t>(),
                           b.at("batch").get<std::size_t>()});
    }
    for (const auto& s : j.at("samples")) {
      d.samples.push_back(
          {s.at("id").get<std::uint64_t>(), s.at("bucket").get<std::uint16_t>(), s.at("prompt").get<std::string>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("dataset " + path.string() + ": " + e.what());
  }
  return d;
}

void save_dataset(const std::filesystem::path& path, const Dataset& dataset) {
  nlohmann::ordered_json j;
  j["schema_version"] = kDatasetSchemaVersion;
  j["buckets"] = nlohmann::ordered_json::array();
  for (const auto& b : dataset.buckets)
    j["buckets"].push_back(
        {{"id", b.id}, {"frames", b.frames}, {"height", b.height}, {"width", b.width}, {"batch", b.batch}});
  j["samples"] = nlohmann::ordered_json::array();
  for (const auto& s : dataset.samples)
    j["samples"].push_back({{"id", s.id}, {"bucket", s.bucket}, {"prompt", s.prompt}});
  const std::string text = j.dump(1) + "\n";
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

Dataset make_toy_dataset(std::size_t per_bucket, std::uint64_t seed) {
  static const char* kColours[] = {"red", "green", "blue", "grey", "golden", "pale"};
  static const char* kThings[] = {"square", "texture", "fade", "field", "wave"};
  static const char* kMotions[] = {"moving left", "moving right", "panning", "still", "drifting"};
  Dataset d;
  d.buckets = {{0, 1, 16, 16, 4}, {1, 5, 16, 16, 2}, {2, 9, 16, 32, 2}};
  Rng rng = Rng(seed).fork("prompts");
  std::uint64_t id = 0;
  for (const auto& b : d.buckets) {
    for (std::size_t i = 0; i < per_bucket; ++i) {
      std::string prompt = std::string("a ") + kColours[rng.below(6)] + " " + kThings[rng.below(5)] + " " +
                           kMotions[rng.below(5)];
      d.samples.push_back({id++, b.id, std::move(prompt)});
    }
  }
  return d;
}

Tensor render_sample(const DatasetSample& sample, const BucketShape& shape) {
  Rng rng(mix64(sample.id), 0x5a);
  const std::uint64_t tex_seed = rng.next_u64();
  switch (sample.id % 3) {
    case 0:
      return synth::pan(shape.frames, shape.height, shape.width, static_cast<long>(rng.below(5)) - 2,
                        static_cast<long>(rng.below(3)) - 1, tex_seed);
    case 1:
      return synth::moving_square(shape.frames, shape.height, shape.width, std::max<std::size_t>(2, shape.height / 4),
                                  1 + static_cast<long>(rng.below(2)), tex_seed);
    default: {
      const synth::Rgb a{rng.uniform(), rng.uniform(), rng.uniform()};
      const synth::Rgb b{rng.uniform(), rng.uniform(), rng.uniform()};
      return synth::crossfade(shape.frames, shape.height, shape.width, 0, std::max<std::size_t>(1, shape.frames - 1),
                              a, b);
    }
  }
}

namespace {

std::vector<double> round_f32(std::span<const double> v) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<double>(static_cast<float>(v[i]));
  return out;
}

}  // namespace

FeatureService::FeatureService(Dataset dataset, ServiceConfig config)
    : dataset_(std::move(dataset)), config_(config), vae_(config.vae), text_(config.text_dim, config.seed ^ 0x7e47) {
  if (config_.world_size == 0) throw ConfigError("world_size must be positive");
  dataset_.validate(config_.vae);
  for (const auto& b : dataset_.buckets) {
    const std::size_t n = dataset_.bucket_members(b.id).size();
    if (n < b.batch * config_.world_size)
      throw ConfigError("bucket " + std::to_string(b.id) + " has " + std::to_string(n) + " samples, needs " +
                        std::to_string(b.batch * config_.world_size) + " for disjoint per-rank batches");
  }
}

std::uint16_t FeatureService::choose_bucket(std::uint64_t step, std::uint32_t rank) const {
  Rng rng = Rng(config_.seed).fork("bucket").fork(step).fork(rank);
  return dataset_.buckets[rng.below(dataset_.buckets.size())].id;
}

std::vector<std::uint64_t> FeatureService::sample_ids(std::uint64_t step, std::uint32_t rank) const {
  if (rank >= config_.world_size)
    throw ContractError("rank " + std::to_string(rank) + " outside world of " + std::to_string(config_.world_size));
  const std::uint16_t bucket = choose_bucket(step, rank);
  const auto& shape = dataset_.bucket(bucket);
  auto members = dataset_.bucket_members(bucket);
  Rng rng = Rng(config_.seed).fork("perm").fork(step).fork(bucket);
  for (std::size_t i = members.size(); i > 1; --i) std::swap(members[i - 1], members[rng.below(i)]);
  const auto first = members.begin() + static_cast<std::ptrdiff_t>(rank * shape.batch);
  return {first, first + static_cast<std::ptrdiff_t>(shape.batch)};
}

FeatureBatch FeatureService::encode_samples(std::span<const std::uint64_t> ids) const {
  if (ids.empty()) throw ContractError("encode_samples: no ids");
  FeatureBatch out;
  out.bucket = dataset_.sample(ids[0]).bucket;
  const auto& shape = dataset_.bucket(out.bucket);
  std::vector<double> lat, emb;
  Shape latent_shape;
  for (auto id : ids) {
    const auto& s = dataset_.sample(id);
    if (s.bucket != out.bucket) throw ContractError("encode_samples: ids span several buckets");
    const Tensor z = vae_.encode(render_sample(s, shape));
    latent_shape = z.shape();
    const auto zr = round_f32(z.values());
    lat.insert(lat.end(), zr.begin(), zr.end());
    const auto e = round_f32(text_.encode(s.prompt));
    emb.insert(emb.end(), e.begin(), e.end());
  }
  latent_shape.insert(latent_shape.begin(), ids.size());
  out.latents = Tensor::from(latent_shape, std::move(lat));
  out.text_emb = Tensor::from({ids.size(), config_.text_dim}, std::move(emb));
  out.sample_ids.assign(ids.begin(), ids.end());
  return out;
}

FeatureBatch FeatureService::make_batch(std::uint64_t step, std::uint32_t rank) const {
  const auto ids = sample_ids(step, rank);
  FeatureBatch b = encode_samples(ids);
  b.step = step;
  b.rank = rank;
  return b;
}

std::filesystem::path spool_path(const std::filesystem::path& dir, std::uint64_t step, std::uint32_t rank) {
  return dir / ("step_" + std::to_string(step) + "_rank_" + std::to_string(rank) + ".cvfb");
}

void write_spool(const std::filesystem::path& dir, const FeatureService& service, std::uint64_t first_step,
                 std::uint64_t steps) {
  for (std::uint64_t s = first_step; s < first_step + steps; ++s)
    for (std::uint32_t r = 0; r < service.config().world_size; ++r)
      write_file_atomic(spool_path(dir, s, r), encode_message(service.make_batch(s, r)));
}

FeatureBatch SpoolSource::fetch(std::uint64_t step, std::uint32_t rank) {
  const auto path = spool_path(dir_, step, rank);
  const auto bytes = read_file(path);
  Message m = decode_message(bytes);
  auto* batch = std::get_if<FeatureBatch>(&m);
  if (batch == nullptr) throw ProtocolError(path.string() + ": not a feature batch", kCvfbHeaderSize);
  if (batch->step != step || batch->rank != rank)
    throw ProtocolError(path.string() + ": holds step " + std::to_string(batch->step) + " rank " +
                            std::to_string(batch->rank),
                        kCvfbHeaderSize + 1);
  return std::move(*batch);
}

}  // namespace vf
