// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "vidflow/dit.hpp"
#include "vidflow/tensor.hpp"
#include "vidflow/vae.hpp"

namespace vf {

// ---------------------------------------------------------------------------
// Dataset

/// Pixel extent of a bucket. Frames must be 1 + c_t * k and height/width
/// multiples of c_s so that latents satisfy the VAE contract.
struct BucketShape {
  std::uint16_t id = 0;
  std::size_t frames = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t batch = 2;
};

struct DatasetSample {
  std::uint64_t id = 0;
  std::uint16_t bucket = 0;
  std::string prompt;
};

struct Dataset {
  std::vector<BucketShape> buckets;
  std::vector<DatasetSample> samples;

  const BucketShape& bucket(std::uint16_t id) const;
  const DatasetSample& sample(std::uint64_t id) const;
  /// Sample ids of a bucket in ascending order.
  std::vector<std::uint64_t> bucket_members(std::uint16_t id) const;
  /// Throws ConfigError on duplicate ids, unknown bucket references or
  /// shapes that break the VAE contract.
  void validate(const VaeConfig& vae) const;
};

inline constexpr int kDatasetSchemaVersion = 1;

/// JSON: {"schema_version":1,"buckets":[{id,frames,height,width,batch}],
/// "samples":[{id,bucket,prompt}]}.
Dataset load_dataset(const std::filesystem::path& path);
void save_dataset(const std::filesystem::path& path, const Dataset& dataset);

/// Toy dataset of procedural clips: an image bucket and two video buckets.
Dataset make_toy_dataset(std::size_t per_bucket, std::uint64_t seed);

/// Procedural pixels [frames, 3, H, W] for a sample, a pure function of its id.
Tensor render_sample(const DatasetSample& sample, const BucketShape& shape);

// ---------------------------------------------------------------------------
// Feature batches and the CVFB wire format

struct FeatureBatch {
  std::uint64_t step = 0;
  std::uint32_t rank = 0;
  std::uint16_t bucket = 0;
  Tensor latents;   // [B, T', C, H', W'], f32-representable values
  Tensor text_emb;  // [B, D], f32-representable values
  std::vector<std::uint64_t> sample_ids;
};

bool bit_equal(const FeatureBatch& a, const FeatureBatch& b);

struct BatchRequest {
  std::uint64_t step = 0;
  std::uint32_t rank = 0;
};

struct ErrorReply {
  std::uint16_t code = 0;
  std::string message;
};

using Message = std::variant<BatchRequest, FeatureBatch, ErrorReply>;

inline constexpr char kCvfbMagic[4] = {'C', 'V', 'F', 'B'};
inline constexpr std::uint8_t kCvfbVersion = 0x01;
inline constexpr std::size_t kCvfbHeaderSize = 9;  // magic, version, u32 body length
inline constexpr std::uint32_t kCvfbMaxBody = 1u << 28;

inline constexpr std::uint8_t kOpRequest = 0x01;
inline constexpr std::uint8_t kOpResponse = 0x81;
inline constexpr std::uint8_t kOpError = 0xFF;

inline constexpr std::uint8_t kDtypeF32 = 0x00;
inline constexpr std::uint8_t kDtypeU64 = 0x03;

enum ErrorCode : std::uint16_t {
  kErrMalformed = 1,
  kErrBadRank = 2,
  kErrUnknownBucket = 3,
  kErrInternal = 4,
};

std::vector<std::uint8_t> encode_message(const Message& message);
/// Parses one complete frame. Anything else throws ProtocolError.
Message decode_message(std::span<const std::uint8_t> frame);
/// Body length from a header, validated against kCvfbMaxBody.
std::uint32_t frame_body_length(std::span<const std::uint8_t> header);

// ---------------------------------------------------------------------------
// Feature service

struct ServiceConfig {
  std::uint64_t seed = 0;
  std::uint32_t world_size = 2;
  std::size_t text_dim = 32;
  VaeConfig vae;
};

/// Deterministic batch composition: bucket and members for (step, rank) are a
/// pure function of (seed, step, rank). Every rank picks its bucket
/// independently; ranks landing in the same bucket take disjoint slices of
/// one per-step permutation.
class FeatureService {
 public:
  FeatureService(Dataset dataset, ServiceConfig config);

  std::uint16_t choose_bucket(std::uint64_t step, std::uint32_t rank) const;
  std::vector<std::uint64_t> sample_ids(std::uint64_t step, std::uint32_t rank) const;
  FeatureBatch make_batch(std::uint64_t step, std::uint32_t rank) const;
  /// Latents and text embeddings for explicit ids in one bucket.
  FeatureBatch encode_samples(std::span<const std::uint64_t> ids) const;

  const Dataset& dataset() const { return dataset_; }
  const ServiceConfig& config() const { return config_; }

 private:
  Dataset dataset_;
  ServiceConfig config_;
  CausalVae vae_;
  TextEncoderStub text_;
};

/// Offline mode: writes response frames as step_<s>_rank_<r>.cvfb.
std::filesystem::path spool_path(const std::filesystem::path& dir, std::uint64_t step, std::uint32_t rank);
void write_spool(const std::filesystem::path& dir, const FeatureService& service, std::uint64_t first_step,
                 std::uint64_t steps);

// ---------------------------------------------------------------------------
// Network

struct ServerOptions {
  std::string bind = "127.0.0.1:0";
  std::uint32_t delay_ms = 0;  // fault injection: per-response delay
};

/// TCP server with one thread per connection and one request in flight per
/// connection.
class EncodeServer {
 public:
  EncodeServer(std::shared_ptr<const FeatureService> service, ServerOptions options);
  ~EncodeServer();
  EncodeServer(const EncodeServer&) = delete;
  EncodeServer& operator=(const EncodeServer&) = delete;

  /// Binds and starts accepting. Throws IoError on bind failure.
  void start();
  void stop();
  std::uint16_t port() const { return port_; }
  std::uint64_t requests_served() const { return served_.load(); }
  void set_delay_ms(std::uint32_t ms) { delay_ms_.store(ms); }

 private:
  void accept_loop();
  void serve_connection(int fd);

  std::shared_ptr<const FeatureService> service_;
  ServerOptions options_;
  int listen_fd_ = -1;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::atomic<std::uint64_t> served_{0};
  std::atomic<std::uint32_t> delay_ms_{0};
  std::thread acceptor_;
  std::mutex conn_mu_;
  std::vector<int> conn_fds_;
  std::vector<std::thread> workers_;
};

/// Splits "host:port". Throws ConfigError.
std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint);

class EncodeClient {
 public:
  EncodeClient(std::string host, std::uint16_t port, std::uint32_t timeout_ms = 5000);
  ~EncodeClient();
  EncodeClient(const EncodeClient&) = delete;
  EncodeClient& operator=(const EncodeClient&) = delete;

  /// Timeouts and connection failures throw RetriableError, malformed frames
  /// ProtocolError, error replies ServerError. The connection is dropped
  /// after any failure.
  FeatureBatch request_batch(std::uint64_t step, std::uint32_t rank);

 private:
  void connect();
  void close();

  std::string host_;
  std::uint16_t port_;
  std::uint32_t timeout_ms_;
  int fd_ = -1;
};

// ---------------------------------------------------------------------------
// Prefetch buffer

class BatchSource {
 public:
  virtual ~BatchSource() = default;
  virtual FeatureBatch fetch(std::uint64_t step, std::uint32_t rank) = 0;
};

class LocalSource final : public BatchSource {
 public:
  explicit LocalSource(const FeatureService& service) : service_(service) {}
  FeatureBatch fetch(std::uint64_t step, std::uint32_t rank) override { return service_.make_batch(step, rank); }

 private:
  const FeatureService& service_;
};

class RemoteSource final : public BatchSource {
 public:
  RemoteSource(std::string host, std::uint16_t port, std::uint32_t timeout_ms = 5000)
      : client_(std::move(host), port, timeout_ms) {}
  FeatureBatch fetch(std::uint64_t step, std::uint32_t rank) override;

 private:
  EncodeClient client_;
};

class SpoolSource final : public BatchSource {
 public:
  explicit SpoolSource(std::filesystem::path dir) : dir_(std::move(dir)) {}
  FeatureBatch fetch(std::uint64_t step, std::uint32_t rank) override;

 private:
  std::filesystem::path dir_;
};

/// Per-rank look-ahead buffer. A filler thread keeps up to `capacity`
/// batches for the steps following the last one consumed; pop(step) blocks
/// until that step arrives and must be called with consecutive steps.
class BatchBuffer {
 public:
  BatchBuffer(BatchSource& source, std::uint32_t rank, std::size_t capacity, std::uint64_t first_step = 0,
              int max_retries = 5);
  ~BatchBuffer();
  BatchBuffer(const BatchBuffer&) = delete;
  BatchBuffer& operator=(const BatchBuffer&) = delete;

  FeatureBatch pop(std::uint64_t step);
  std::vector<std::uint64_t> buffered_steps() const;
  std::size_t capacity() const { return capacity_; }

 private:
  void fill_loop();

  BatchSource& source_;
  std::uint32_t rank_;
  std::size_t capacity_;
  int max_retries_;
  std::uint64_t next_pop_;
  std::uint64_t next_fetch_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<FeatureBatch> queue_;
  std::exception_ptr error_;
  bool stop_ = false;
  std::thread filler_;
};

/// Trains a small DiT on batches popped from `buffer` and returns per-step
/// losses. Used to check that server-fed and locally encoded runs agree.
std::vector<double> train_from_buffer(BatchBuffer& buffer, std::uint64_t first_step, std::size_t steps,
                                      std::size_t text_dim, std::uint64_t seed);

}  // namespace vf
