// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <sys/time.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>

#include "vidflow/encode_server.hpp"
#include "vidflow/error.hpp"
#include "vidflow/flowmatch.hpp"
#include "vidflow/optim.hpp"
#include "vidflow/rng.hpp"

namespace vf {

namespace {

enum class ReadStatus { kOk, kEof, kTimeout, kError };

/// Reads exactly `n` bytes into `out` starting at `got`; updates `got`.
ReadStatus read_exact(int fd, std::uint8_t* out, std::size_t n, std::size_t& got) {
  std::size_t done = 0;
  while (done < n) {
    const ssize_t r = ::recv(fd, out + done, n - done, 0);
    if (r > 0) {
      done += static_cast<std::size_t>(r);
      got += static_cast<std::size_t>(r);
    } else if (r == 0) {
      return ReadStatus::kEof;
    } else if (errno == EINTR) {
      continue;
    } else if (errno == EAGAIN || errno == EWOULDBLOCK) {
      return ReadStatus::kTimeout;
    } else {
      return ReadStatus::kError;
    }
  }
  return ReadStatus::kOk;
}

bool write_all(int fd, const std::vector<std::uint8_t>& data) {
  std::size_t done = 0;
  while (done < data.size()) {
    const ssize_t w = ::send(fd, data.data() + done, data.size() - done, MSG_NOSIGNAL);
    if (w > 0) {
      done += static_cast<std::size_t>(w);
    } else if (w < 0 && errno == EINTR) {
      continue;
    } else {
      return false;
    }
  }
  return true;
}

addrinfo* resolve(const std::string& host, std::uint16_t port, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (int rc = ::getaddrinfo(host.empty() ? nullptr : host.c_str(), service.c_str(), &hints, &res); rc != 0)
    throw IoError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  return res;
}

void send_error(int fd, std::uint16_t code, const std::string& message) {
  write_all(fd, encode_message(ErrorReply{code, message}));
}

}  // namespace

std::pair<std::string, std::uint16_t> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos) throw ConfigError("endpoint '" + endpoint + "' must be host:port");
  const std::string host = endpoint.substr(0, colon);
  const std::string port = endpoint.substr(colon + 1);
  std::size_t used = 0;
  unsigned long value = 0;
  try {
    value = std::stoul(port, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (port.empty() || used != port.size() || value > 65535)
    throw ConfigError("endpoint '" + endpoint + "' has an invalid port");
  return {host, static_cast<std::uint16_t>(value)};
}

// ---------------------------------------------------------------------------
// Server

EncodeServer::EncodeServer(std::shared_ptr<const FeatureService> service, ServerOptions options)
    : service_(std::move(service)), options_(std::move(options)) {
  if (!service_) throw ContractError("EncodeServer: null service");
  delay_ms_.store(options_.delay_ms);
}

EncodeServer::~EncodeServer() { stop(); }

void EncodeServer::start() {
  if (running_.load()) throw ContractError("EncodeServer: already running");
  const auto [host, port] = parse_endpoint(options_.bind);
  addrinfo* res = resolve(host, port, true);
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw IoError(std::string("socket: ") + std::strerror(errno));
  }
  const int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd, res->ai_addr, res->ai_addrlen) != 0 || ::listen(fd, 64) != 0) {
    const std::string why = std::strerror(errno);
    ::freeaddrinfo(res);
    ::close(fd);
    throw IoError("cannot bind " + options_.bind + ": " + why);
  }
  ::freeaddrinfo(res);
  sockaddr_in addr{};
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
  listen_fd_ = fd;
  running_.store(true);
  acceptor_ = std::thread([this] { accept_loop(); });
}

void EncodeServer::stop() {
  if (!running_.exchange(false)) return;
  ::shutdown(listen_fd_, SHUT_RDWR);
  ::close(listen_fd_);
  listen_fd_ = -1;
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard<std::mutex> lk(conn_mu_);
    for (int fd : conn_fds_) ::shutdown(fd, SHUT_RDWR);
  }
  for (auto& w : workers_)
    if (w.joinable()) w.join();
  workers_.clear();
}

void EncodeServer::accept_loop() {
  while (running_.load()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (errno == EINTR) continue;
      break;
    }
    if (!running_.load()) {
      ::close(fd);
      break;
    }
    const int one = 1;
    ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
    {
      std::lock_guard<std::mutex> lk(conn_mu_);
      conn_fds_.push_back(fd);
    }
    workers_.emplace_back([this, fd] { serve_connection(fd); });
  }
}

void EncodeServer::serve_connection(int fd) {
  std::vector<std::uint8_t> frame;
  for (;;) {
    frame.assign(kCvfbHeaderSize, 0);
    std::size_t got = 0;
    if (read_exact(fd, frame.data(), kCvfbHeaderSize, got) != ReadStatus::kOk) break;
    std::uint32_t body = 0;
    try {
      body = frame_body_length(frame);
    } catch (const ProtocolError& e) {
      send_error(fd, kErrMalformed, e.what());
      break;
    }
    frame.resize(kCvfbHeaderSize + body);
    if (read_exact(fd, frame.data() + kCvfbHeaderSize, body, got) != ReadStatus::kOk) break;

    std::vector<std::uint8_t> reply;
    try {
      const Message m = decode_message(frame);
      const auto* req = std::get_if<BatchRequest>(&m);
      if (req == nullptr) {
        send_error(fd, kErrMalformed, "expected a batch request");
        break;
      }
      try {
        reply = encode_message(service_->make_batch(req->step, req->rank));
      } catch (const ContractError& e) {
        reply = encode_message(ErrorReply{kErrBadRank, e.what()});
      } catch (const ConfigError& e) {
        reply = encode_message(ErrorReply{kErrUnknownBucket, e.what()});
      } catch (const std::exception& e) {
        reply = encode_message(ErrorReply{kErrInternal, e.what()});
      }
    } catch (const ProtocolError& e) {
      send_error(fd, kErrMalformed, e.what());
      break;
    }
    if (const auto ms = delay_ms_.load(); ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(ms));
    served_.fetch_add(1);
    if (!write_all(fd, reply)) break;
  }
  std::lock_guard<std::mutex> lk(conn_mu_);
  conn_fds_.erase(std::remove(conn_fds_.begin(), conn_fds_.end(), fd), conn_fds_.end());
  ::close(fd);
}

// ---------------------------------------------------------------------------
// Client

EncodeClient::EncodeClient(std::string host, std::uint16_t port, std::uint32_t timeout_ms)
    : host_(std::move(host)), port_(port), timeout_ms_(timeout_ms) {}

EncodeClient::~EncodeClient() { close(); }

void EncodeClient::close() {
  if (fd_ >= 0) ::close(fd_);
  fd_ = -1;
}

void EncodeClient::connect() {
  addrinfo* res = nullptr;
  try {
    res = resolve(host_, port_, false);
  } catch (const IoError& e) {
    throw RetriableError(e.what());
  }
  const int fd = ::socket(res->ai_family, res->ai_socktype, res->ai_protocol);
  if (fd < 0) {
    ::freeaddrinfo(res);
    throw RetriableError(std::string("socket: ") + std::strerror(errno));
  }
  timeval tv{};
  tv.tv_sec = timeout_ms_ / 1000;
  tv.tv_usec = static_cast<suseconds_t>((timeout_ms_ % 1000) * 1000);
  ::setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);
  ::setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof tv);
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  if (::connect(fd, res->ai_addr, res->ai_addrlen) != 0) {
    const std::string why = std::strerror(errno);
    ::freeaddrinfo(res);
    ::close(fd);
    throw RetriableError("cannot connect to " + host_ + ":" + std::to_string(port_) + ": " + why);
  }
  ::freeaddrinfo(res);
  fd_ = fd;
}

FeatureBatch EncodeClient::request_batch(std::uint64_t step, std::uint32_t rank) {
  if (fd_ < 0) connect();
  if (!write_all(fd_, encode_message(BatchRequest{step, rank}))) {
    close();
    throw RetriableError("send failed: " + std::string(std::strerror(errno)));
  }
  std::vector<std::uint8_t> frame(kCvfbHeaderSize);
  std::size_t got = 0;
  auto check = [&](ReadStatus st) {
    if (st == ReadStatus::kOk) return;
    close();
    if (st == ReadStatus::kTimeout) throw RetriableError("timed out waiting for step " + std::to_string(step));
    if (st == ReadStatus::kEof && got > 0) throw ProtocolError("connection closed mid-frame", got);
    throw RetriableError("connection lost");
  };
  check(read_exact(fd_, frame.data(), kCvfbHeaderSize, got));
  std::uint32_t body = 0;
  try {
    body = frame_body_length(frame);
  } catch (...) {
    close();
    throw;
  }
  frame.resize(kCvfbHeaderSize + body);
  check(read_exact(fd_, frame.data() + kCvfbHeaderSize, body, got));
  Message m;
  try {
    m = decode_message(frame);
  } catch (...) {
    close();
    throw;
  }
  if (auto* err = std::get_if<ErrorReply>(&m)) {
    close();
    throw ServerError(err->code, err->message);
  }
  auto* batch = std::get_if<FeatureBatch>(&m);
  if (batch == nullptr || batch->step != step || batch->rank != rank) {
    close();
    throw ProtocolError("response does not answer step " + std::to_string(step) + " rank " + std::to_string(rank),
                        kCvfbHeaderSize);
  }
  return std::move(*batch);
}

FeatureBatch RemoteSource::fetch(std::uint64_t step, std::uint32_t rank) { return client_.request_batch(step, rank); }

// ---------------------------------------------------------------------------
// Prefetch buffer

BatchBuffer::BatchBuffer(BatchSource& source, std::uint32_t rank, std::size_t capacity, std::uint64_t first_step,
                         int max_retries)
    : source_(source),
      rank_(rank),
      capacity_(capacity),
      max_retries_(max_retries),
      next_pop_(first_step),
      next_fetch_(first_step) {
  if (capacity_ == 0) throw ConfigError("BatchBuffer: capacity must be at least 1");
  filler_ = std::thread([this] { fill_loop(); });
}

BatchBuffer::~BatchBuffer() {
  {
    std::lock_guard<std::mutex> lk(mu_);
    stop_ = true;
  }
  cv_.notify_all();
  if (filler_.joinable()) filler_.join();
}

void BatchBuffer::fill_loop() {
  int attempt = 0;
  for (;;) {
    std::uint64_t step = 0;
    {
      std::unique_lock<std::mutex> lk(mu_);
      cv_.wait(lk, [&] { return stop_ || queue_.size() < capacity_; });
      if (stop_) return;
      step = next_fetch_;
    }
    FeatureBatch batch;
    try {
      batch = source_.fetch(step, rank_);
      if (batch.step != step || batch.rank != rank_)
        throw ProtocolError("source returned step " + std::to_string(batch.step) + " for " + std::to_string(step), 0);
    } catch (const RetriableError&) {
      if (++attempt <= max_retries_) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait_for(lk, std::chrono::milliseconds(10 * attempt), [&] { return stop_; });
        continue;
      }
      std::lock_guard<std::mutex> lk(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
      return;
    } catch (...) {
      std::lock_guard<std::mutex> lk(mu_);
      error_ = std::current_exception();
      cv_.notify_all();
      return;
    }
    attempt = 0;
    {
      std::lock_guard<std::mutex> lk(mu_);
      queue_.push_back(std::move(batch));
      ++next_fetch_;
    }
    cv_.notify_all();
  }
}

FeatureBatch BatchBuffer::pop(std::uint64_t step) {
  std::unique_lock<std::mutex> lk(mu_);
  if (step < next_pop_) throw ContractError("BatchBuffer: step " + std::to_string(step) + " already consumed");
  if (step > next_pop_)
    throw ContractError("BatchBuffer: step " + std::to_string(step) + " requested before " +
                        std::to_string(next_pop_));
  cv_.wait(lk, [&] { return !queue_.empty() || error_; });
  if (queue_.empty()) std::rethrow_exception(error_);
  FeatureBatch b = std::move(queue_.front());
  queue_.pop_front();
  ++next_pop_;
  lk.unlock();
  cv_.notify_all();
  return b;
}

std::vector<std::uint64_t> BatchBuffer::buffered_steps() const {
  std::lock_guard<std::mutex> lk(mu_);
  std::vector<std::uint64_t> out;
  for (const auto& b : queue_) out.push_back(b.step);
  return out;
}

std::vector<double> train_from_buffer(BatchBuffer& buffer, std::uint64_t first_step, std::size_t steps,
                                      std::size_t text_dim, std::uint64_t seed) {
  ModelConfig cfg;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.head_dim = 6;
  cfg.ffn_dim = 16;
  cfg.pe_mode = PeMode::kRope;
  cfg.cond_dim = text_dim;
  Rng rng(seed);
  Rng init = rng.fork("init");
  VideoDit model(cfg, init);
  Adam opt(model.parameters(), AdamOptions{});
  const TimestepSampler sampler;
  std::vector<double> losses;
  for (std::size_t i = 0; i < steps; ++i) {
    const std::uint64_t step = first_step + i;
    FeatureBatch b = buffer.pop(step);
    Rng r = rng.fork("step").fork(step);
    const FlowBatch fb = make_flow_batch(b.latents, b.text_emb, sampler, r);
    losses.push_back(train_step(model, fb, opt));
  }
  return losses;
}

}  // namespace vf
