// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace vf {

enum class ErrorKind {
  kShape,
  kContract,
  kConfig,
  kNumeric,
  kIo,
  kProtocol,
  kRetriable,
  kServer,
};

const char* to_string(ErrorKind kind);

/// Base of every exception thrown by the library. The C API maps `kind()`
/// onto its status codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::kShape, what) {}
};

class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(ErrorKind::kContract, what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::kConfig, what) {}
};

/// A non-finite value surfaced in a loss, reward or sampler state.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::kIo, what) {}
};

class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& what, std::size_t offset)
      : Error(ErrorKind::kProtocol, what + " (at byte " + std::to_string(offset) + ")"), offset_(offset) {}
  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// Transient failure (timeout, refused connection); the caller may retry.
class RetriableError : public Error {
 public:
  explicit RetriableError(const std::string& what) : Error(ErrorKind::kRetriable, what) {}
};

/// Error reply received from a remote encode server.
class ServerError : public Error {
 public:
  ServerError(std::uint16_t code, const std::string& what)
      : Error(ErrorKind::kServer, "server error " + std::to_string(code) + ": " + what), code_(code) {}
  std::uint16_t code() const noexcept { return code_; }

 private:
  std::uint16_t code_;
};

}  // namespace vf
