// Copyright (c) 2026 The vidflow Authors
// SPDX-License-Identifier: Apache-2.0

#include "vidflow/error.hpp"

namespace vf {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kContract: return "contract";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kIo: return "io";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kRetriable: return "retriable";
    case ErrorKind::kServer: return "server";
  }
  return "unknown";
}

}  // namespace vf
