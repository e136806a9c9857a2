/*
 * Copyright 2026 The TwigStore Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace twigstore {

enum class ErrorCode {
  encoding,
  decode,
  lifecycle,
  capacity,
  double_deactivation,
  pruning_violation,
  configuration,
  corruption,
  storage,
  not_found,
  duplicate_key,
  shard_routing,
  boundary_protection,
  consistency,
  uninitialized_shard,
  wrong_proof_kind,
  history_unavailable,
  precondition,
  halted,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::encoding: return "encoding";
    case ErrorCode::decode: return "decode";
    case ErrorCode::lifecycle: return "lifecycle";
    case ErrorCode::capacity: return "capacity";
    case ErrorCode::double_deactivation: return "double_deactivation";
    case ErrorCode::pruning_violation: return "pruning_violation";
    case ErrorCode::configuration: return "configuration";
    case ErrorCode::corruption: return "corruption";
    case ErrorCode::storage: return "storage";
    case ErrorCode::not_found: return "not_found";
    case ErrorCode::duplicate_key: return "duplicate_key";
    case ErrorCode::shard_routing: return "shard_routing";
    case ErrorCode::boundary_protection: return "boundary_protection";
    case ErrorCode::consistency: return "consistency";
    case ErrorCode::uninitialized_shard: return "uninitialized_shard";
    case ErrorCode::wrong_proof_kind: return "wrong_proof_kind";
    case ErrorCode::history_unavailable: return "history_unavailable";
    case ErrorCode::precondition: return "precondition";
    case ErrorCode::halted: return "halted";
  }
  return "unknown";
}

/// Every failure raised by the library carries a machine-checkable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace twigstore
