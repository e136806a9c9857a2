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

#include <array>
#include <cstdint>

#include "twigstore/bytes.hpp"

namespace twigstore {

enum class OpKind : std::uint8_t { create = 0, read = 1, update = 2, erase = 3 };

inline constexpr std::array<OpKind, 4> kOpKinds{OpKind::create, OpKind::read, OpKind::update,
                                                OpKind::erase};

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::create: return "create";
    case OpKind::read: return "read";
    case OpKind::update: return "update";
    case OpKind::erase: return "delete";
  }
  return "?";
}

/// One CRUD operation; `value` is used by creates and updates.
struct OpRequest {
  OpKind kind = OpKind::read;
  Bytes key;
  Bytes value;
};

}  // namespace twigstore
