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

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/log.hpp"

namespace twigstore {

enum class PipelineMode { serial, pipelined };

struct StoreConfig {
  std::filesystem::path dir;
  unsigned shard_bits = 4;
  std::size_t queue_depth = 4;
  double compaction_threshold = 0.5;
  unsigned compaction_step = 2;
  HashAlgorithm hash = HashAlgorithm::sha256;
  PipelineMode mode = PipelineMode::pipelined;
  /// fdatasync log, journal and manifest writes at every commit.
  bool sync = false;
  FaultHook fault_hook;

  std::size_t shard_count() const { return std::size_t{1} << shard_bits; }

  void validate() const {
    if (dir.empty()) fail(ErrorCode::configuration, "store directory not set");
    if (shard_bits > 8) fail(ErrorCode::configuration, "shard_bits must be at most 8");
    if (queue_depth == 0) fail(ErrorCode::configuration, "queue_depth must be positive");
    if (!(compaction_threshold >= 0.0 && compaction_threshold < 1.0)) {
      fail(ErrorCode::configuration, "compaction_threshold must be in [0, 1)");
    }
    if (compaction_threshold > 0.0 && compaction_step == 0) {
      fail(ErrorCode::configuration, "compaction_step must be positive");
    }
  }
};

/// Overlays settings from a JSON object onto `base`. Unknown keys are errors.
inline StoreConfig apply_config_json(const nlohmann::json& j, StoreConfig base) {
  if (!j.is_object()) fail(ErrorCode::configuration, "config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "dir") {
        base.dir = value.get<std::string>();
      } else if (key == "shard_bits") {
        base.shard_bits = value.get<unsigned>();
      } else if (key == "queue_depth") {
        base.queue_depth = value.get<std::size_t>();
      } else if (key == "compaction_threshold") {
        base.compaction_threshold = value.get<double>();
      } else if (key == "compaction_step") {
        base.compaction_step = value.get<unsigned>();
      } else if (key == "hash") {
        base.hash = parse_hash_algorithm(value.get<std::string>());
      } else if (key == "mode") {
        auto m = value.get<std::string>();
        if (m == "serial") {
          base.mode = PipelineMode::serial;
        } else if (m == "pipelined") {
          base.mode = PipelineMode::pipelined;
        } else {
          fail(ErrorCode::configuration, "unknown mode '" + m + "'");
        }
      } else if (key == "sync") {
        base.sync = value.get<bool>();
      } else {
        fail(ErrorCode::configuration, "unknown config key '" + key + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::configuration, "config key '" + key + "': " + e.what());
    }
  }
  return base;
}

inline StoreConfig load_config_file(const std::filesystem::path& path, StoreConfig base = {}) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::configuration, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::configuration, "config " + path.string() + ": " + e.what());
  }
  return apply_config_json(j, std::move(base));
}

}  // namespace twigstore
