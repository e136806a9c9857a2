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
#include <optional>
#include <sstream>
#include <string>

#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/log.hpp"

namespace twigstore {

/// Trusted anchor written at every block commit: the committed height and
/// global root. Recovery replays the logs and must reproduce this root.
struct Manifest {
  std::uint64_t height = 0;
  Digest root{};
  unsigned shard_bits = 0;
  HashAlgorithm hash = HashAlgorithm::sha256;

  bool operator==(const Manifest&) const = default;
};

inline std::filesystem::path manifest_path(const std::filesystem::path& dir) {
  return dir / "MANIFEST";
}

inline std::string format_manifest(const Manifest& m) {
  std::ostringstream os;
  os << "height=" << m.height << "\n"
     << "root=" << to_hex(m.root) << "\n"
     << "shard_bits=" << m.shard_bits << "\n"
     << "hash=" << to_string(m.hash) << "\n";
  return os.str();
}

inline Manifest parse_manifest(const std::string& text) {
  Manifest m;
  unsigned seen = 0;
  std::istringstream in(text);
  std::string line;
  try {
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto eq = line.find('=');
      if (eq == std::string::npos) fail(ErrorCode::corruption, "manifest line without '='");
      auto key = line.substr(0, eq);
      auto value = line.substr(eq + 1);
      if (key == "height") {
        m.height = std::stoull(value);
        seen |= 1;
      } else if (key == "root") {
        m.root = digest_from_hex(value);
        seen |= 2;
      } else if (key == "shard_bits") {
        m.shard_bits = static_cast<unsigned>(std::stoul(value));
        seen |= 4;
      } else if (key == "hash") {
        m.hash = parse_hash_algorithm(value);
        seen |= 8;
      }
    }
  } catch (const std::logic_error&) {
    fail(ErrorCode::corruption, "malformed manifest value in line '" + line + "'");
  }
  if (seen != 15) fail(ErrorCode::corruption, "manifest is missing fields");
  return m;
}

inline std::optional<Manifest> read_manifest(const std::filesystem::path& dir) {
  std::ifstream in(manifest_path(dir));
  if (!in) return std::nullopt;
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

/// Atomically replaces the manifest (write temp, sync, rename).
inline void write_manifest(const std::filesystem::path& dir, const Manifest& m, bool sync) {
  auto tmp = dir / "MANIFEST.tmp";
  {
    LogFile f(tmp);
    auto text = format_manifest(m);
    f.truncate(0);
    f.write_at(0, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    if (sync) f.sync();
  }
  std::filesystem::rename(tmp, manifest_path(dir));
  if (sync) sync_directory(dir);
}

}  // namespace twigstore
