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
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "twigstore/bytes.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/store.hpp"

namespace twigstore {

/// Ops per transaction in a mixed workload.
struct OpMix {
  unsigned reads = 15;
  unsigned updates = 9;
  unsigned creates = 1;
  unsigned deletes = 1;
};

inline OpMix parse_mix(const std::string& text) {
  OpMix m;
  char c1 = 0, c2 = 0, c3 = 0;
  std::istringstream in(text);
  if (!(in >> m.reads >> c1 >> m.updates >> c2 >> m.creates >> c3 >> m.deletes) || c1 != ',' ||
      c2 != ',' || c3 != ',' || !in.eof()) {
    fail(ErrorCode::configuration, "mix must be r,u,c,d: '" + text + "'");
  }
  return m;
}

struct WorkloadSpec {
  std::uint64_t blocks = 10;
  std::uint64_t txs_per_block = 100;
  OpMix mix;
  std::uint64_t seed = 1;
  std::size_t value_size = 32;
  unsigned creates_per_tx = 10;
};

/// Keys are SHA-256(seed || counter), so they spread evenly over shards.
class KeyGenerator {
 public:
  explicit KeyGenerator(std::uint64_t seed, std::uint64_t counter = 0)
      : seed_(seed), counter_(counter) {}

  Bytes next() {
    Bytes in;
    le::put<std::uint64_t>(in, seed_);
    le::put<std::uint64_t>(in, counter_++);
    Digest d = hasher_.plain(in);
    return Bytes(d.begin(), d.end());
  }

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t counter() const noexcept { return counter_; }

 private:
  std::uint64_t seed_;
  std::uint64_t counter_;
  Hasher hasher_{HashAlgorithm::sha256};
};

/// Deterministic block generator. Creates use fresh keys; reads, updates and
/// deletes pick from the keys it knows to be live.
class WorkloadGenerator {
 public:
  WorkloadGenerator(std::uint64_t seed, std::size_t value_size, std::uint64_t key_counter = 0)
      : keys_(seed, key_counter), rng_(seed ^ 0x9e3779b97f4a7c15ULL), value_size_(value_size) {}

  void add_live(Bytes key) { live_.push_back(std::move(key)); }
  const std::vector<Bytes>& live() const { return live_; }
  const KeyGenerator& keys() const { return keys_; }

  ChangeSet populate_block(std::uint64_t height, std::uint64_t txs, unsigned creates_per_tx) {
    ChangeSet cs{height, {}};
    cs.ops.reserve(txs * creates_per_tx);
    for (std::uint64_t t = 0; t < txs * creates_per_tx; ++t) cs.ops.push_back(create_op());
    return cs;
  }

  ChangeSet mixed_block(std::uint64_t height, std::uint64_t txs, const OpMix& mix) {
    ChangeSet cs{height, {}};
    for (std::uint64_t t = 0; t < txs; ++t) {
      for (unsigned i = 0; i < mix.deletes && !live_.empty(); ++i) {
        auto idx = pick();
        cs.ops.push_back(OpRequest{OpKind::erase, live_[idx], {}});
        live_[idx] = std::move(live_.back());
        live_.pop_back();
      }
      for (unsigned i = 0; i < mix.creates; ++i) cs.ops.push_back(create_op());
      for (unsigned i = 0; i < mix.updates && !live_.empty(); ++i) {
        cs.ops.push_back(OpRequest{OpKind::update, live_[pick()], value()});
      }
      for (unsigned i = 0; i < mix.reads && !live_.empty(); ++i) {
        cs.ops.push_back(OpRequest{OpKind::read, live_[pick()], {}});
      }
    }
    return cs;
  }

 private:
  OpRequest create_op() {
    Bytes k = keys_.next();
    live_.push_back(k);
    return OpRequest{OpKind::create, std::move(k), value()};
  }

  std::size_t pick() {
    return std::uniform_int_distribution<std::size_t>(0, live_.size() - 1)(rng_);
  }

  Bytes value() {
    Bytes v(value_size_);
    for (auto& b : v) b = static_cast<std::uint8_t>(rng_());
    return v;
  }

  KeyGenerator keys_;
  std::mt19937_64 rng_;
  std::size_t value_size_;
  std::vector<Bytes> live_;
};

/// Key counter persisted next to the store so later runs create fresh keys.
struct KeygenState {
  std::uint64_t seed = 0;
  std::uint64_t counter = 0;
};

inline std::filesystem::path keygen_state_path(const std::filesystem::path& dir) {
  return dir / "keygen.state";
}

inline std::optional<KeygenState> read_keygen_state(const std::filesystem::path& dir) {
  std::ifstream in(keygen_state_path(dir));
  if (!in) return std::nullopt;
  KeygenState s;
  std::string line;
  while (std::getline(in, line)) {
    auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto k = line.substr(0, eq);
    auto v = std::stoull(line.substr(eq + 1));
    if (k == "seed") s.seed = v;
    if (k == "counter") s.counter = v;
  }
  return s;
}

inline void write_keygen_state(const std::filesystem::path& dir, const KeygenState& s) {
  std::ofstream out(keygen_state_path(dir), std::ios::trunc);
  out << "seed=" << s.seed << "\ncounter=" << s.counter << "\n";
  if (!out) fail(ErrorCode::storage, "cannot write keygen state");
}

}  // namespace twigstore
