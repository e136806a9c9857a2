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
#include <atomic>
#include <cstdint>
#include <ostream>
#include <string>

#include "twigstore/op.hpp"

namespace twigstore {

/// Plain copy of the counters, safe to subtract and print.
struct IoStats {
  // Cost-model entry reads and writes attributed to each CRUD op kind.
  std::array<std::uint64_t, 4> entry_reads{};
  std::array<std::uint64_t, 4> entry_writes{};
  std::array<std::uint64_t, 4> ops{};
  std::uint64_t read_ops_log_resident = 0;
  std::uint64_t compaction_reads = 0;
  std::uint64_t compaction_moves = 0;
  // Physical traffic through the log.
  std::uint64_t log_reads = 0;
  std::uint64_t flush_writes = 0;
  std::uint64_t flushed_bytes = 0;
  std::uint64_t meta_writes = 0;
  std::uint64_t journal_writes = 0;
  std::uint64_t syncs = 0;
  std::uint64_t merkleization_reads = 0;
  std::uint64_t merkleization_writes = 0;
  // Pipeline staging.
  std::uint64_t prefetch_reads = 0;
  std::uint64_t cache_hits = 0;
  std::uint64_t cache_misses = 0;
  std::uint64_t in_block_hits = 0;
  std::uint64_t proof_reads = 0;

  std::uint64_t total_entry_reads() const {
    return entry_reads[0] + entry_reads[1] + entry_reads[2] + entry_reads[3];
  }
  std::uint64_t total_entry_writes() const {
    return entry_writes[0] + entry_writes[1] + entry_writes[2] + entry_writes[3] + compaction_moves;
  }

  IoStats& operator+=(const IoStats& o) {
    for (std::size_t i = 0; i < 4; ++i) {
      entry_reads[i] += o.entry_reads[i];
      entry_writes[i] += o.entry_writes[i];
      ops[i] += o.ops[i];
    }
    read_ops_log_resident += o.read_ops_log_resident;
    compaction_reads += o.compaction_reads;
    compaction_moves += o.compaction_moves;
    log_reads += o.log_reads;
    flush_writes += o.flush_writes;
    flushed_bytes += o.flushed_bytes;
    meta_writes += o.meta_writes;
    journal_writes += o.journal_writes;
    syncs += o.syncs;
    merkleization_reads += o.merkleization_reads;
    merkleization_writes += o.merkleization_writes;
    prefetch_reads += o.prefetch_reads;
    cache_hits += o.cache_hits;
    cache_misses += o.cache_misses;
    in_block_hits += o.in_block_hits;
    proof_reads += o.proof_reads;
    return *this;
  }

  IoStats operator-(const IoStats& o) const {
    IoStats d = *this;
    for (std::size_t i = 0; i < 4; ++i) {
      d.entry_reads[i] -= o.entry_reads[i];
      d.entry_writes[i] -= o.entry_writes[i];
      d.ops[i] -= o.ops[i];
    }
    d.read_ops_log_resident -= o.read_ops_log_resident;
    d.compaction_reads -= o.compaction_reads;
    d.compaction_moves -= o.compaction_moves;
    d.log_reads -= o.log_reads;
    d.flush_writes -= o.flush_writes;
    d.flushed_bytes -= o.flushed_bytes;
    d.meta_writes -= o.meta_writes;
    d.journal_writes -= o.journal_writes;
    d.syncs -= o.syncs;
    d.merkleization_reads -= o.merkleization_reads;
    d.merkleization_writes -= o.merkleization_writes;
    d.prefetch_reads -= o.prefetch_reads;
    d.cache_hits -= o.cache_hits;
    d.cache_misses -= o.cache_misses;
    d.in_block_hits -= o.in_block_hits;
    d.proof_reads -= o.proof_reads;
    return d;
  }
};

/// Live counters for one shard. Monotonically non-decreasing.
class IoCounters {
 public:
  using Counter = std::atomic<std::uint64_t>;

  std::array<Counter, 4> entry_reads{};
  std::array<Counter, 4> entry_writes{};
  std::array<Counter, 4> ops{};
  Counter read_ops_log_resident{0};
  Counter compaction_reads{0};
  Counter compaction_moves{0};
  Counter log_reads{0};
  Counter flush_writes{0};
  Counter flushed_bytes{0};
  Counter meta_writes{0};
  Counter journal_writes{0};
  Counter syncs{0};
  Counter merkleization_reads{0};
  Counter merkleization_writes{0};
  Counter prefetch_reads{0};
  Counter cache_hits{0};
  Counter cache_misses{0};
  Counter in_block_hits{0};
  Counter proof_reads{0};

  static void bump(Counter& c, std::uint64_t n = 1) { c.fetch_add(n, std::memory_order_relaxed); }

  IoStats snapshot() const {
    auto ld = [](const Counter& c) { return c.load(std::memory_order_relaxed); };
    IoStats s;
    for (std::size_t i = 0; i < 4; ++i) {
      s.entry_reads[i] = ld(entry_reads[i]);
      s.entry_writes[i] = ld(entry_writes[i]);
      s.ops[i] = ld(ops[i]);
    }
    s.read_ops_log_resident = ld(read_ops_log_resident);
    s.compaction_reads = ld(compaction_reads);
    s.compaction_moves = ld(compaction_moves);
    s.log_reads = ld(log_reads);
    s.flush_writes = ld(flush_writes);
    s.flushed_bytes = ld(flushed_bytes);
    s.meta_writes = ld(meta_writes);
    s.journal_writes = ld(journal_writes);
    s.syncs = ld(syncs);
    s.merkleization_reads = ld(merkleization_reads);
    s.merkleization_writes = ld(merkleization_writes);
    s.prefetch_reads = ld(prefetch_reads);
    s.cache_hits = ld(cache_hits);
    s.cache_misses = ld(cache_misses);
    s.in_block_hits = ld(in_block_hits);
    s.proof_reads = ld(proof_reads);
    return s;
  }
};

namespace detail {
inline bool& merkleizing_flag() {
  thread_local bool flag = false;
  return flag;
}
}  // namespace detail

/// Marks the calling thread as Merkleizing; any log IO it performs meanwhile
/// is charged to the merkleization counters.
class MerkleizationScope {
 public:
  MerkleizationScope() : previous_(detail::merkleizing_flag()) { detail::merkleizing_flag() = true; }
  ~MerkleizationScope() { detail::merkleizing_flag() = previous_; }
  MerkleizationScope(const MerkleizationScope&) = delete;
  MerkleizationScope& operator=(const MerkleizationScope&) = delete;

  static bool active() { return detail::merkleizing_flag(); }

 private:
  bool previous_;
};

inline void print_stats(std::ostream& os, const IoStats& s, const std::string& prefix = "") {
  for (auto k : kOpKinds) {
    auto i = static_cast<std::size_t>(k);
    os << prefix << "ops." << to_string(k) << "=" << s.ops[i] << "\n";
    os << prefix << "entry_reads." << to_string(k) << "=" << s.entry_reads[i] << "\n";
    os << prefix << "entry_writes." << to_string(k) << "=" << s.entry_writes[i] << "\n";
  }
  os << prefix << "read_ops_log_resident=" << s.read_ops_log_resident << "\n"
     << prefix << "compaction_reads=" << s.compaction_reads << "\n"
     << prefix << "compaction_moves=" << s.compaction_moves << "\n"
     << prefix << "log_reads=" << s.log_reads << "\n"
     << prefix << "flush_writes=" << s.flush_writes << "\n"
     << prefix << "flushed_bytes=" << s.flushed_bytes << "\n"
     << prefix << "meta_writes=" << s.meta_writes << "\n"
     << prefix << "journal_writes=" << s.journal_writes << "\n"
     << prefix << "syncs=" << s.syncs << "\n"
     << prefix << "merkleization_reads=" << s.merkleization_reads << "\n"
     << prefix << "merkleization_writes=" << s.merkleization_writes << "\n"
     << prefix << "prefetch_reads=" << s.prefetch_reads << "\n"
     << prefix << "cache_hits=" << s.cache_hits << "\n"
     << prefix << "cache_misses=" << s.cache_misses << "\n"
     << prefix << "in_block_hits=" << s.in_block_hits << "\n"
     << prefix << "proof_reads=" << s.proof_reads << "\n";
}

}  // namespace twigstore
