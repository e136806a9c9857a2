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

#include <algorithm>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "twigstore/bytes.hpp"
#include "twigstore/entry.hpp"
#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"
#include "twigstore/indexer.hpp"
#include "twigstore/io_counters.hpp"
#include "twigstore/log.hpp"
#include "twigstore/tree.hpp"
#include "twigstore/twig.hpp"

namespace twigstore {

inline constexpr std::size_t kSentinelKeyLen = 32;

/// Shard owning `key`: the top `shard_bits` bits of its first byte.
inline std::uint32_t route_key(ByteView key, unsigned shard_bits) {
  if (shard_bits == 0) return 0;
  std::uint8_t first = key.empty() ? 0 : key[0];
  return static_cast<std::uint32_t>(first >> (8 - shard_bits));
}

inline Bytes lower_sentinel_key(unsigned shard_bits, std::uint32_t shard) {
  Bytes k(kSentinelKeyLen, 0x00);
  if (shard_bits > 0) k[0] = static_cast<std::uint8_t>(shard << (8 - shard_bits));
  return k;
}

inline Bytes upper_sentinel_key(unsigned shard_bits, std::uint32_t shard) {
  Bytes k(kSentinelKeyLen, 0xFF);
  if (shard_bits > 0) {
    auto low_mask = static_cast<std::uint8_t>(0xFFu >> shard_bits);
    k[0] = static_cast<std::uint8_t>((shard << (8 - shard_bits)) | low_mask);
  }
  return k;
}

/// Per-block map from log position to prefetched entry.
class EntryCache {
 public:
  void put(std::uint64_t position, Entry e) { map_.emplace(position, std::move(e)); }
  const Entry* find(std::uint64_t position) const {
    auto it = map_.find(position);
    return it == map_.end() ? nullptr : &it->second;
  }
  bool contains(std::uint64_t position) const { return map_.count(position) != 0; }
  std::size_t size() const { return map_.size(); }
  void clear() { map_.clear(); }

 private:
  std::unordered_map<std::uint64_t, Entry> map_;
};

/// Replays entries in id order into the active key set. Each entry replaces
/// its key's previous entry and retires every key strictly inside its
/// (key, next_key) interval, which is how deletes show up in the log.
template <typename Payload>
class StateReplayer {
 public:
  void apply(const Entry& e, Payload payload) {
    if (lexicographic_less(e.key, e.next_key)) {
      active_.erase(active_.upper_bound(e.key), active_.lower_bound(e.next_key));
    }
    active_[e.key] = std::move(payload);
  }

  const std::map<Bytes, Payload>& active() const { return active_; }
  std::map<Bytes, Payload>& active() { return active_; }

 private:
  std::map<Bytes, Payload> active_;
};

struct ShardOptions {
  unsigned shard_bits = 4;
  HashAlgorithm hash = HashAlgorithm::sha256;
  double compaction_threshold = 0.5;
  unsigned compaction_step = 2;
  bool sync = false;
};

struct Located {
  Entry entry;
  std::uint64_t position = 0;
};

/// Everything needed to prove one entry against the shard root.
struct EntryWitness {
  Bytes frame;
  std::uint64_t twig_index = 0;
  std::uint32_t leaf_index = 0;
  ActiveBits bits;
  std::array<Digest, kTwigDepth> entry_path{};
  std::vector<Digest> upper_path;
};

struct ShardMemory {
  std::size_t twig_objects = 0;
  std::size_t pruned_twigs = 0;
  std::size_t twig_bytes = 0;
  std::size_t twig_roots = 0;
  std::size_t upper_nodes = 0;
  std::size_t upper_bytes = 0;
  std::size_t indexer_bytes = 0;
  std::size_t indexed_keys = 0;

  /// Twig metadata plus upper tree nodes.
  std::size_t merkle_bytes() const { return twig_bytes + upper_bytes; }
};

/// One shard: entry log, twigs, upper tree and indexer, with the CRUD rules
/// that keep active entries linked in key order between two sentinels.
///
/// Mutations run on one thread at a time. The indexer and log may be read
/// concurrently by a prefetcher while no mutation is running.
class Shard {
 public:
  /// Creates a new shard holding only its two sentinels (not yet committed).
  Shard(const fs::path& dir, std::uint32_t id, const ShardOptions& options, IoCounters& counters)
      : Shard(id, options, counters) {
    log_ = std::make_unique<EntryLog>(dir, id, options.hash, counters, options.sync);
    Entry lower{0, lower_key_, {}, upper_key_, kNullId, kNullId, 0};
    Entry upper{1, upper_key_, {}, lower_key_, kNullId, kNullId, 0};
    index_->put(lower_key_, append(std::move(lower)));
    index_->put(upper_key_, append(std::move(upper)));
  }

  /// Reopens a shard from its files, keeping blocks up to `max_height`.
  static std::unique_ptr<Shard> recover(const fs::path& dir, std::uint32_t id,
                                        const ShardOptions& options, IoCounters& counters,
                                        std::uint64_t max_height,
                                        EntryLog::RecoveryReport* report = nullptr) {
    std::unique_ptr<Shard> s(new Shard(id, options, counters));
    s->recover_impl(dir, max_height, report);
    return s;
  }

  std::uint32_t id() const noexcept { return id_; }
  const Bytes& lower_key() const noexcept { return lower_key_; }
  const Bytes& upper_key() const noexcept { return upper_key_; }
  std::uint64_t next_id() const noexcept { return next_id_; }
  std::uint64_t active_count() const noexcept { return active_count_; }
  std::uint64_t pruned_twigs() const noexcept { return twig_base_; }
  std::uint64_t twig_count() const noexcept { return upper_.twig_count(); }
  std::size_t upper_height() const noexcept { return upper_.height(); }
  const EntryLog& log() const { return *log_; }
  EntryLog& log() { return *log_; }
  const Indexer& indexer() const { return *index_; }
  const Hasher& hasher() const noexcept { return hasher_; }
  const ShardOptions& options() const noexcept { return options_; }

  void set_fault_hook(FaultHook hook) { log_->set_fault_hook(std::move(hook)); }

  bool is_sentinel(ByteView key) const {
    return bytes_equal(key, lower_key_) || bytes_equal(key, upper_key_);
  }

  /// Strictly between the two sentinels.
  bool in_range(ByteView key) const {
    return lexicographic_less(lower_key_, key) && lexicographic_less(key, upper_key_);
  }

  void require_routable(ByteView key) const {
    if (key.empty() || key.size() > kMaxKeyLen) {
      fail(ErrorCode::encoding, "key length " + std::to_string(key.size()) + " out of range");
    }
    if (route_key(key, options_.shard_bits) != id_ ||
        (!in_range(key) && !is_sentinel(key))) {
      fail(ErrorCode::shard_routing, "key " + to_hex(key) + " is outside shard " +
                                         std::to_string(id_));
    }
  }

  /// Installs the prefetched entries for the current block (may be null).
  void begin_block(const EntryCache* cache) { cache_ = cache; }
  void end_block() { cache_ = nullptr; }

  // ---- CRUD ---------------------------------------------------------------

  std::optional<Bytes> read_op(ByteView key) {
    require_routable(key);
    bump_op(OpKind::read);
    unsigned reads = 0;
    auto hit = locate(key, reads, OpKind::read);
    if (!hit) return std::nullopt;
    return std::move(hit->entry.value);
  }

  std::uint64_t update(ByteView key, ByteView value, std::uint64_t version) {
    require_routable(key);
    if (is_sentinel(key)) fail(ErrorCode::boundary_protection, "sentinel keys are immutable");
    bump_op(OpKind::update);
    unsigned reads = 0;
    auto old = locate(key, reads, OpKind::update);
    charge_reads(OpKind::update, reads);
    if (!old) fail(ErrorCode::not_found, "update of absent key " + to_hex(key));
    deactivate(old->entry.id);
    Entry e{next_id_, old->entry.key, Bytes(value.begin(), value.end()), old->entry.next_key,
            old->entry.id, old->entry.old_next_key_id, version};
    auto id = e.id;
    auto pos = append(std::move(e));
    charge_write(OpKind::update);
    index_->replace(key, old->position, pos);
    maybe_compact(version);
    return id;
  }

  std::uint64_t create(ByteView key, ByteView value, std::uint64_t version) {
    require_routable(key);
    if (is_sentinel(key)) fail(ErrorCode::boundary_protection, "sentinel keys are immutable");
    bump_op(OpKind::create);
    unsigned reads = 0;
    auto prev = find_floor(key, true, reads, nullptr);
    charge_reads(OpKind::create, reads);
    if (bytes_equal(prev.entry.key, key)) {
      fail(ErrorCode::duplicate_key, "key " + to_hex(key) + " already exists");
    }
    if (!ring_straddles(prev.entry.key, prev.entry.next_key, key)) {
      fail(ErrorCode::consistency, "predecessor does not straddle the created key");
    }
    deactivate(prev.entry.id);
    Entry ek{next_id_, Bytes(key.begin(), key.end()), Bytes(value.begin(), value.end()),
             prev.entry.next_key, kNullId, kNullId, version};
    auto id = ek.id;
    auto pos_k = append(std::move(ek));
    Entry ep{next_id_, prev.entry.key, prev.entry.value, Bytes(key.begin(), key.end()),
             prev.entry.id, kNullId, version};
    auto pos_p = append(std::move(ep));
    charge_write(OpKind::create, 2);
    index_->put(key, pos_k);
    index_->replace(prev.entry.key, prev.position, pos_p);
    maybe_compact(version);
    return id;
  }

  void erase(ByteView key, std::uint64_t version) {
    require_routable(key);
    if (is_sentinel(key)) fail(ErrorCode::boundary_protection, "sentinel keys cannot be deleted");
    bump_op(OpKind::erase);
    unsigned reads = 0;
    auto target = locate(key, reads, OpKind::erase);
    if (!target) {
      charge_reads(OpKind::erase, reads);
      fail(ErrorCode::not_found, "delete of absent key " + to_hex(key));
    }
    auto prev = find_floor(key, false, reads, &*target);
    charge_reads(OpKind::erase, reads);
    deactivate(target->entry.id);
    deactivate(prev.entry.id);
    // old_next_key_id points at the deleted key's entry so that history can
    // step back into the merged interval.
    Entry ep{next_id_, prev.entry.key, prev.entry.value, target->entry.next_key,
             prev.entry.id, target->entry.id, version};
    auto pos = append(std::move(ep));
    charge_write(OpKind::erase);
    index_->erase(key, target->position);
    index_->replace(prev.entry.key, prev.position, pos);
  }

  /// Applies one request; reads return their value, writes return nothing.
  std::optional<Bytes> apply(const OpRequest& op, std::uint64_t version) {
    switch (op.kind) {
      case OpKind::read: return read_op(op.key);
      case OpKind::update: update(op.key, op.value, version); break;
      case OpKind::create: create(op.key, op.value, version); break;
      case OpKind::erase: erase(op.key, version); break;
    }
    return std::nullopt;
  }

  // ---- queries (uncounted) --------------------------------------------------

  std::optional<Located> find(ByteView key) const {
    for (auto p : index_->get(key)) {
      Entry e = log_->read_entry_at(p);
      if (bytes_equal(e.key, key)) return Located{std::move(e), p};
    }
    return std::nullopt;
  }

  /// The active entry whose [key, next_key) interval covers `key`.
  Located covering(ByteView key) const {
    require_routable(key);
    unsigned reads = 0;
    return find_floor_impl(key, true, reads, nullptr, false);
  }

  Entry entry_by_id(std::uint64_t id) const { return log_->read_entry_by_id(id); }

  bool is_active(std::uint64_t id) const {
    if (id >= next_id_) return false;
    auto t = twig_of(id);
    if (t < twig_base_) return false;
    return twigs_[t - twig_base_].is_active(slot_of(id));
  }

  TwigState twig_state(std::uint64_t twig) const {
    if (twig < twig_base_) return TwigState::pruned;
    if (twig - twig_base_ >= twigs_.size()) fail(ErrorCode::not_found, "no such twig");
    return twigs_[twig - twig_base_].state();
  }

  /// Walks the next_key ring from the lower sentinel (excluding sentinels).
  void for_each_active(const std::function<void(const Entry&)>& fn) const {
    auto cur = find(lower_key_);
    while (true) {
      if (!cur) fail(ErrorCode::consistency, "ring broken in shard " + std::to_string(id_));
      Bytes key = cur->entry.next_key;
      if (bytes_equal(key, upper_key_)) return;
      cur = find(key);
      if (cur) fn(cur->entry);
    }
  }

  // ---- commit ---------------------------------------------------------------

  /// Merkleizes dirty twigs, flushes full twigs, journals the Fresh twig and
  /// prunes leading Inactive twigs. Returns the shard root.
  Digest commit() {
    {
      MerkleizationScope scope;
      for (auto t : dirty_) {
        if (t < twig_base_) continue;
        const Twig& twig = twigs_[t - twig_base_];
        if (twig.leaf_count() == 0) continue;
        upper_.set_twig_root(t, twig.twig_root(hasher_));
      }
      dirty_.clear();
      upper_.recompute();
    }
    log_->flush_full_twigs([this](std::uint64_t t) { return twigs_[t - twig_base_].entry_root(hasher_); });
    log_->sync_tail();
    prune_inactive();
    return upper_.shard_root();
  }

  Digest root() const { return upper_.shard_root(); }

  // ---- prefetch -------------------------------------------------------------

  /// Stages into `cache` the entries `op` will read, using the index as of
  /// block start. Returns the number of reads that went to storage.
  std::size_t prefetch(const OpRequest& op, EntryCache& cache) const {
    if (op.key.empty() || route_key(op.key, options_.shard_bits) != id_) return 0;
    if (!in_range(op.key) && !is_sentinel(op.key)) return 0;
    std::size_t reads = 0;
    auto load = [&](std::uint64_t p) -> Entry {
      if (const Entry* e = cache.find(p)) return *e;
      auto r = log_->read_entry_at_traced(p);
      if (r.from_storage) {
        IoCounters::bump(counters_->prefetch_reads);
        ++reads;
      }
      cache.put(p, r.entry);
      return std::move(r.entry);
    };
    for (auto p : index_->get(op.key)) load(p);
    if (op.kind == OpKind::create || op.kind == OpKind::erase) {
      auto bucket = index_->predecessor(op.key);
      while (true) {
        bool found = false;
        for (auto p : bucket.positions) {
          Entry e = load(p);
          if (lexicographic_less(e.key, op.key) ||
              (op.kind == OpKind::create && bytes_equal(e.key, op.key))) {
            found = true;
          }
        }
        if (found) break;
        bucket = index_->predecessor_below(bucket.prefix);
      }
    }
    return reads;
  }

  // ---- proofs ---------------------------------------------------------------

  EntryWitness witness(std::uint64_t id) const {
    if (id >= next_id_) fail(ErrorCode::not_found, "no entry with id " + std::to_string(id));
    EntryWitness w;
    w.twig_index = twig_of(id);
    w.leaf_index = slot_of(id);
    auto pos = log_->position_of(id);
    auto levels = entry_levels(w.twig_index);
    if (w.twig_index >= twig_base_) {
      w.bits = twigs_[w.twig_index - twig_base_].active_bits();
    }
    w.entry_path = levels->path(w.leaf_index);
    Entry e = log_->read_entry_at(pos);
    w.frame = serialize_entry(e);
    w.upper_path = upper_.path(w.twig_index, [this](std::size_t level, std::uint64_t index) {
      return subtree_digest(hasher_, level, index, upper_.twig_count(),
                            [this](std::uint64_t t) { return twig_root_any(t); });
    });
    return w;
  }

  // ---- stats ----------------------------------------------------------------

  ShardMemory memory() const {
    ShardMemory m;
    m.twig_objects = twigs_.size();
    m.pruned_twigs = twig_base_;
    for (const auto& t : twigs_) m.twig_bytes += t.memory_bytes();
    m.twig_roots = upper_.retained_twig_roots();
    m.upper_nodes = upper_.retained_upper_nodes();
    m.upper_bytes = upper_.memory_bytes();
    m.indexer_bytes = index_->memory_bytes();
    m.indexed_keys = index_->size();
    return m;
  }

 private:
  Shard(std::uint32_t id, const ShardOptions& options, IoCounters& counters)
      : id_(id), options_(options), hasher_(options.hash), counters_(&counters),
        lower_key_(lower_sentinel_key(options.shard_bits, id)),
        upper_key_(upper_sentinel_key(options.shard_bits, id)),
        index_(std::make_unique<InMemoryIndexer>(id << (16 - options.shard_bits),
                                                 65536u >> options.shard_bits)),
        upper_(options.hash) {
    twigs_.emplace_back(0, options.hash);
  }

  void bump_op(OpKind k) { IoCounters::bump(counters_->ops[static_cast<std::size_t>(k)]); }
  void charge_reads(OpKind k, unsigned n) {
    IoCounters::bump(counters_->entry_reads[static_cast<std::size_t>(k)], n);
  }
  void charge_write(OpKind k, unsigned n = 1) {
    IoCounters::bump(counters_->entry_writes[static_cast<std::size_t>(k)], n);
  }

  /// Entry at `position` as the updater sees it: prefetched, in memory, or
  /// (a stage-discipline miss) read from the log.
  Entry fetch(std::uint64_t position) const {
    if (cache_) {
      if (const Entry* e = cache_->find(position)) {
        IoCounters::bump(counters_->cache_hits);
        return *e;
      }
    }
    if (!log_->is_durable(position)) {
      IoCounters::bump(counters_->in_block_hits);
      return log_->read_entry_at(position);
    }
    if (cache_) IoCounters::bump(counters_->cache_misses);
    return log_->read_entry_at(position);
  }

  /// Finds the active entry for `key`. Each fetched entry costs one read in
  /// the cost model; plain reads are only charged for log-resident entries.
  std::optional<Located> locate(ByteView key, unsigned& reads, OpKind kind) {
    for (auto p : index_->get(key)) {
      bool durable = log_->is_durable(p);
      Entry e = fetch(p);
      if (kind != OpKind::read) {
        ++reads;
      } else if (durable) {
        charge_reads(OpKind::read, 1);
        IoCounters::bump(counters_->read_ops_log_resident);
      }
      if (bytes_equal(e.key, key)) return Located{std::move(e), p};
    }
    return std::nullopt;
  }

  Located find_floor(ByteView key, bool inclusive, unsigned& reads, const Located* known) {
    return find_floor_impl(key, inclusive, reads, known, true);
  }

  /// Greatest active key <= key (inclusive) or < key.
  Located find_floor_impl(ByteView key, bool inclusive, unsigned& reads, const Located* known,
                          bool staged) const {
    auto bucket = index_->predecessor(key);
    while (true) {
      std::optional<Located> best;
      for (auto p : bucket.positions) {
        Entry e;
        if (known && known->position == p) {
          e = known->entry;
        } else {
          e = staged ? fetch(p) : log_->read_entry_at(p);
          ++reads;
        }
        bool ok = inclusive ? !lexicographic_less(key, e.key) : lexicographic_less(e.key, key);
        if (ok && (!best || lexicographic_less(best->entry.key, e.key))) {
          best = Located{std::move(e), p};
        }
      }
      if (best) return std::move(*best);
      bucket = index_->predecessor_below(bucket.prefix);
    }
  }

  Twig& twig(std::uint64_t t) {
    if (t < twig_base_) fail(ErrorCode::lifecycle, "twig " + std::to_string(t) + " is pruned");
    return twigs_.at(t - twig_base_);
  }

  std::uint64_t append(Entry e) {
    if (e.id != next_id_) fail(ErrorCode::consistency, "append with wrong id");
    auto pos = log_->stage(e);
    Digest leaf = leaf_hash(hasher_, log_->last_staged_frame());
    auto t = twig_of(e.id);
    auto r = twig(t).append_leaf(hasher_, leaf);
    if (r.became_full) twigs_.emplace_back(t + 1, options_.hash);
    dirty_.insert(t);
    ++next_id_;
    ++active_count_;
    return pos;
  }

  void deactivate(std::uint64_t id) {
    auto t = twig_of(id);
    twig(t).clear_active_bit(slot_of(id));
    dirty_.insert(t);
    --active_count_;
  }

  void maybe_compact(std::uint64_t version) {
    if (options_.compaction_threshold <= 0.0) return;
    for (unsigned moved = 0; moved < options_.compaction_step; ++moved) {
      const double slots = static_cast<double>(next_id_ - twig_base_ * kTwigLeaves);
      if (static_cast<double>(active_count_) >= options_.compaction_threshold * slots) return;
      advance_cursor();
      const std::uint64_t fresh = twig_of(next_id_);
      if (cursor_ >= next_id_ || twig_of(cursor_) == fresh ||
          twig(twig_of(cursor_)).state() == TwigState::fresh) {
        return;
      }
      auto pos = log_->position_of(cursor_);
      Entry old = log_->read_entry_at(pos);
      IoCounters::bump(counters_->compaction_reads);
      deactivate(old.id);
      Entry moved_entry{next_id_, old.key, old.value, old.next_key, old.id, old.old_next_key_id,
                        version};
      auto new_pos = append(std::move(moved_entry));
      IoCounters::bump(counters_->compaction_moves);
      index_->replace(old.key, pos, new_pos);
    }
  }

  /// Moves the compaction cursor to the oldest active entry.
  void advance_cursor() {
    cursor_ = std::max(cursor_, twig_base_ * kTwigLeaves);
    while (cursor_ < next_id_) {
      const Twig& t = twigs_[twig_of(cursor_) - twig_base_];
      if (t.state() == TwigState::inactive || t.active_bits().popcount() == 0) {
        cursor_ = (twig_of(cursor_) + 1) * kTwigLeaves;
        continue;
      }
      if (t.is_active(slot_of(cursor_))) return;
      ++cursor_;
    }
  }

  void prune_inactive() {
    const std::uint64_t flushed_twigs = log_->flushed_entries() / kTwigLeaves;
    while (twigs_.size() > 1 && twigs_.front().state() == TwigState::inactive &&
           twig_base_ < flushed_twigs && twig_base_ + 1 < upper_.twig_count()) {
      twigs_.front().prune();
      upper_.prune_twig(twig_base_);
      twigs_.pop_front();
      ++twig_base_;
    }
  }

  Digest twig_root_any(std::uint64_t t) const {
    if (t >= twig_base_) return twigs_[t - twig_base_].twig_root(hasher_);
    auto roots = log_->read_entry_roots(t, 1);
    return combine_twig_root(hasher_, roots.front(), active_bits_hash(hasher_, ActiveBits{}));
  }

  std::shared_ptr<const EntryTreeLevels> entry_levels(std::uint64_t t) const {
    const bool fresh = t >= twig_base_ && twigs_[t - twig_base_].state() == TwigState::fresh;
    const std::size_t count = fresh ? twigs_[t - twig_base_].leaf_count() : kTwigLeaves;
    std::lock_guard lock(levels_mu_);
    for (auto it = levels_lru_.begin(); it != levels_lru_.end(); ++it) {
      if (it->twig == t && it->leaf_count == count) {
        levels_lru_.splice(levels_lru_.begin(), levels_lru_, it);
        return levels_lru_.front().levels;
      }
    }
    std::vector<Digest> leaves;
    if (fresh) {
      auto l = twigs_[t - twig_base_].leaves();
      leaves.assign(l.begin(), l.end());
    } else {
      Bytes frames = log_->read_twig_frames(t);
      leaves.reserve(kTwigLeaves);
      std::size_t at = 0;
      while (at < frames.size()) {
        auto len = frame_length_from_header(ByteView(frames).subspan(at));
        leaves.push_back(leaf_hash(hasher_, ByteView(frames).subspan(at, len)));
        at += len;
      }
    }
    auto levels = std::make_shared<const EntryTreeLevels>(hasher_, leaves);
    levels_lru_.push_front({t, count, levels});
    if (levels_lru_.size() > kLevelsCacheSize) levels_lru_.pop_back();
    return levels;
  }

  void recover_impl(const fs::path& dir, std::uint64_t max_height,
                    EntryLog::RecoveryReport* report) {
    struct Ref {
      std::uint64_t id;
      std::uint64_t position;
    };
    StateReplayer<Ref> replay;
    std::vector<Digest> fresh_leaves;
    std::uint64_t count = 0;
    log_ = EntryLog::recover(
        dir, id_, options_.hash, *counters_, options_.sync, max_height,
        [&](const Entry& e, std::uint64_t position) {
          replay.apply(e, Ref{e.id, position});
          count = e.id + 1;
          fresh_leaves.push_back(leaf_hash(hasher_, e));
          if (fresh_leaves.size() == kTwigLeaves) fresh_leaves.clear();
        },
        report);
    if (count != log_->next_id()) fail(ErrorCode::corruption, "recovered entry count mismatch");
    if (count < 2) fail(ErrorCode::corruption, "shard " + std::to_string(id_) + " has no sentinels");

    const std::uint64_t full_twigs = count / kTwigLeaves;
    std::vector<ActiveBits> bits(full_twigs + 1);
    for (const auto& [key, ref] : replay.active()) {
      bits[twig_of(ref.id)].set(slot_of(ref.id));
      index_->put(key, ref.position);
    }
    active_count_ = replay.active().size();
    auto roots = log_->read_entry_roots(0, full_twigs);

    twigs_.clear();
    std::vector<TwigSeed> seeds;
    for (std::uint64_t t = 0; t < full_twigs; ++t) {
      twigs_.push_back(Twig::restore(t, roots[t], bits[t]));
      seeds.push_back(TwigSeed{roots[t], bits[t]});
    }
    Twig fresh(full_twigs, options_.hash);
    for (const auto& leaf : fresh_leaves) fresh.append_leaf(hasher_, leaf);
    std::uint64_t id = full_twigs * kTwigLeaves;
    for (std::size_t i = 0; i < fresh_leaves.size(); ++i, ++id) {
      if (!bits[full_twigs].test(slot_of(id))) fresh.clear_active_bit(slot_of(id));
    }
    if (fresh.leaf_count() > 0) {
      seeds.push_back(TwigSeed{fresh.entry_root(hasher_), fresh.active_bits()});
    }
    twigs_.push_back(std::move(fresh));
    next_id_ = count;

    std::uint64_t frontier = 0;
    while (frontier < full_twigs && frontier + 1 < seeds.size() &&
           twigs_[frontier].state() == TwigState::inactive) {
      ++frontier;
    }
    upper_ = rebuild_upper_tree(options_.hash, seeds, frontier);
    for (std::uint64_t t = 0; t < frontier; ++t) {
      twigs_.front().prune();
      twigs_.pop_front();
    }
    twig_base_ = frontier;
    cursor_ = twig_base_ * kTwigLeaves;
  }

  static constexpr std::size_t kLevelsCacheSize = 8;
  struct LevelsSlot {
    std::uint64_t twig;
    std::size_t leaf_count;
    std::shared_ptr<const EntryTreeLevels> levels;
  };

  std::uint32_t id_;
  ShardOptions options_;
  Hasher hasher_;
  IoCounters* counters_;
  Bytes lower_key_;
  Bytes upper_key_;
  std::unique_ptr<EntryLog> log_;
  std::unique_ptr<InMemoryIndexer> index_;
  std::deque<Twig> twigs_;
  std::uint64_t twig_base_ = 0;
  UpperTree upper_;
  std::set<std::uint64_t> dirty_;
  std::uint64_t next_id_ = 0;
  std::uint64_t active_count_ = 0;
  std::uint64_t cursor_ = 0;
  const EntryCache* cache_ = nullptr;

  mutable std::mutex levels_mu_;
  mutable std::list<LevelsSlot> levels_lru_;
};

}  // namespace twigstore
