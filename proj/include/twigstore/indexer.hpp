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

#include <absl/container/btree_set.h>

#include <array>
#include <atomic>
#include <bit>
#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <string>
#include <vector>

#include "twigstore/bytes.hpp"
#include "twigstore/error.hpp"

namespace twigstore {

inline constexpr std::size_t kIndexPrefixLen = 9;
inline constexpr std::uint64_t kMaxPosition = (std::uint64_t{1} << 48) - 1;

/// The 9 most significant bytes of a key, zero-padded for short keys.
using IndexPrefix = std::array<std::uint8_t, kIndexPrefixLen>;

inline IndexPrefix index_prefix(ByteView key) {
  IndexPrefix p{};
  std::copy_n(key.begin(), std::min(key.size(), kIndexPrefixLen), p.begin());
  return p;
}

/// Positions stored under one prefix; more than one means a prefix collision
/// that the caller resolves by reading the entries.
struct IndexBucket {
  IndexPrefix prefix{};
  std::vector<std::uint64_t> positions;
};

/// Ordered map from key prefixes to log positions. Alternative indexers (for
/// example one that spills to SSD) plug in behind this interface.
class Indexer {
 public:
  virtual ~Indexer() = default;

  virtual void put(ByteView key, std::uint64_t position) = 0;
  /// Replaces `old_position` with `new_position` for the same key.
  virtual void replace(ByteView key, std::uint64_t old_position, std::uint64_t new_position) = 0;
  virtual void erase(ByteView key, std::uint64_t position) = 0;
  virtual std::vector<std::uint64_t> get(ByteView key) const = 0;
  /// Greatest stored prefix <= prefix(key), with all of its positions.
  virtual IndexBucket predecessor(ByteView key) const = 0;
  /// Greatest stored prefix strictly below `prefix`.
  virtual IndexBucket predecessor_below(const IndexPrefix& prefix) const = 0;
  virtual std::size_t size() const = 0;
  virtual std::size_t memory_bytes() const = 0;
};

namespace detail {

/// Allocator that tallies live bytes into a shared counter.
template <typename T>
struct CountingAllocator {
  using value_type = T;

  explicit CountingAllocator(std::atomic<std::int64_t>* counter) noexcept : counter(counter) {}
  template <typename U>
  CountingAllocator(const CountingAllocator<U>& other) noexcept : counter(other.counter) {}

  T* allocate(std::size_t n) {
    counter->fetch_add(static_cast<std::int64_t>(n * sizeof(T)), std::memory_order_relaxed);
    return std::allocator<T>{}.allocate(n);
  }
  void deallocate(T* p, std::size_t n) noexcept {
    counter->fetch_sub(static_cast<std::int64_t>(n * sizeof(T)), std::memory_order_relaxed);
    std::allocator<T>{}.deallocate(p, n);
  }

  template <typename U>
  bool operator==(const CountingAllocator<U>& other) const noexcept {
    return counter == other.counter;
  }

  std::atomic<std::int64_t>* counter;
};

}  // namespace detail

/// Default in-memory indexer. The first two prefix bytes select a stripe with
/// its own reader-writer lock and B-tree; each B-tree slot packs the other
/// seven prefix bytes with a 48-bit big-endian position, so slots sort by
/// prefix and then by position and collisions need no extra structure.
class InMemoryIndexer final : public Indexer {
 public:
  /// Covers stripes [first_stripe, first_stripe + stripe_count).
  explicit InMemoryIndexer(std::uint32_t first_stripe = 0, std::uint32_t stripe_count = 65536)
      : first_stripe_(first_stripe), stripes_(stripe_count) {
    if (stripe_count == 0 || first_stripe + stripe_count > 65536) {
      fail(ErrorCode::configuration, "invalid indexer stripe range");
    }
    occupied_ = std::vector<std::atomic<std::uint64_t>>((stripe_count + 63) / 64);
    stripe_sets_.reserve(stripe_count);
    for (std::uint32_t i = 0; i < stripe_count; ++i) {
      stripe_sets_.emplace_back(SlotSet::key_compare(), Alloc(&node_bytes_));
    }
  }

  void put(ByteView key, std::uint64_t position) override {
    auto prefix = index_prefix(key);
    auto s = stripe_of(prefix);
    std::unique_lock lock(stripes_[s].mu);
    stripe_sets_[s].insert(make_slot(prefix, position));
    occupied_[s / 64].fetch_or(std::uint64_t{1} << (s % 64), std::memory_order_relaxed);
    ++size_;
  }

  void replace(ByteView key, std::uint64_t old_position, std::uint64_t new_position) override {
    auto prefix = index_prefix(key);
    auto s = stripe_of(prefix);
    std::unique_lock lock(stripes_[s].mu);
    if (stripe_sets_[s].erase(make_slot(prefix, old_position)) == 0) {
      fail(ErrorCode::consistency, "position " + std::to_string(old_position) + " not indexed");
    }
    stripe_sets_[s].insert(make_slot(prefix, new_position));
  }

  void erase(ByteView key, std::uint64_t position) override {
    auto prefix = index_prefix(key);
    auto s = stripe_of(prefix);
    std::unique_lock lock(stripes_[s].mu);
    if (stripe_sets_[s].erase(make_slot(prefix, position)) == 0) {
      fail(ErrorCode::consistency, "position " + std::to_string(position) + " not indexed");
    }
    if (stripe_sets_[s].empty()) {
      occupied_[s / 64].fetch_and(~(std::uint64_t{1} << (s % 64)), std::memory_order_relaxed);
    }
    --size_;
  }

  std::vector<std::uint64_t> get(ByteView key) const override {
    auto prefix = index_prefix(key);
    auto s = stripe_of(prefix);
    std::shared_lock lock(stripes_[s].mu);
    std::vector<std::uint64_t> out;
    const auto& set = stripe_sets_[s];
    for (auto it = set.lower_bound(make_slot(prefix, 0)); it != set.end(); ++it) {
      if (!same_prefix(*it, prefix)) break;
      out.push_back(slot_position(*it));
    }
    return out;
  }

  IndexBucket predecessor(ByteView key) const override {
    auto prefix = index_prefix(key);
    auto found = search_down(stripe_of(prefix), make_slot(prefix, kMaxPosition), true);
    if (!found) fail(ErrorCode::uninitialized_shard, "indexer has no predecessor entry");
    return *found;
  }

  IndexBucket predecessor_below(const IndexPrefix& prefix) const override {
    auto found = search_down(stripe_of(prefix), make_slot(prefix, 0), false);
    if (!found) fail(ErrorCode::uninitialized_shard, "indexer has no predecessor entry");
    return *found;
  }

  std::size_t size() const override { return size_.load(std::memory_order_relaxed); }

  std::size_t memory_bytes() const override {
    return sizeof(*this) + stripes_.size() * sizeof(Stripe) + occupied_.size() * 8 +
           stripe_sets_.capacity() * sizeof(SlotSet) +
           static_cast<std::size_t>(node_bytes_.load(std::memory_order_relaxed));
  }

 private:
  using Slot = std::array<std::uint8_t, 13>;
  using Alloc = detail::CountingAllocator<Slot>;
  using SlotSet = absl::btree_set<Slot, std::less<Slot>, Alloc>;

  struct Stripe {
    mutable std::shared_mutex mu;
  };

  static Slot make_slot(const IndexPrefix& prefix, std::uint64_t position) {
    if (position > kMaxPosition) {
      fail(ErrorCode::storage, "position exceeds 48 bits: " + std::to_string(position));
    }
    Slot s{};
    std::copy(prefix.begin() + 2, prefix.end(), s.begin());
    for (int i = 0; i < 6; ++i) {
      s[7 + i] = static_cast<std::uint8_t>(position >> (8 * (5 - i)));
    }
    return s;
  }

  static std::uint64_t slot_position(const Slot& s) {
    std::uint64_t p = 0;
    for (int i = 0; i < 6; ++i) p = (p << 8) | s[7 + i];
    return p;
  }

  static bool same_prefix(const Slot& s, const IndexPrefix& prefix) {
    return std::equal(s.begin(), s.begin() + 7, prefix.begin() + 2);
  }

  std::size_t stripe_of(const IndexPrefix& prefix) const {
    std::uint32_t raw = (std::uint32_t{prefix[0]} << 8) | prefix[1];
    if (raw < first_stripe_ || raw >= first_stripe_ + stripes_.size()) {
      fail(ErrorCode::shard_routing, "key prefix outside this indexer's stripe range");
    }
    return raw - first_stripe_;
  }

  IndexPrefix prefix_of(std::size_t stripe, const Slot& s) const {
    IndexPrefix p{};
    auto raw = static_cast<std::uint32_t>(stripe + first_stripe_);
    p[0] = static_cast<std::uint8_t>(raw >> 8);
    p[1] = static_cast<std::uint8_t>(raw);
    std::copy(s.begin(), s.begin() + 7, p.begin() + 2);
    return p;
  }

  static constexpr std::size_t kNoStripe = static_cast<std::size_t>(-1);

  /// Greatest non-empty stripe <= s.
  std::size_t highest_occupied(std::size_t s) const {
    std::size_t w = s / 64;
    std::uint64_t bits = occupied_[w].load(std::memory_order_relaxed);
    if (s % 64 != 63) bits &= (std::uint64_t{1} << (s % 64 + 1)) - 1;
    while (bits == 0) {
      if (w == 0) return kNoStripe;
      bits = occupied_[--w].load(std::memory_order_relaxed);
    }
    return w * 64 + 63 - static_cast<std::size_t>(std::countl_zero(bits));
  }

  /// Walks stripes downward from `start` for the greatest slot before (or at,
  /// when `inclusive`) `bound`, then gathers that prefix's whole bucket.
  std::optional<IndexBucket> search_down(std::size_t start, const Slot& bound,
                                         bool inclusive) const {
    for (std::size_t s = start + 1; s-- > 0;) {
      if (s != start) {
        s = highest_occupied(s);
        if (s == kNoStripe) break;
      }
      std::shared_lock lock(stripes_[s].mu);
      const auto& set = stripe_sets_[s];
      auto it = s == start ? (inclusive ? set.upper_bound(bound) : set.lower_bound(bound))
                           : set.end();
      if (it == set.begin()) continue;
      --it;
      IndexBucket bucket;
      bucket.prefix = prefix_of(s, *it);
      const Slot last = *it;
      while (true) {
        bucket.positions.push_back(slot_position(*it));
        if (it == set.begin()) break;
        --it;
        if (!std::equal(it->begin(), it->begin() + 7, last.begin())) break;
      }
      std::reverse(bucket.positions.begin(), bucket.positions.end());
      return bucket;
    }
    return std::nullopt;
  }

  std::uint32_t first_stripe_;
  std::vector<Stripe> stripes_;
  std::vector<SlotSet> stripe_sets_;
  std::vector<std::atomic<std::uint64_t>> occupied_;
  mutable std::atomic<std::int64_t> node_bytes_{0};
  std::atomic<std::size_t> size_{0};
};

}  // namespace twigstore
