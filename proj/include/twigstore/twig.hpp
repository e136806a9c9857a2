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
#include <bit>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "twigstore/error.hpp"
#include "twigstore/hash.hpp"

namespace twigstore {

inline constexpr std::size_t kTwigDepth = 11;
inline constexpr std::size_t kTwigLeaves = std::size_t{1} << kTwigDepth;
inline constexpr std::size_t kActiveBitsBytes = kTwigLeaves / 8;

inline constexpr std::uint64_t twig_of(std::uint64_t id) { return id >> kTwigDepth; }
inline constexpr std::uint32_t slot_of(std::uint64_t id) {
  return static_cast<std::uint32_t>(id & (kTwigLeaves - 1));
}

/// One bit per leaf slot of a twig.
class ActiveBits {
 public:
  bool test(std::size_t slot) const { return (bytes_.at(slot / 8) >> (slot % 8)) & 1u; }
  void set(std::size_t slot) { bytes_.at(slot / 8) |= static_cast<std::uint8_t>(1u << (slot % 8)); }
  void clear(std::size_t slot) {
    bytes_.at(slot / 8) &= static_cast<std::uint8_t>(~(1u << (slot % 8)));
  }

  std::size_t popcount() const {
    std::size_t n = 0;
    for (auto b : bytes_) n += static_cast<std::size_t>(std::popcount(b));
    return n;
  }

  std::span<const std::uint8_t, kActiveBitsBytes> bytes() const { return bytes_; }
  std::span<std::uint8_t, kActiveBitsBytes> mutable_bytes() { return bytes_; }

  bool operator==(const ActiveBits&) const = default;

 private:
  std::array<std::uint8_t, kActiveBitsBytes> bytes_{};
};

inline Digest active_bits_hash(const Hasher& h, const ActiveBits& bits) {
  return h(tag::active_bits, bits.bytes());
}

inline Digest combine_twig_root(const Hasher& h, const Digest& entry_root, const Digest& bits_hash) {
  return h(tag::twig, entry_root, bits_hash);
}

inline Digest twig_root_of(const Hasher& h, const Digest& entry_root, const ActiveBits& bits) {
  return combine_twig_root(h, entry_root, active_bits_hash(h, bits));
}

/// Root of the depth-11 tree over `leaves`; missing slots are null.
inline Digest compute_entry_root(const Hasher& h, std::span<const Digest> leaves) {
  if (leaves.size() > kTwigLeaves) {
    fail(ErrorCode::capacity, "twig holds at most 2048 leaves, got " + std::to_string(leaves.size()));
  }
  const auto& nulls = NullDigests::get(h.algorithm());
  std::vector<Digest> level(leaves.begin(), leaves.end());
  for (std::size_t depth = 0; depth < kTwigDepth; ++depth) {
    if (level.empty()) return nulls.entry_level(kTwigDepth);
    std::vector<Digest> parent((level.size() + 1) / 2);
    for (std::size_t i = 0; i < parent.size(); ++i) {
      const Digest& right = 2 * i + 1 < level.size() ? level[2 * i + 1] : nulls.entry_level(depth);
      parent[i] = h.node(level[2 * i], right);
    }
    level = std::move(parent);
  }
  return level.empty() ? nulls.entry_level(kTwigDepth) : level.front();
}

/// All node levels of a twig's entry tree (level 0 = leaves), with missing
/// nodes left out; used to cut Merkle paths.
class EntryTreeLevels {
 public:
  EntryTreeLevels(const Hasher& h, std::span<const Digest> leaves)
      : nulls_(&NullDigests::get(h.algorithm())) {
    if (leaves.size() > kTwigLeaves) fail(ErrorCode::capacity, "too many leaves");
    levels_.emplace_back(leaves.begin(), leaves.end());
    for (std::size_t depth = 0; depth < kTwigDepth; ++depth) {
      const auto& below = levels_.back();
      std::vector<Digest> parent((below.size() + 1) / 2);
      for (std::size_t i = 0; i < parent.size(); ++i) {
        const Digest& right =
            2 * i + 1 < below.size() ? below[2 * i + 1] : nulls_->entry_level(depth);
        parent[i] = h.node(below[2 * i], right);
      }
      levels_.push_back(std::move(parent));
    }
  }

  std::size_t leaf_count() const { return levels_.front().size(); }

  Digest root() const {
    return levels_.back().empty() ? nulls_->entry_level(kTwigDepth) : levels_.back().front();
  }

  std::array<Digest, kTwigDepth> path(std::size_t slot) const {
    std::array<Digest, kTwigDepth> out{};
    std::size_t idx = slot;
    for (std::size_t depth = 0; depth < kTwigDepth; ++depth) {
      std::size_t sibling = idx ^ 1u;
      const auto& level = levels_[depth];
      out[depth] = sibling < level.size() ? level[sibling] : nulls_->entry_level(depth);
      idx >>= 1;
    }
    return out;
  }

 private:
  const NullDigests* nulls_;
  std::vector<std::vector<Digest>> levels_;
};

/// Append-only entry tree that keeps one pending left sibling per level, so
/// appends cost amortized O(1) hashes and the root costs 11.
class IncrementalEntryTree {
 public:
  explicit IncrementalEntryTree(HashAlgorithm algo) : algo_(algo) {}

  std::size_t size() const noexcept { return size_; }

  void append(const Hasher& h, const Digest& leaf) {
    if (size_ >= kTwigLeaves) fail(ErrorCode::capacity, "entry tree is full");
    ++size_;
    Digest node = leaf;
    std::size_t n = size_;
    for (std::size_t depth = 0; depth < kTwigDepth; ++depth) {
      if (n & 1u) {
        frontier_[depth] = node;
        return;
      }
      node = h.node(frontier_[depth], node);
      n >>= 1;
    }
    full_root_ = node;
  }

  Digest root(const Hasher& h) const {
    if (size_ == kTwigLeaves) return full_root_;
    const auto& nulls = NullDigests::get(algo_);
    Digest node = nulls.entry_level(0);
    std::size_t n = size_;
    for (std::size_t depth = 0; depth < kTwigDepth; ++depth) {
      if (n & 1u) {
        node = h.node(frontier_[depth], node);
      } else {
        node = h.node(node, nulls.entry_level(depth));
      }
      n >>= 1;
    }
    return node;
  }

 private:
  HashAlgorithm algo_;
  std::size_t size_ = 0;
  std::array<Digest, kTwigDepth> frontier_{};
  Digest full_root_{};
};

enum class TwigState : std::uint8_t { fresh, full, inactive, pruned };

inline const char* to_string(TwigState s) {
  switch (s) {
    case TwigState::fresh: return "fresh";
    case TwigState::full: return "full";
    case TwigState::inactive: return "inactive";
    case TwigState::pruned: return "pruned";
  }
  return "?";
}

/// A 2048-leaf subtree: entry root, active bits and lifecycle state. Leaf
/// digests are only held while the twig is Fresh.
class Twig {
 public:
  struct AppendResult {
    std::uint32_t slot;
    bool became_full;
  };

  Twig(std::uint64_t index, HashAlgorithm algo)
      : index_(index), fresh_(std::make_unique<FreshLeaves>(algo)) {}

  /// Rebuilds a flushed twig from persisted metadata.
  static Twig restore(std::uint64_t index, const Digest& entry_root, const ActiveBits& bits) {
    Twig t(index);
    t.entry_root_ = entry_root;
    t.bits_ = bits;
    t.state_ = bits.popcount() == 0 ? TwigState::inactive : TwigState::full;
    return t;
  }

  std::uint64_t index() const noexcept { return index_; }
  TwigState state() const noexcept { return state_; }
  const ActiveBits& active_bits() const {
    require_not_pruned("active_bits");
    return bits_;
  }
  std::size_t leaf_count() const noexcept {
    return state_ == TwigState::fresh ? fresh_->tree.size() : kTwigLeaves;
  }
  bool is_active(std::uint32_t slot) const { return state_ != TwigState::pruned && bits_.test(slot); }

  /// Leaf digests; only available while Fresh.
  std::span<const Digest> leaves() const {
    if (!fresh_) fail(ErrorCode::lifecycle, "leaf digests are released once a twig is full");
    return fresh_->leaves;
  }

  AppendResult append_leaf(const Hasher& h, const Digest& leaf) {
    if (state_ != TwigState::fresh) {
      fail(ErrorCode::lifecycle,
           "append to twig " + std::to_string(index_) + " in state " + to_string(state_));
    }
    auto slot = static_cast<std::uint32_t>(fresh_->tree.size());
    fresh_->tree.append(h, leaf);
    fresh_->leaves.push_back(leaf);
    bits_.set(slot);
    if (fresh_->tree.size() == kTwigLeaves) {
      entry_root_ = fresh_->tree.root(h);
      state_ = TwigState::full;
      fresh_.reset();
      return {slot, true};
    }
    return {slot, false};
  }

  /// Returns true when the twig just became Inactive.
  bool clear_active_bit(std::uint32_t slot) {
    if (state_ != TwigState::fresh && state_ != TwigState::full) {
      fail(ErrorCode::lifecycle,
           "clear bit on twig " + std::to_string(index_) + " in state " + to_string(state_));
    }
    if (slot >= kTwigLeaves) fail(ErrorCode::capacity, "slot out of range");
    if (!bits_.test(slot)) {
      fail(ErrorCode::double_deactivation, "twig " + std::to_string(index_) + " slot " +
                                               std::to_string(slot) + " is already inactive");
    }
    bits_.clear(slot);
    if (state_ == TwigState::full && bits_.popcount() == 0) {
      state_ = TwigState::inactive;
      return true;
    }
    return false;
  }

  Digest entry_root(const Hasher& h) const {
    require_not_pruned("entry_root");
    return state_ == TwigState::fresh ? fresh_->tree.root(h) : entry_root_;
  }

  Digest twig_root(const Hasher& h) const {
    require_not_pruned("twig_root");
    return twig_root_of(h, entry_root(h), bits_);
  }

  void prune() {
    if (state_ != TwigState::inactive) {
      fail(ErrorCode::pruning_violation,
           "twig " + std::to_string(index_) + " is " + to_string(state_) + ", not inactive");
    }
    state_ = TwigState::pruned;
  }

  /// Metadata bytes held by this twig object, including fresh leaf storage.
  std::size_t memory_bytes() const {
    std::size_t n = sizeof(Twig);
    if (fresh_) n += sizeof(FreshLeaves) + fresh_->leaves.capacity() * sizeof(Digest);
    return n;
  }

 private:
  struct FreshLeaves {
    explicit FreshLeaves(HashAlgorithm algo) : tree(algo) { leaves.reserve(64); }
    IncrementalEntryTree tree;
    std::vector<Digest> leaves;
  };

  explicit Twig(std::uint64_t index) : index_(index), state_(TwigState::full) {}

  void require_not_pruned(const char* what) const {
    if (state_ == TwigState::pruned) {
      fail(ErrorCode::lifecycle, std::string(what) + " of pruned twig " + std::to_string(index_));
    }
  }

  std::uint64_t index_;
  Digest entry_root_{};
  ActiveBits bits_;
  TwigState state_ = TwigState::fresh;
  std::unique_ptr<FreshLeaves> fresh_;
};

}  // namespace twigstore
